//! JSON matrix records and small CSV helpers used by the CLI outputs.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense matrix as a dimension header plus a row-major float64 array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(m[(i, j)]);
            }
        }
        Self { rows, cols, data }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::DimensionMismatch {
                context: "matrix record data length",
                expected: self.rows * self.cols,
                actual: self.data.len(),
            });
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Column-labelled CSV table of float64 values with optional text columns.
#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_f64(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| fmt_f64(v)).collect());
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.header.join(","));
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Shortest round-trip representation of a float64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// One CSV column per basis vector: `index, <prefix>1, <prefix>2, ...`.
pub fn matrix_columns_csv(m: &DMatrix<f64>, prefix: &str) -> CsvTable {
    let mut header = vec!["index".to_string()];
    header.extend((1..=m.ncols()).map(|j| format!("{prefix}{j}")));
    let mut table = CsvTable::new(header);
    for i in 0..m.nrows() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(m.row(i).iter().map(|&v| fmt_f64(v)));
        table.push(row);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn record_is_row_major() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let rec = MatrixRecord::from_matrix(&m);
        assert_eq!(rec.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(json, r#"{"rows":2,"cols":3,"data":[1.0,2.0,3.0,4.0,5.0,6.0]}"#);
    }

    #[test]
    fn bad_record_length_is_rejected() {
        let rec = MatrixRecord { rows: 2, cols: 2, data: vec![1.0] };
        assert!(rec.to_matrix().is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let m = DMatrix::from_fn(rows, cols, |i, j| ((seed as f64) * 1e-9 + i as f64 * 0.37 - j as f64 * 1.3).sin());
            let rec = MatrixRecord::from_matrix(&m);
            let back: MatrixRecord = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
            prop_assert_eq!(back.to_matrix().unwrap(), m);
        }

        #[test]
        fn float_text_round_trips(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
            prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
