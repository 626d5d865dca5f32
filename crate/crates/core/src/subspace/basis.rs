use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::MatrixRecord;
use crate::linalg::{normalize_signs, orthonormality_defect, random_orthonormal};
use crate::samples::{seeded_rng, streams};

/// Tolerance on `‖W^T W - I‖_F` accepted for a basis.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    Input,
    Output,
}

/// An `n × k` matrix with orthonormal columns living in the input or the
/// output space.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthonormalBasis {
    matrix: DMatrix<f64>,
    space: Space,
}

impl OrthonormalBasis {
    /// Validates orthonormality and stores the matrix as given (no sign change).
    pub fn new(matrix: DMatrix<f64>, space: Space) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.ncols() > matrix.nrows() {
            return Err(Error::RankOutOfRange {
                what: "basis columns",
                value: matrix.ncols(),
                max: matrix.nrows(),
            });
        }
        let deviation = orthonormality_defect(&matrix);
        if !(deviation <= ORTHONORMAL_TOL) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { matrix, space })
    }

    /// Like [`OrthonormalBasis::new`] but applies the sign convention
    /// (largest-magnitude entry of each column positive).
    pub fn normalized(mut matrix: DMatrix<f64>, space: Space) -> Result<Self> {
        normalize_signs(&mut matrix);
        Self::new(matrix, space)
    }

    pub fn identity(n: usize, space: Space) -> Self {
        Self {
            matrix: DMatrix::identity(n, n),
            space,
        }
    }

    /// `[e_i]_{i ∈ indices}` (0-based), in the given order.
    pub fn canonical(n: usize, indices: &[usize], space: Space) -> Result<Self> {
        let mut m = DMatrix::zeros(n, indices.len());
        for (c, &i) in indices.iter().enumerate() {
            if i >= n {
                return Err(Error::InvalidArgument(format!("index {i} out of range for dimension {n}")));
            }
            m[(i, c)] = 1.0;
        }
        Self::new(m, space)
    }

    /// Canonical selector of the contiguous window `start..start+len`.
    pub fn window(n: usize, start: usize, len: usize, space: Space) -> Result<Self> {
        let idx: Vec<usize> = (start..start + len).collect();
        Self::canonical(n, &idx, space)
    }

    /// Seeded Haar-random basis (QR of a Gaussian matrix).
    pub fn random(n: usize, k: usize, seed: u64, space: Space) -> Result<Self> {
        if k == 0 || k > n {
            return Err(Error::RankOutOfRange {
                what: "basis columns",
                value: k,
                max: n,
            });
        }
        let mut rng = seeded_rng(seed, streams::INIT_BASIS);
        Self::new(random_orthonormal(&mut rng, n, k)?, space)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    /// Orthonormal basis of the orthogonal complement (empty when full rank).
    pub fn complement(&self) -> Option<Self> {
        let (n, k) = self.matrix.shape();
        if k == n {
            return None;
        }
        // Complete the basis by projecting canonical vectors, in index order.
        let mut cols: Vec<nalgebra::DVector<f64>> = self.matrix.column_iter().map(|c| c.into_owned()).collect();
        let mut extra = Vec::new();
        for i in 0..n {
            if extra.len() == n - k {
                break;
            }
            let mut v = nalgebra::DVector::zeros(n);
            v[i] = 1.0;
            for _ in 0..2 {
                for q in &cols {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            let nv = v.norm();
            if nv > 1e-8 {
                let q = v / nv;
                cols.push(q.clone());
                extra.push(q);
            }
        }
        let mut m = DMatrix::from_columns(&extra);
        normalize_signs(&mut m);
        Some(Self { matrix: m, space: self.space })
    }

    pub fn to_record(&self) -> MatrixRecord {
        MatrixRecord::from_matrix(&self.matrix)
    }
}
