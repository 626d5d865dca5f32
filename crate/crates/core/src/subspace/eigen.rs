//! Truncated eigendecompositions of diagnostic matrices.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::basis::{OrthonormalBasis, Space};
use super::diagnostic::DiagnosticMatrix;
use crate::error::{Error, Result};
use crate::io::MatrixRecord;
use crate::linalg::{lanczos_top, sym_eig_desc};
use crate::samples::{seeded_rng, streams};

/// Solver selection for the truncated eigenproblems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Dimensions above this use the matrix-free Lanczos path.
    pub dense_threshold: usize,
    /// Residual tolerance relative to the dominant eigenvalue.
    pub tolerance: f64,
    /// Seed for the Lanczos start vector.
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            dense_threshold: 2000,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

/// Dominant eigenpairs, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: DVector<f64>,
    vectors: OrthonormalBasis,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumRecord {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: MatrixRecord,
}

impl Spectrum {
    pub fn new(values: DVector<f64>, vectors: OrthonormalBasis) -> Result<Self> {
        if values.len() != vectors.rank() {
            return Err(Error::DimensionMismatch {
                context: "eigenvalue count vs eigenvector count",
                expected: vectors.rank(),
                actual: values.len(),
            });
        }
        Ok(Self { values, vectors })
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn vectors(&self) -> &OrthonormalBasis {
        &self.vectors
    }

    pub fn into_basis(self) -> OrthonormalBasis {
        self.vectors
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn to_record(&self) -> SpectrumRecord {
        SpectrumRecord {
            eigenvalues: self.values.iter().copied().collect(),
            eigenvectors: self.vectors.to_record(),
        }
    }
}

/// `k` dominant eigenpairs of a dense symmetric PSD matrix.
///
/// Rows and columns that are exactly zero are deflated before the
/// eigensolve, so eigenvectors carry exact zeros there. This keeps
/// structural zeros (e.g. causality) intact in the returned basis.
pub fn top_eigenbasis(h: &DiagnosticMatrix, k: usize) -> Result<Spectrum> {
    top_eigen_dense(h.matrix(), k, h.space())
}

pub(crate) fn top_eigen_dense(h: &DMatrix<f64>, k: usize, space: Space) -> Result<Spectrum> {
    let n = h.nrows();
    if k == 0 || k > n {
        return Err(Error::RankOutOfRange { what: "k", value: k, max: n });
    }
    let active: Vec<usize> = (0..n)
        .filter(|&i| (0..n).any(|j| h[(i, j)] != 0.0 || h[(j, i)] != 0.0))
        .collect();
    let inactive: Vec<usize> = (0..n).filter(|i| !active.contains(i)).collect();

    let (vals, vecs) = if active.len() == n {
        sym_eig_desc(h)
    } else {
        let sub = DMatrix::from_fn(active.len(), active.len(), |a, b| h[(active[a], active[b])]);
        let (sub_vals, sub_vecs) = if active.is_empty() {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        } else {
            sym_eig_desc(&sub)
        };
        // Active eigenpairs first (PSD: all >= 0 up to roundoff), then the
        // deflated zero eigenvalues with canonical vectors.
        let mut vals = Vec::with_capacity(n);
        let mut vecs = DMatrix::zeros(n, n);
        let mut col = 0;
        let mut pending: Vec<(f64, DVector<f64>)> = Vec::new();
        for c in 0..active.len() {
            let mut v = DVector::zeros(n);
            for (a, &i) in active.iter().enumerate() {
                v[i] = sub_vecs[(a, c)];
            }
            pending.push((sub_vals[c], v));
        }
        for &i in &inactive {
            let mut v = DVector::zeros(n);
            v[i] = 1.0;
            pending.push((0.0, v));
        }
        // Stable sort keeps active-before-inactive for equal eigenvalues.
        pending.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        for (val, v) in pending {
            vals.push(val);
            vecs.set_column(col, &v);
            col += 1;
        }
        (DVector::from_vec(vals), vecs)
    };
    let values = DVector::from_iterator(k, vals.iter().take(k).copied());
    let basis = OrthonormalBasis::new(vecs.columns(0, k).into_owned(), space)?;
    Spectrum::new(values, basis)
}

/// `k` dominant eigenpairs of an operator known only through products.
pub fn top_eigenbasis_operator<F>(n: usize, k: usize, apply: F, space: Space, options: &EigenOptions) -> Result<Spectrum>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut rng = seeded_rng(options.seed, streams::LANCZOS);
    let (vals, vecs) = lanczos_top(n, k, apply, &mut rng, options.tolerance.max(1e-12))?;
    // Lanczos vectors are orthonormal to working precision; re-orthonormalize
    // to meet the basis tolerance exactly.
    let q = crate::linalg::orthonormalize(&vecs)?;
    let mut q = q;
    crate::linalg::normalize_signs(&mut q);
    Spectrum::new(vals, OrthonormalBasis::new(q, space)?)
}
