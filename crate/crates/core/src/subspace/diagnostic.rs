//! Monte Carlo assembly of the diagnostic matrices
//! `H_X(V) = E[J^T V V^T J]` and `H_Y(U) = E[J U U^T J^T]`.
//!
//! Reductions over samples run in index order with a fixed chunking, so a
//! given sample set always produces bit-identical matrices.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::basis::{OrthonormalBasis, Space};
use crate::error::{check_dim, Error, Result};
use crate::io::MatrixRecord;
use crate::samples::JacobianSampleSet;

const CHUNK: usize = 32;

/// Symmetric PSD diagnostic matrix together with the basis it was
/// conditioned on.
#[derive(Debug, Clone)]
pub struct DiagnosticMatrix {
    matrix: DMatrix<f64>,
    conditioning: OrthonormalBasis,
    sample_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticRecord {
    pub space: Space,
    pub sample_count: usize,
    pub matrix: MatrixRecord,
    pub conditioning: MatrixRecord,
}

impl DiagnosticMatrix {
    /// Wraps an already-assembled matrix; symmetry is enforced by averaging
    /// with the transpose.
    pub fn from_parts(matrix: DMatrix<f64>, conditioning: OrthonormalBasis, sample_count: usize) -> Self {
        let matrix = crate::linalg::symmetrize(&matrix);
        Self {
            matrix,
            conditioning,
            sample_count,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn conditioning(&self) -> &OrthonormalBasis {
        &self.conditioning
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.matrix.diagonal()
    }

    /// `Tr(W^T H W)`.
    pub fn projected_trace(&self, w: &DMatrix<f64>) -> f64 {
        (w.transpose() * &self.matrix * w).trace()
    }

    /// Space of the matrix itself (opposite of the conditioning basis).
    pub fn space(&self) -> Space {
        match self.conditioning.space() {
            Space::Input => Space::Output,
            Space::Output => Space::Input,
        }
    }

    pub fn to_record(&self) -> DiagnosticRecord {
        DiagnosticRecord {
            space: self.space(),
            sample_count: self.sample_count,
            matrix: MatrixRecord::from_matrix(&self.matrix),
            conditioning: self.conditioning.to_record(),
        }
    }
}

fn check_nonempty(samples: &JacobianSampleSet) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    Ok(())
}

/// Per-sample projected factors for one chunk, computed concurrently and
/// returned in index order.
fn chunk_factors<F>(range: std::ops::Range<usize>, f: F) -> Result<Vec<DMatrix<f64>>>
where
    F: Fn(usize) -> Result<DMatrix<f64>> + Sync,
{
    range
        .into_par_iter()
        .map(&f)
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// `(1/M) Σ F_i F_i^T` for per-sample factors `F_i`, reduced chunk by chunk.
fn gram_sum<F>(samples: &JacobianSampleSet, n: usize, factor: F) -> Result<DMatrix<f64>>
where
    F: Fn(usize) -> Result<DMatrix<f64>> + Sync,
{
    let count = samples.len();
    let mut acc = DMatrix::zeros(n, n);
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        let factors = chunk_factors(start..end, &factor)?;
        let width: usize = factors.iter().map(|f| f.ncols()).sum();
        let mut stacked = DMatrix::zeros(n, width);
        let mut offset = 0;
        for f in &factors {
            stacked.columns_mut(offset, f.ncols()).copy_from(f);
            offset += f.ncols();
        }
        acc.gemm(1.0, &stacked, &stacked.transpose(), 1.0);
        start = end;
    }
    Ok(acc / count as f64)
}

/// `H_X(V_s) = (1/M) Σ J_i^T V_s V_s^T J_i` (`d × d`).
pub fn assemble_hx(samples: &JacobianSampleSet, v_s: &OrthonormalBasis) -> Result<DiagnosticMatrix> {
    check_nonempty(samples)?;
    check_dim("V_s rows vs output dimension", samples.output_dim(), v_s.dim())?;
    let v = v_s.matrix();
    let h = gram_sum(samples, samples.input_dim(), |i| samples.apply_adjoint(i, v))?;
    Ok(DiagnosticMatrix::from_parts(h, v_s.clone(), samples.len()))
}

/// `H_Y(U_r) = (1/M) Σ J_i U_r U_r^T J_i^T` (`m × m`).
pub fn assemble_hy(samples: &JacobianSampleSet, u_r: &OrthonormalBasis) -> Result<DiagnosticMatrix> {
    check_nonempty(samples)?;
    check_dim("U_r rows vs input dimension", samples.input_dim(), u_r.dim())?;
    let u = u_r.matrix();
    let h = gram_sum(samples, samples.output_dim(), |i| samples.apply(i, u))?;
    Ok(DiagnosticMatrix::from_parts(h, u_r.clone(), samples.len()))
}

/// Row sums of squares of per-sample factors, averaged over samples.
fn row_energy<F>(samples: &JacobianSampleSet, n: usize, factor: F) -> Result<DVector<f64>>
where
    F: Fn(usize) -> Result<DMatrix<f64>> + Sync,
{
    let count = samples.len();
    let mut acc = DVector::zeros(n);
    let mut start = 0;
    while start < count {
        let end = (start + CHUNK).min(count);
        for f in chunk_factors(start..end, &factor)? {
            for (i, row) in f.row_iter().enumerate() {
                acc[i] += row.norm_squared();
            }
        }
        start = end;
    }
    Ok(acc / count as f64)
}

/// Diagonal of `H_Y(U_r)` without forming the matrix:
/// entry `j` is `(1/M) Σ ‖U_r^T J_i^T e_j‖²`.
pub fn diag_hy(samples: &JacobianSampleSet, u_r: &OrthonormalBasis) -> Result<DVector<f64>> {
    check_nonempty(samples)?;
    check_dim("U_r rows vs input dimension", samples.input_dim(), u_r.dim())?;
    let u = u_r.matrix();
    row_energy(samples, samples.output_dim(), |i| samples.apply(i, u))
}

/// Diagonal of `H_X(V_s)`: entry `k` is `(1/M) Σ ‖V_s^T J_i e_k‖²`.
pub fn diag_hx(samples: &JacobianSampleSet, v_s: &OrthonormalBasis) -> Result<DVector<f64>> {
    check_nonempty(samples)?;
    check_dim("V_s rows vs output dimension", samples.output_dim(), v_s.dim())?;
    let v = v_s.matrix();
    row_energy(samples, samples.input_dim(), |i| samples.apply_adjoint(i, v))
}

/// `v ↦ (1/M) Σ J_i (U_r U_r^T (J_i^T v))` using only tangent and adjoint
/// actions.
pub fn matfree_apply_hy(samples: &JacobianSampleSet, u_r: &OrthonormalBasis, v: &DVector<f64>) -> Result<DVector<f64>> {
    check_nonempty(samples)?;
    check_dim("U_r rows vs input dimension", samples.input_dim(), u_r.dim())?;
    check_dim("vector length vs output dimension", samples.output_dim(), v.len())?;
    let u = u_r.matrix();
    let terms = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let w = samples.apply_adjoint_vec(i, v)?;
            let p = u * u.tr_mul(&w);
            samples.apply_vec(i, &p)
        })
        .collect::<Vec<_>>();
    let mut acc = DVector::zeros(samples.output_dim());
    for t in terms {
        acc += t?;
    }
    Ok(acc / samples.len() as f64)
}

/// `u ↦ (1/M) Σ J_i^T (V_s V_s^T (J_i u))`.
pub fn matfree_apply_hx(samples: &JacobianSampleSet, v_s: &OrthonormalBasis, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_nonempty(samples)?;
    check_dim("V_s rows vs output dimension", samples.output_dim(), v_s.dim())?;
    check_dim("vector length vs input dimension", samples.input_dim(), u.len())?;
    let v = v_s.matrix();
    let terms = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let w = samples.apply_vec(i, u)?;
            let p = v * v.tr_mul(&w);
            samples.apply_adjoint_vec(i, &p)
        })
        .collect::<Vec<_>>();
    let mut acc = DVector::zeros(samples.input_dim());
    for t in terms {
        acc += t?;
    }
    Ok(acc / samples.len() as f64)
}

/// Bound objective `(1/M) Σ ‖V_s^T J_i U_r‖_F²`.
pub fn bound_objective(samples: &JacobianSampleSet, u_r: &OrthonormalBasis, v_s: &OrthonormalBasis) -> Result<f64> {
    check_nonempty(samples)?;
    check_dim("U_r rows vs input dimension", samples.input_dim(), u_r.dim())?;
    check_dim("V_s rows vs output dimension", samples.output_dim(), v_s.dim())?;
    let (u, v) = (u_r.matrix(), v_s.matrix());
    let terms = (0..samples.len())
        .into_par_iter()
        .map(|i| Ok(v.tr_mul(&samples.apply(i, u)?).norm_squared()))
        .collect::<Vec<Result<f64>>>();
    let mut acc = 0.0;
    for t in terms {
        acc += t?;
    }
    Ok(acc / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::basis::Space;

    fn two_samples() -> JacobianSampleSet {
        JacobianSampleSet::from_dense(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
        ])
        .unwrap()
    }

    #[test]
    fn identity_jacobian_examples() {
        let s = JacobianSampleSet::from_dense(vec![DMatrix::identity(2, 2)]).unwrap();
        let e1 = OrthonormalBasis::canonical(2, &[0], Space::Output).unwrap();
        let hx = assemble_hx(&s, &e1).unwrap();
        assert_eq!(hx.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        let e2 = OrthonormalBasis::canonical(2, &[1], Space::Input).unwrap();
        let hy = assemble_hy(&s, &e2).unwrap();
        assert_eq!(hy.matrix(), &DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn hand_computed_two_sample_example() {
        // J1^T e1 e1^T J1 = diag(1,0); J2^T e1 e1^T J2 = diag(0,1); mean = 0.5 I.
        let s = two_samples();
        let e1_out = OrthonormalBasis::canonical(2, &[0], Space::Output).unwrap();
        let hx = assemble_hx(&s, &e1_out).unwrap();
        assert_eq!(hx.matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        // J1 e1 = (1,0), J2 e1 = (0,1): mean of outer products = 0.5 I.
        let e1_in = OrthonormalBasis::canonical(2, &[0], Space::Input).unwrap();
        let hy = assemble_hy(&s, &e1_in).unwrap();
        assert_eq!(hy.matrix(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
    }

    #[test]
    fn full_output_basis_gives_joint_matrix() {
        let s = two_samples();
        let hx = assemble_hx(&s, &OrthonormalBasis::identity(2, Space::Output)).unwrap();
        let js = s.dense_all().unwrap();
        let expected = (js[0].transpose() * &js[0] + js[1].transpose() * &js[1]) / 2.0;
        assert!((hx.matrix() - expected).norm() < 1e-15);
    }

    #[test]
    fn diagonal_trivial_cases() {
        let id = JacobianSampleSet::from_dense(vec![DMatrix::identity(3, 3); 4]).unwrap();
        let d = diag_hy(&id, &OrthonormalBasis::identity(3, Space::Input)).unwrap();
        assert_eq!(d, DVector::from_element(3, 1.0));
        let zero = JacobianSampleSet::from_dense(vec![DMatrix::zeros(3, 2); 2]).unwrap();
        let d = diag_hx(&zero, &OrthonormalBasis::identity(3, Space::Output)).unwrap();
        assert_eq!(d, DVector::zeros(2));
    }

    #[test]
    fn matfree_trivial_cases() {
        let id = JacobianSampleSet::from_dense(vec![DMatrix::identity(3, 3)]).unwrap();
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let full = OrthonormalBasis::identity(3, Space::Input);
        assert_eq!(matfree_apply_hy(&id, &full, &v).unwrap(), v);
        assert_eq!(matfree_apply_hy(&id, &full, &DVector::zeros(3)).unwrap(), DVector::zeros(3));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = two_samples();
        let wrong = OrthonormalBasis::identity(3, Space::Output);
        assert!(matches!(assemble_hx(&s, &wrong), Err(Error::DimensionMismatch { .. })));
    }
}
