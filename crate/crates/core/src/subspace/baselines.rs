//! Reference subspaces: PCA on either side, CCA, and joint dimension
//! reduction (each side reduced against the full other side).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::alternating::{optimal_ur, optimal_vs};
use super::basis::{OrthonormalBasis, Space};
use super::bounds::full_svd;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{effective_rank, orthonormalize, sample_covariance, sym_eig_desc};
use crate::samples::JacobianSampleSet;

/// Relative eigenvalue threshold used to report the effective data rank.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    PcaInput,
    PcaOutput,
    Cca,
    JointDr,
}

impl BaselineKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::PcaInput => "pca-input",
            Self::PcaOutput => "pca-output",
            Self::Cca => "cca",
            Self::JointDr => "joint-dr",
        }
    }
}

/// Dominant principal directions of the rows of `data` (`N × n`).
pub fn pca(data: &DMatrix<f64>, k: usize, space: Space) -> Result<(OrthonormalBasis, DVector<f64>)> {
    let n = data.ncols();
    if data.nrows() < 2 {
        return Err(Error::EmptySamples);
    }
    if k == 0 || k > n {
        return Err(Error::RankOutOfRange { what: "k", value: k, max: n });
    }
    let (vals, vecs) = sym_eig_desc(&sample_covariance(data));
    let effective = effective_rank(vals.as_slice(), RANK_TOL);
    if effective < k {
        return Err(Error::RankDeficient { requested: k, effective });
    }
    let basis = OrthonormalBasis::new(vecs.columns(0, k).into_owned(), space)?;
    Ok((basis, DVector::from_iterator(k, vals.iter().take(k).copied())))
}

/// PCA of prior input draws (rows of `x`).
pub fn pca_input(x: &DMatrix<f64>, r: usize) -> Result<(OrthonormalBasis, DVector<f64>)> {
    pca(x, r, Space::Input)
}

/// PCA of output draws (rows of `y`).
pub fn pca_output(y: &DMatrix<f64>, s: usize) -> Result<(OrthonormalBasis, DVector<f64>)> {
    pca(y, s, Space::Output)
}

#[derive(Debug, Clone)]
pub struct CcaResult {
    pub u_r: OrthonormalBasis,
    pub v_s: OrthonormalBasis,
    /// Canonical correlations, descending, `min(d, m)` of them.
    pub correlations: Vec<f64>,
}

/// Canonical correlation analysis on paired rows of `x` (`N × d`) and
/// `y` (`N × m`).
///
/// The canonical directions are not orthogonal in the Euclidean inner
/// product, so the returned bases span the leading `r` (resp. `s`)
/// directions after QR. `ridge` is added to both covariances relative to
/// their mean eigenvalue.
pub fn cca(x: &DMatrix<f64>, y: &DMatrix<f64>, r: usize, s: usize, ridge: f64) -> Result<CcaResult> {
    check_dim("paired sample count", x.nrows(), y.nrows())?;
    let (n, d, m) = (x.nrows(), x.ncols(), y.ncols());
    if n < 2 {
        return Err(Error::EmptySamples);
    }
    if r == 0 || r > d {
        return Err(Error::RankOutOfRange { what: "r", value: r, max: d });
    }
    if s == 0 || s > m {
        return Err(Error::RankOutOfRange { what: "s", value: s, max: m });
    }
    let mut joint = DMatrix::zeros(n, d + m);
    joint.columns_mut(0, d).copy_from(x);
    joint.columns_mut(d, m).copy_from(y);
    let c = sample_covariance(&joint);
    let cxx = c.view((0, 0), (d, d)).into_owned();
    let cyy = c.view((d, d), (m, m)).into_owned();
    let cxy = c.view((0, d), (d, m)).into_owned();

    let wx = inverse_sqrt(&cxx, ridge, r)?;
    let wy = inverse_sqrt(&cyy, ridge, s)?;
    let k = &wx * cxy * &wy;
    let (sigma, left, right) = full_svd(&k);
    let a = &wx * left.columns(0, r);
    let b = &wy * right.columns(0, s);
    Ok(CcaResult {
        u_r: OrthonormalBasis::normalized(orthonormalize(&a)?, Space::Input)?,
        v_s: OrthonormalBasis::normalized(orthonormalize(&b)?, Space::Output)?,
        correlations: sigma,
    })
}

fn inverse_sqrt(c: &DMatrix<f64>, ridge: f64, requested: usize) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eig_desc(c);
    let effective = effective_rank(vals.as_slice(), RANK_TOL);
    if effective < requested {
        return Err(Error::RankDeficient { requested, effective });
    }
    let shift = ridge * vals.iter().sum::<f64>() / vals.len() as f64;
    let scaled = DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&l| {
            let l = l.max(0.0) + shift;
            if l > 0.0 {
                1.0 / l.sqrt()
            } else {
                0.0
            }
        }),
    );
    Ok(&vecs * DMatrix::from_diagonal(&scaled) * vecs.transpose())
}

/// Joint dimension reduction: `U_r` from `H_X(I_m)`, `V_s` from `H_Y(I_d)`.
pub fn joint_dr(samples: &JacobianSampleSet, r: usize, s: usize) -> Result<(OrthonormalBasis, OrthonormalBasis)> {
    let (u, _) = optimal_ur(samples, &OrthonormalBasis::identity(samples.output_dim(), Space::Output), r)?;
    let (v, _) = optimal_vs(samples, &OrthonormalBasis::identity(samples.input_dim(), Space::Input), s)?;
    Ok((u, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::standard_normal_matrix;
    use crate::samples::{seeded_rng, streams};

    #[test]
    fn cca_identity_model_is_perfectly_correlated() {
        let mut rng = seeded_rng(3, streams::OUTPUT_SAMPLES);
        let x = standard_normal_matrix(&mut rng, 200, 3);
        let res = cca(&x, &x, 2, 2, 0.0).unwrap();
        for c in &res.correlations {
            assert!((c - 1.0).abs() < 1e-10, "{c}");
        }
    }

    #[test]
    fn pca_of_constant_data_reports_rank() {
        let y = DMatrix::from_element(10, 3, 2.0);
        assert!(matches!(pca_output(&y, 1), Err(Error::RankDeficient { effective: 0, .. })));
    }

    #[test]
    fn pca_output_of_scaled_coordinates() {
        let mut rng = seeded_rng(5, streams::OUTPUT_SAMPLES);
        let mut y = standard_normal_matrix(&mut rng, 500, 3);
        y.column_mut(1).scale_mut(10.0);
        let (v, _) = pca_output(&y, 1).unwrap();
        assert!(v.matrix()[(1, 0)] > 0.99);
    }

    #[test]
    fn joint_dr_matches_optimal_ur_with_identity() {
        let samples = JacobianSampleSet::from_dense(vec![DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, 3.0, 1.0])]).unwrap();
        let (u, _) = joint_dr(&samples, 1, 1).unwrap();
        let (u2, _) = optimal_ur(&samples, &OrthonormalBasis::identity(2, Space::Output), 1).unwrap();
        assert!((u.matrix() - u2.matrix()).norm() < 1e-10);
    }
}
