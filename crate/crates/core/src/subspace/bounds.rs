//! Gradient-based upper and lower bounds on the L2 error of the optimal
//! reduced model, and the closed form for affine models.

use nalgebra::DMatrix;
use serde::Serialize;

use super::basis::{OrthonormalBasis, Space};
use super::diagnostic::bound_objective;
use crate::error::{check_dim, Error, Result};
use crate::linalg::normalize_signs;
use crate::prior::GaussianPrior;
use crate::samples::JacobianSampleSet;

/// Certified bracket for `E‖G(X) - G*(X)‖²`:
///
/// ```text
/// upper = C̄ (E‖J‖_F² - E‖V^T J U‖_F²)
/// lower = c̄ (‖J̄‖_F² - ‖V^T J̄ U‖_F²)
/// ```
#[derive(Debug, Clone, Serialize)]
pub struct ErrorSandwich {
    pub upper: f64,
    pub lower: f64,
    /// `E‖V^T J U‖_F²`.
    pub bound_objective: f64,
    /// `E‖J‖_F²`.
    pub total_gradient_energy: f64,
    #[serde(skip)]
    pub mean_jacobian: DMatrix<f64>,
}

/// Evaluates both bounds from Monte Carlo Jacobian samples.
pub fn error_sandwich(
    samples: &JacobianSampleSet,
    u_r: &OrthonormalBasis,
    v_s: &OrthonormalBasis,
    prior: &GaussianPrior,
) -> Result<ErrorSandwich> {
    check_dim("prior vs input dimension", samples.input_dim(), prior.dim())?;
    let mean_jacobian = samples.mean_jacobian()?;
    let total = samples.total_gradient_energy()?;
    let objective = bound_objective(samples, u_r, v_s)?;
    Ok(sandwich_from_parts(
        mean_jacobian,
        total,
        objective,
        u_r,
        v_s,
        prior.poincare_constant(),
        prior.cramer_rao_constant(),
    ))
}

/// Same bounds when `J̄`, `E‖J‖²` and the bound objective are already known.
pub fn sandwich_from_parts(
    mean_jacobian: DMatrix<f64>,
    total_gradient_energy: f64,
    bound_objective: f64,
    u_r: &OrthonormalBasis,
    v_s: &OrthonormalBasis,
    poincare: f64,
    cramer_rao: f64,
) -> ErrorSandwich {
    let projected_mean = (v_s.matrix().transpose() * &mean_jacobian * u_r.matrix()).norm_squared();
    // Both gaps are nonnegative in exact arithmetic; clamp roundoff.
    let upper = poincare * (total_gradient_energy - bound_objective).max(0.0);
    let lower = cramer_rao * (mean_jacobian.norm_squared() - projected_mean).max(0.0);
    ErrorSandwich {
        upper,
        lower,
        bound_objective,
        total_gradient_energy,
        mean_jacobian,
    }
}

/// Optimal bases and exact error for `G(x) = a + M x` with standard-normal input.
#[derive(Debug, Clone)]
pub struct AffineSolution {
    pub u_r: OrthonormalBasis,
    pub v_s: OrthonormalBasis,
    pub singular_values: Vec<f64>,
    /// `Σ_{i > min(r, s)} σ_i² = ‖M‖_F² - ‖V_s^T M U_r‖_F²`.
    pub exact_error: f64,
}

/// Dominant right / left singular vectors of `M`.
pub fn affine_closed_form(m: &DMatrix<f64>, r: usize, s: usize) -> Result<AffineSolution> {
    let (rows, cols) = m.shape();
    if r == 0 || r > cols {
        return Err(Error::RankOutOfRange { what: "r", value: r, max: cols });
    }
    if s == 0 || s > rows {
        return Err(Error::RankOutOfRange { what: "s", value: s, max: rows });
    }
    let (sigma, left, right) = full_svd(m);
    let mut u = right.columns(0, r).into_owned();
    let mut v = left.columns(0, s).into_owned();
    normalize_signs(&mut u);
    normalize_signs(&mut v);
    let kept = r.min(s);
    let exact_error = sigma.iter().skip(kept).map(|x| x * x).sum();
    Ok(AffineSolution {
        u_r: OrthonormalBasis::new(u, Space::Input)?,
        v_s: OrthonormalBasis::new(v, Space::Output)?,
        singular_values: sigma,
        exact_error,
    })
}

/// Singular values (descending, padded with zeros to `max(m, d)` is not
/// needed) with complete left (`m × m`) and right (`d × d`) singular bases.
pub(crate) fn full_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>, DMatrix<f64>) {
    // Eigendecompositions of M^T M and M M^T give complete bases, which the
    // thin SVD does not when r or s exceeds min(m, d).
    let (rows, cols) = m.shape();
    let (_, right) = crate::linalg::sym_eig_desc(&(m.transpose() * m));
    let mut left = DMatrix::zeros(rows, rows);
    let k = rows.min(cols);
    let mut sigma = Vec::with_capacity(k);
    let mut filled = 0;
    for j in 0..k {
        let mv = m * right.column(j);
        let sv = mv.norm();
        sigma.push(sv);
        if sv > 1e-12 * sigma[0].max(f64::MIN_POSITIVE) {
            left.set_column(j, &(mv / sv));
            filled += 1;
        } else {
            break;
        }
    }
    sigma.resize(k, 0.0);
    for j in sigma.len()..k {
        sigma[j] = 0.0;
    }
    if filled < rows {
        // Complete with eigenvectors of M M^T orthogonalized against the filled part.
        let (_, mmt) = crate::linalg::sym_eig_desc(&(m * m.transpose()));
        let mut col = filled;
        for c in 0..rows {
            if col == rows {
                break;
            }
            let mut v = mmt.column(c).into_owned();
            for _ in 0..2 {
                for j in 0..col {
                    let q = left.column(j).into_owned();
                    let proj = q.dot(&v);
                    v.axpy(-proj, &q, 1.0);
                }
            }
            let nv = v.norm();
            if nv > 1e-8 {
                left.set_column(col, &(v / nv));
                col += 1;
            }
        }
    }
    (sigma, left, right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    #[test]
    fn diagonal_closed_form() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let sol = affine_closed_form(&m, 1, 1).unwrap();
        assert!((sol.exact_error - 1.0).abs() < 1e-14);
        assert!((sol.u_r.matrix()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((sol.v_s.matrix()[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn full_ranks_have_zero_error() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, 4.0, -1.0]);
        let sol = affine_closed_form(&m, 2, 3).unwrap();
        assert!(sol.exact_error.abs() < 1e-12);
        let direct = m.norm_squared() - (sol.v_s.matrix().transpose() * &m * sol.u_r.matrix()).norm_squared();
        assert!(direct.abs() < 1e-12);
    }

    #[test]
    fn full_rank_sandwich_is_zero() {
        let samples = JacobianSampleSet::from_dense(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.5]),
        ])
        .unwrap();
        let s = error_sandwich(
            &samples,
            &OrthonormalBasis::identity(2, Space::Input),
            &OrthonormalBasis::identity(2, Space::Output),
            &GaussianPrior::standard(2),
        )
        .unwrap();
        assert!(s.upper.abs() < 1e-12 && s.lower.abs() < 1e-12);
    }
}
