//! Goal-oriented optimal bases and the alternating eigendecomposition for
//! the coupled problem `max E‖V^T J U‖_F²`.

use serde::Serialize;

use super::basis::{OrthonormalBasis, Space};
use super::diagnostic::{assemble_hx, assemble_hy, matfree_apply_hx, matfree_apply_hy};
use super::eigen::{top_eigenbasis, top_eigenbasis_operator, EigenOptions, Spectrum};
use crate::error::{check_dim, Error, Result};
use crate::io::MatrixRecord;
use crate::samples::JacobianSampleSet;

/// Default iteration cap for the alternation.
pub const DEFAULT_MAX_ITER: usize = 10;
/// Default relative-stall tolerance for the alternation.
pub const DEFAULT_STALL_TOL: f64 = 1e-10;

/// `V_s^*(U_r)`: dominant `s` eigenvectors of `H_Y(U_r)`.
pub fn optimal_vs(samples: &JacobianSampleSet, u_r: &OrthonormalBasis, s: usize) -> Result<(OrthonormalBasis, Spectrum)> {
    optimal_vs_with(samples, u_r, s, &EigenOptions::default())
}

pub fn optimal_vs_with(
    samples: &JacobianSampleSet,
    u_r: &OrthonormalBasis,
    s: usize,
    options: &EigenOptions,
) -> Result<(OrthonormalBasis, Spectrum)> {
    let m = samples.output_dim();
    if s == 0 || s > m {
        return Err(Error::RankOutOfRange { what: "s", value: s, max: m });
    }
    let spectrum = if m > options.dense_threshold {
        check_dim("U_r rows vs input dimension", samples.input_dim(), u_r.dim())?;
        top_eigenbasis_operator(m, s, |v| matfree_apply_hy(samples, u_r, v), Space::Output, options)?
    } else {
        top_eigenbasis(&assemble_hy(samples, u_r)?, s)?
    };
    Ok((spectrum.vectors().clone(), spectrum))
}

/// `U_r^*(V_s)`: dominant `r` eigenvectors of `H_X(V_s)`.
pub fn optimal_ur(samples: &JacobianSampleSet, v_s: &OrthonormalBasis, r: usize) -> Result<(OrthonormalBasis, Spectrum)> {
    optimal_ur_with(samples, v_s, r, &EigenOptions::default())
}

pub fn optimal_ur_with(
    samples: &JacobianSampleSet,
    v_s: &OrthonormalBasis,
    r: usize,
    options: &EigenOptions,
) -> Result<(OrthonormalBasis, Spectrum)> {
    let d = samples.input_dim();
    if r == 0 || r > d {
        return Err(Error::RankOutOfRange { what: "r", value: r, max: d });
    }
    let spectrum = if d > options.dense_threshold {
        check_dim("V_s rows vs output dimension", samples.output_dim(), v_s.dim())?;
        top_eigenbasis_operator(d, r, |u| matfree_apply_hx(samples, v_s, u), Space::Input, options)?
    } else {
        top_eigenbasis(&assemble_hx(samples, v_s)?, r)?
    };
    Ok((spectrum.vectors().clone(), spectrum))
}

/// Result of the alternating eigendecomposition.
#[derive(Debug, Clone)]
pub struct SubspacePair {
    pub u_r: OrthonormalBasis,
    pub v_s: OrthonormalBasis,
    /// Bound objective `Tr(V^T H_Y(U) V)` after every half-step (U-update,
    /// then V-update, ...).
    pub objective_history: Vec<f64>,
    /// Completed full iterations.
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubspacePairRecord {
    pub u_r: MatrixRecord,
    pub v_s: MatrixRecord,
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

impl SubspacePair {
    pub fn objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&0.0)
    }

    pub fn to_record(&self) -> SubspacePairRecord {
        SubspacePairRecord {
            u_r: self.u_r.to_record(),
            v_s: self.v_s.to_record(),
            objective_history: self.objective_history.clone(),
            iterations: self.iterations,
        }
    }
}

/// Alternates `U ← U^*(V)`, `V ← V^*(U)` from `v_init`, recording the bound
/// objective after each half-step. Stops after `max_iter` full iterations or
/// when an iteration changes the objective by less than `stall_tol`
/// relative to its current value.
pub fn alternating_decomposition(
    samples: &JacobianSampleSet,
    r: usize,
    s: usize,
    v_init: &OrthonormalBasis,
    max_iter: usize,
    stall_tol: f64,
) -> Result<SubspacePair> {
    alternating_decomposition_with(samples, r, s, v_init, max_iter, stall_tol, &EigenOptions::default())
}

pub fn alternating_decomposition_with(
    samples: &JacobianSampleSet,
    r: usize,
    s: usize,
    v_init: &OrthonormalBasis,
    max_iter: usize,
    stall_tol: f64,
    options: &EigenOptions,
) -> Result<SubspacePair> {
    let (d, m) = (samples.input_dim(), samples.output_dim());
    if r == 0 || r > d {
        return Err(Error::RankOutOfRange { what: "r", value: r, max: d });
    }
    if s == 0 || s > m {
        return Err(Error::RankOutOfRange { what: "s", value: s, max: m });
    }
    if v_init.dim() != m || v_init.rank() != s || v_init.space() != Space::Output {
        return Err(Error::InvalidArgument(format!(
            "initial V_s must be an output-space {m}×{s} basis, got {}×{}",
            v_init.dim(),
            v_init.rank()
        )));
    }
    if max_iter == 0 {
        return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
    }

    let mut v = v_init.clone();
    let mut u = OrthonormalBasis::identity(d, Space::Input);
    let mut history = Vec::with_capacity(2 * max_iter);
    let mut iterations = 0;
    let mut previous: Option<f64> = None;
    while iterations < max_iter {
        let (u_next, spec_x) = optimal_ur_with(samples, &v, r, options)?;
        history.push(spec_x.sum());
        let (v_next, spec_y) = optimal_vs_with(samples, &u_next, s, options)?;
        let objective = spec_y.sum();
        history.push(objective);
        u = u_next;
        v = v_next;
        iterations += 1;
        if let Some(prev) = previous {
            let scale = objective.abs().max(f64::MIN_POSITIVE);
            if (objective - prev).abs() <= stall_tol * scale {
                break;
            }
        }
        previous = Some(objective);
    }
    Ok(SubspacePair {
        u_r: u,
        v_s: v,
        objective_history: history,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn diag_samples(entries: &[f64]) -> JacobianSampleSet {
        JacobianSampleSet::from_dense(vec![DMatrix::from_diagonal(&DVector::from_column_slice(entries))]).unwrap()
    }

    #[test]
    fn diagonal_affine_goal_solutions_are_canonical() {
        let samples = diag_samples(&[5.0, 2.0, 1.0]);
        let (v, _) = optimal_vs(&samples, &OrthonormalBasis::identity(3, Space::Input), 2).unwrap();
        assert!((v.matrix() - DMatrix::<f64>::identity(3, 3).columns(0, 2)).norm() < 1e-14);
        let (u, _) = optimal_ur(&samples, &OrthonormalBasis::identity(3, Space::Output), 2).unwrap();
        assert!((u.matrix() - DMatrix::<f64>::identity(3, 3).columns(0, 2)).norm() < 1e-14);
    }

    #[test]
    fn full_rank_alternation_stops_immediately() {
        let samples = diag_samples(&[4.0, 3.0]);
        let init = OrthonormalBasis::random(2, 2, 1, Space::Output).unwrap();
        let pair = alternating_decomposition(&samples, 2, 2, &init, 10, 1e-10).unwrap();
        assert!((pair.objective() - 25.0).abs() < 1e-12);
        assert!(pair.iterations <= 2);
    }

    #[test]
    fn invalid_init_is_rejected() {
        let samples = diag_samples(&[4.0, 3.0, 1.0]);
        let bad = OrthonormalBasis::random(3, 1, 1, Space::Output).unwrap();
        assert!(alternating_decomposition(&samples, 2, 2, &bad, 10, 1e-10).is_err());
        let wrong_space = OrthonormalBasis::random(3, 2, 1, Space::Input).unwrap();
        assert!(alternating_decomposition(&samples, 2, 2, &wrong_space, 10, 1e-10).is_err());
    }

    #[test]
    fn rank_bounds_checked() {
        let samples = diag_samples(&[4.0, 3.0]);
        assert!(matches!(
            optimal_vs(&samples, &OrthonormalBasis::identity(2, Space::Input), 3),
            Err(Error::RankOutOfRange { .. })
        ));
        assert!(matches!(
            optimal_ur(&samples, &OrthonormalBasis::identity(2, Space::Output), 0),
            Err(Error::RankOutOfRange { .. })
        ));
    }
}
