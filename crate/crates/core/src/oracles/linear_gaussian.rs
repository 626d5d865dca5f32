//! Exact Gaussian algebra for `Y = a + M X + η`, `X ~ N(μ, Σ)`,
//! `η ~ N(0, σ² I)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{spd_inverse, spd_logdet, spd_solve, symmetrize};
use crate::prior::{GaussianPrior, NoiseModel};
use crate::subspace::OrthonormalBasis;

/// Posterior of `X` given `y_* = V_*^T Y`.
#[derive(Debug, Clone)]
pub struct LinearGaussianPosterior {
    prior_mean: DVector<f64>,
    /// `V_*^T a + V_*^T M μ`.
    data_mean: DVector<f64>,
    /// `Σ A^T E^{-1}` with `A = V_*^T M`.
    gain: DMatrix<f64>,
    posterior_cov: DMatrix<f64>,
    goal_posterior_cov: DMatrix<f64>,
    /// `E = A Σ A^T + σ² I`.
    evidence_cov: DMatrix<f64>,
}

impl LinearGaussianPosterior {
    pub fn new(
        offset: &DVector<f64>,
        matrix: &DMatrix<f64>,
        prior: &GaussianPrior,
        noise: &NoiseModel,
        design: &DMatrix<f64>,
        goal: &DMatrix<f64>,
    ) -> Result<Self> {
        check_dim("offset length", matrix.nrows(), offset.len())?;
        check_dim("matrix columns vs prior", prior.dim(), matrix.ncols())?;
        check_dim("design rows", matrix.nrows(), design.nrows())?;
        check_dim("goal rows", prior.dim(), goal.nrows())?;
        let sigma = prior.covariance();
        let a = design.transpose() * matrix;
        let sat = sigma * a.transpose();
        let mut evidence_cov = symmetrize(&(&a * &sat));
        for i in 0..evidence_cov.nrows() {
            evidence_cov[(i, i)] += noise.variance();
        }
        let gain = spd_solve(&evidence_cov, &sat.transpose(), "evidence covariance")?.transpose();
        let posterior_cov = symmetrize(&(sigma - &gain * sat.transpose()));
        let goal_posterior_cov = symmetrize(&(goal.transpose() * &posterior_cov * goal));
        Ok(Self {
            prior_mean: prior.mean().clone(),
            data_mean: design.transpose() * offset + &a * prior.mean(),
            gain,
            posterior_cov,
            goal_posterior_cov,
            evidence_cov,
        })
    }

    /// Posterior mean for observed `y_*`.
    pub fn mean(&self, y_star: &DVector<f64>) -> DVector<f64> {
        &self.prior_mean + &self.gain * (y_star - &self.data_mean)
    }

    pub fn posterior_cov(&self) -> &DMatrix<f64> {
        &self.posterior_cov
    }

    /// `U_r^T Σ_post U_r`.
    pub fn goal_posterior_cov(&self) -> &DMatrix<f64> {
        &self.goal_posterior_cov
    }

    pub fn evidence_cov(&self) -> &DMatrix<f64> {
        &self.evidence_cov
    }
}

/// Closed-form quantities for a design `V_*` (also used as `V_s`) and a
/// goal `U_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearGaussianForms {
    /// `Φ(V_*) = ½ log det(I + σ⁻² V_*^T M Σ M^T V_*)`.
    pub eig: f64,
    /// `Φ(V_* | U_r) = ½ (log det Σ_r − log det Σ_{r|y})`.
    pub goal_eig: f64,
    /// `Φ(I_m)`.
    pub full_eig: f64,
    /// `E_Y KL(π_{X|Y} ‖ π̃_{X|Y})` for the `(U_r, V_*)`-reduced posterior.
    pub expected_kl: f64,
    /// `E‖G − G*‖²` for the `(U_r, V_*)` pair.
    pub l2_error: f64,
}

fn eig_of(matrix: &DMatrix<f64>, sigma: &DMatrix<f64>, noise_var: f64, design: &DMatrix<f64>) -> Result<f64> {
    let a = design.transpose() * matrix;
    let k = a.nrows();
    let mut e = symmetrize(&(&a * sigma * a.transpose()));
    e /= noise_var;
    for i in 0..k {
        e[(i, i)] += 1.0;
    }
    Ok(0.5 * spd_logdet(&e, "information matrix")?)
}

pub fn linear_gaussian_closed_forms(
    offset: &DVector<f64>,
    matrix: &DMatrix<f64>,
    prior: &GaussianPrior,
    noise: &NoiseModel,
    design: &OrthonormalBasis,
    goal: &OrthonormalBasis,
) -> Result<LinearGaussianForms> {
    let m = matrix.nrows();
    check_dim("noise dimension", m, noise.dim())?;
    let sigma = prior.covariance();
    let s2 = noise.variance();
    let v = design.matrix();
    let u = goal.matrix();

    let eig = eig_of(matrix, sigma, s2, v)?;
    let full_eig = eig_of(matrix, sigma, s2, &DMatrix::identity(m, m))?;

    let reduced = LinearGaussianPosterior::new(offset, matrix, prior, noise, v, u)?;
    let goal_cov = symmetrize(&(u.transpose() * sigma * u));
    let goal_eig = 0.5
        * (spd_logdet(&goal_cov, "goal-marginal prior covariance")?
            - spd_logdet(reduced.goal_posterior_cov(), "goal-marginal posterior covariance")?);

    // E[G | U^T X] has covariance M Σ U Σ_r^{-1} U^T Σ M^T.
    let goal_cov_inv = spd_inverse(&goal_cov, "goal-marginal prior covariance")?;
    let a = v.transpose() * matrix;
    let asu = &a * sigma * u;
    let l2_error = (matrix * sigma * matrix.transpose()).trace() - (&asu * &goal_cov_inv * asu.transpose()).trace();

    let expected_kl = expected_reduced_kl(matrix, sigma, s2, v, u, &goal_cov_inv)?;
    Ok(LinearGaussianForms {
        eig,
        goal_eig,
        full_eig,
        expected_kl,
        l2_error: l2_error.max(0.0),
    })
}

/// Expected KL from the full posterior to `π̃ ∝ π_{Y_s|X_r} π_X`.
///
/// Given `X_r = U^T X`, `X = μ + K(x_r − U^T μ) + ξ_⊥` with
/// `K = Σ U Σ_r^{-1}` and `ξ_⊥ ~ N(0, C_⊥)`, `C_⊥ = Σ − K U^T Σ`, so the
/// reduced likelihood is `y_s ~ N(c + B x, S)` with `B = A K U^T`,
/// `S = A C_⊥ A^T + σ² I`. Both posteriors are Gaussian with means affine
/// in `y`, and the difference of means is centred.
fn expected_reduced_kl(
    matrix: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    s2: f64,
    v: &DMatrix<f64>,
    u: &DMatrix<f64>,
    goal_cov_inv: &DMatrix<f64>,
) -> Result<f64> {
    let (m, d) = matrix.shape();
    let k = v.ncols();
    let a = v.transpose() * matrix;
    let kgain = sigma * u * goal_cov_inv;
    let c_perp = symmetrize(&(sigma - &kgain * u.transpose() * sigma));
    let b = &a * &kgain * u.transpose();
    let mut s = symmetrize(&(&a * &c_perp * a.transpose()));
    for i in 0..k {
        s[(i, i)] += s2;
    }

    // Full posterior: gain G1 on y, covariance Σ1.
    let sm = sigma * matrix.transpose();
    let mut f = symmetrize(&(matrix * &sm));
    for i in 0..m {
        f[(i, i)] += s2;
    }
    let g1 = spd_solve(&f, &sm.transpose(), "full evidence covariance")?.transpose();
    let cov1 = symmetrize(&(sigma - &g1 * sm.transpose()));

    // Reduced posterior: gain G2 on y_s, covariance Σ2.
    let sb = sigma * b.transpose();
    let e2 = symmetrize(&(&b * &sb + &s));
    let g2 = spd_solve(&e2, &sb.transpose(), "reduced evidence covariance")?.transpose();
    let cov2 = symmetrize(&(sigma - &g2 * sb.transpose()));

    let cov2_inv = spd_inverse(&cov2, "reduced posterior covariance")?;
    let logdet2 = spd_logdet(&cov2, "reduced posterior covariance")?;
    let logdet1 = spd_logdet(&cov1, "posterior covariance")?;

    let diff = &g1 - &g2 * v.transpose();
    let quad = (diff.transpose() * &cov2_inv * &diff * &f).trace();
    let kl = 0.5 * ((&cov2_inv * &cov1).trace() - d as f64 + logdet2 - logdet1 + quad);
    if !kl.is_finite() {
        return Err(Error::SingularMatrix("expected KL"));
    }
    Ok(kl)
}
