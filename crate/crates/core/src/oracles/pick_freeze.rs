//! Pick-freeze estimators of conditional-expectation variances.
//!
//! All estimators here draw pairs `(X, X')` that share some linear
//! functional of the input and are otherwise independent, which requires a
//! standard-normal input. Precondition a model first if its prior is not
//! standard.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{mean_and_stderr, MCEstimate};
use crate::error::{check_dim, Error, Result};
use crate::linalg::standard_normal_vector;
use crate::model::Model;
use crate::prior::GaussianPrior;
use crate::samples::{forward_batch, seeded_rng, streams};
use crate::subspace::OrthonormalBasis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SobolKind {
    Closed,
    Total,
}

fn check_setup(model: &dyn Model, prior: &GaussianPrior, n_pairs: usize) -> Result<()> {
    if !prior.is_standard() {
        return Err(Error::NotWhitened);
    }
    check_dim("model input vs prior", prior.dim(), model.input_dim())?;
    if n_pairs < 2 {
        return Err(Error::InvalidArgument(format!("at least 2 pairs required, got {n_pairs}")));
    }
    Ok(())
}

/// Evaluates the model on `n` base draws and their partners. `partner`
/// builds the partner from the base and an independent draw.
/// Base and partner outputs, one entry per pair.
type Pairs = (Vec<DVector<f64>>, Vec<DVector<f64>>);

fn paired_outputs<F>(model: &dyn Model, d: usize, n: usize, seed: u64, partner: F) -> Result<Pairs>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let mut rng = seeded_rng(seed, streams::PICK_FREEZE);
    let mut inputs = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let x = standard_normal_vector(&mut rng, d);
        let fresh = standard_normal_vector(&mut rng, d);
        let xp = partner(&x, &fresh);
        inputs.push(x);
        inputs.push(xp);
    }
    let outputs = forward_batch(model, &inputs)?;
    let mut base = Vec::with_capacity(n);
    let mut paired = Vec::with_capacity(n);
    for (i, y) in outputs.into_iter().enumerate() {
        if i % 2 == 0 {
            base.push(y);
        } else {
            paired.push(y);
        }
    }
    Ok((base, paired))
}

fn grand_mean(a: &[DVector<f64>], b: &[DVector<f64>]) -> DVector<f64> {
    let mut mean = DVector::zeros(a[0].len());
    for y in a.iter().chain(b) {
        mean += y;
    }
    mean / (a.len() + b.len()) as f64
}

/// Estimates `E‖G(X) − G*(X)‖² = Tr Cov G − Tr(V^T Cov(E[G | U^T X]) V)`.
///
/// Each pair contributes `½(‖a‖² + ‖b‖²) − ⟨V^T a, V^T b⟩` with `a, b` the
/// centred outputs at `X` and `X̃ = U U^T X + (I − U U^T) ξ`.
pub fn conditional_expectation_error(
    model: &dyn Model,
    prior: &GaussianPrior,
    u_r: &OrthonormalBasis,
    v_s: &OrthonormalBasis,
    n_pairs: usize,
    seed: u64,
) -> Result<MCEstimate> {
    check_setup(model, prior, n_pairs)?;
    let d = prior.dim();
    check_dim("U_r rows", d, u_r.dim())?;
    check_dim("V_s rows", model.output_dim(), v_s.dim())?;
    let u = u_r.matrix();
    let (base, paired) = paired_outputs(model, d, n_pairs, seed, |x, xi| {
        let diff = x - xi;
        xi + u * u.tr_mul(&diff)
    })?;
    let mean = grand_mean(&base, &paired);
    let v = v_s.matrix();
    let terms: Vec<f64> = base
        .iter()
        .zip(&paired)
        .map(|(ya, yb)| {
            let a = ya - &mean;
            let b = yb - &mean;
            0.5 * (a.norm_squared() + b.norm_squared()) - v.tr_mul(&a).dot(&v.tr_mul(&b))
        })
        .collect();
    let (value, standard_error) = mean_and_stderr(&terms);
    Ok(MCEstimate {
        value,
        standard_error,
        outer_samples: n_pairs,
        inner_samples: 0,
        seed,
    })
}

/// Goal-oriented closed or total Sobol' index of the coordinates `tau`
/// (0-based) for the output directions `V_s`.
///
/// The closed index freezes `τ` and correlates the two outputs; the total
/// index freezes the complement and uses the Jansen difference form,
/// `½ E‖V^T(G(X) − G(X''))‖²`. Both are ratios to the variance estimated on
/// the same pairs; the standard error comes from the delta method. The raw
/// (unclipped) ratio is returned.
pub fn sobol_pick_freeze(
    model: &dyn Model,
    prior: &GaussianPrior,
    v_s: &OrthonormalBasis,
    tau: &[usize],
    kind: SobolKind,
    n_pairs: usize,
    seed: u64,
) -> Result<MCEstimate> {
    check_setup(model, prior, n_pairs)?;
    let d = prior.dim();
    check_dim("V_s rows", model.output_dim(), v_s.dim())?;
    let mut in_tau = vec![false; d];
    for &i in tau {
        if i >= d {
            return Err(Error::InvalidArgument(format!("factor index {i} out of range for d = {d}")));
        }
        in_tau[i] = true;
    }
    // Closed: keep τ, refresh the rest. Total: keep the rest, refresh τ.
    let keep_tau = kind == SobolKind::Closed;
    let (base, paired) = paired_outputs(model, d, n_pairs, seed, |x, fresh| {
        DVector::from_fn(d, |i, _| if in_tau[i] == keep_tau { x[i] } else { fresh[i] })
    })?;
    let mean = grand_mean(&base, &paired);
    let v = v_s.matrix();
    let mut numer = Vec::with_capacity(n_pairs);
    let mut denom = Vec::with_capacity(n_pairs);
    for (ya, yb) in base.iter().zip(&paired) {
        let a = v.tr_mul(&(ya - &mean));
        let b = v.tr_mul(&(yb - &mean));
        numer.push(match kind {
            SobolKind::Closed => a.dot(&b),
            SobolKind::Total => 0.5 * (&a - &b).norm_squared(),
        });
        denom.push(0.5 * (a.norm_squared() + b.norm_squared()));
    }
    let (num_mean, _) = mean_and_stderr(&numer);
    let (den_mean, _) = mean_and_stderr(&denom);
    if !(den_mean > 0.0) || !den_mean.is_finite() {
        return Err(Error::ZeroNormalizer { value: den_mean });
    }
    let ratio = num_mean / den_mean;
    let linearized: Vec<f64> = numer.iter().zip(&denom).map(|(a, b)| a - ratio * b).collect();
    let (_, lin_err) = mean_and_stderr(&linearized);
    Ok(MCEstimate {
        value: ratio,
        standard_error: lin_err / den_mean,
        outer_samples: n_pairs,
        inner_samples: 0,
        seed,
    })
}
