//! Nested Monte Carlo estimators of the (goal-oriented) expected
//! information gain of a design.
//!
//! The sampler draws and evaluates everything once; a design only selects
//! or projects output coordinates. Estimating many designs from one sampler
//! therefore uses common random numbers.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{mean_and_stderr, MCEstimate};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{log_mean_exp, standard_normal_vector};
use crate::model::Model;
use crate::prior::{GaussianPrior, NoiseModel};
use crate::samples::{forward_batch, seeded_rng, streams};
use crate::subspace::OrthonormalBasis;

/// Stored forward evaluations for nested MC.
pub struct NestedEigSampler {
    noise_var: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
    output_dim: usize,
    /// `G(x_n) + η_n`.
    data: Vec<DVector<f64>>,
    /// `G(x_n)`.
    outer: Vec<DVector<f64>>,
    /// `G(x'_{n,k})`, fresh prior draws; row-major `n * K + k`.
    marginal: Vec<DVector<f64>>,
    /// `G(x_{n,k} | U^T x_n)`, prior-conditional draws (goal case only).
    conditional: Option<Vec<DVector<f64>>>,
}

/// How a design reads the full output vector.
#[derive(Clone, Copy)]
enum Selector<'a> {
    Coordinates(&'a [usize]),
    Basis(&'a DMatrix<f64>),
}

impl Selector<'_> {
    fn sq_dist(&self, y: &DVector<f64>, g: &DVector<f64>) -> f64 {
        match self {
            Selector::Coordinates(idx) => idx.iter().map(|&i| (y[i] - g[i]) * (y[i] - g[i])).sum(),
            Selector::Basis(v) => v.tr_mul(&(y - g)).norm_squared(),
        }
    }
}

impl NestedEigSampler {
    /// Draws `n_outer` outer samples and `n_inner` inner samples per outer
    /// sample. With a goal `U_r`, the conditional inner draws use Matheron's
    /// rule `x = x'' + Σ U (U^T Σ U)^{-1} (U^T x_n − U^T x'')`, which is an
    /// exact draw from the Gaussian prior conditioned on `U^T X = U^T x_n`.
    pub fn new(
        model: &dyn Model,
        prior: &GaussianPrior,
        noise: &NoiseModel,
        goal: Option<&OrthonormalBasis>,
        n_outer: usize,
        n_inner: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_inner < 2 || n_outer < 2 {
            return Err(Error::InvalidArgument(format!(
                "nested MC needs at least 2 outer and 2 inner samples, got {n_outer} and {n_inner}"
            )));
        }
        let (d, m) = (model.input_dim(), model.output_dim());
        check_dim("model input vs prior", prior.dim(), d)?;
        check_dim("model output vs noise", noise.dim(), m)?;

        let mut outer_rng = seeded_rng(seed, streams::EIG_OUTER);
        let xs: Vec<DVector<f64>> = (0..n_outer).map(|_| prior.sample(&mut outer_rng)).collect();
        let mut noise_rng = seeded_rng(seed, streams::EIG_NOISE);
        let etas: Vec<DVector<f64>> =
            (0..n_outer).map(|_| standard_normal_vector(&mut noise_rng, m) * noise.std_dev()).collect();
        let mut marginal_rng = seeded_rng(seed, streams::EIG_MARGINAL);
        let marginal_x: Vec<DVector<f64>> = (0..n_outer * n_inner).map(|_| prior.sample(&mut marginal_rng)).collect();

        let conditional_x = match goal {
            None => None,
            Some(u) => {
                check_dim("goal rows vs prior", d, u.dim())?;
                let gain = prior.conditional_gain(u.matrix())?;
                let ut = u.matrix().transpose();
                let mut rng = seeded_rng(seed, streams::EIG_CONDITIONAL);
                let mut draws = Vec::with_capacity(n_outer * n_inner);
                for x in &xs {
                    let target = &ut * x;
                    for _ in 0..n_inner {
                        let free = prior.sample(&mut rng);
                        let correction = &gain * (&target - &ut * &free);
                        draws.push(free + correction);
                    }
                }
                Some(draws)
            }
        };

        let outer = forward_batch(model, &xs)?;
        let marginal = forward_batch(model, &marginal_x)?;
        let conditional = conditional_x.map(|c| forward_batch(model, &c)).transpose()?;
        let data = outer.iter().zip(&etas).map(|(g, e)| g + e).collect();
        Ok(Self {
            noise_var: noise.variance(),
            n_outer,
            n_inner,
            seed,
            output_dim: m,
            data,
            outer,
            marginal,
            conditional,
        })
    }

    pub fn is_goal_oriented(&self) -> bool {
        self.conditional.is_some()
    }

    /// Estimate for a column-orthonormal design `V_*` (`m × s`).
    pub fn estimate(&self, design: &OrthonormalBasis) -> Result<MCEstimate> {
        check_dim("design rows", self.output_dim, design.dim())?;
        Ok(self.run(Selector::Basis(design.matrix())))
    }

    /// Estimate for the coordinate design `V_τ` (0-based indices).
    pub fn estimate_coordinates(&self, tau: &[usize]) -> Result<MCEstimate> {
        if tau.is_empty() || tau.iter().any(|&i| i >= self.output_dim) {
            return Err(Error::InvalidArgument("design indices empty or out of range".into()));
        }
        Ok(self.run(Selector::Coordinates(tau)))
    }

    fn run(&self, sel: Selector<'_>) -> MCEstimate {
        let scale = -0.5 / self.noise_var;
        let k = self.n_inner;
        // Normalizing constants of the likelihood cancel between the two terms.
        let terms: Vec<f64> = (0..self.n_outer)
            .into_par_iter()
            .map(|n| {
                let y = &self.data[n];
                let inner = |pool: &[DVector<f64>]| {
                    let logs: Vec<f64> = pool[n * k..(n + 1) * k].iter().map(|g| scale * sel.sq_dist(y, g)).collect();
                    log_mean_exp(&logs)
                };
                let evidence = inner(&self.marginal);
                let numerator = match &self.conditional {
                    Some(cond) => inner(cond),
                    None => scale * sel.sq_dist(y, &self.outer[n]),
                };
                numerator - evidence
            })
            .collect();
        let (value, standard_error) = mean_and_stderr(&terms);
        MCEstimate {
            value,
            standard_error,
            outer_samples: self.n_outer,
            inner_samples: self.n_inner,
            seed: self.seed,
        }
    }
}

/// One-shot nested MC estimate of `Φ(V_*)` or, with a goal, `Φ(V_* | U_r)`.
#[allow(clippy::too_many_arguments)]
pub fn eig_nested_mc(
    model: &dyn Model,
    prior: &GaussianPrior,
    noise: &NoiseModel,
    design: &OrthonormalBasis,
    goal: Option<&OrthonormalBasis>,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<MCEstimate> {
    NestedEigSampler::new(model, prior, noise, goal, n_outer, n_inner, seed)?.estimate(design)
}
