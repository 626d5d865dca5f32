//! Reference estimators that do not use gradients: pick-freeze conditional
//! variances, nested Monte Carlo EIG, and exact linear-Gaussian algebra.

use serde::{Deserialize, Serialize};

pub mod eig;
pub mod laplace_eig;
pub mod linear_gaussian;
pub mod pick_freeze;

pub use eig::{eig_nested_mc, NestedEigSampler};
pub use laplace_eig::LaplaceEigSampler;
pub use linear_gaussian::{linear_gaussian_closed_forms, LinearGaussianForms, LinearGaussianPosterior};
pub use pick_freeze::{conditional_expectation_error, sobol_pick_freeze, SobolKind};

/// A Monte Carlo estimate with its standard error and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub outer_samples: usize,
    /// Zero for single-loop estimators.
    pub inner_samples: usize,
    pub seed: u64,
}

impl MCEstimate {
    /// Whether `target` lies within `k` standard errors of the estimate.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.standard_error
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
