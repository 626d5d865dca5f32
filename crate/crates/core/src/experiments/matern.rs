//! Matérn-5/2 covariance on grid points of `[0, 1)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::prior::GaussianPrior;

/// `k(t) = v (1 + √5 t/ℓ + 5t²/(3ℓ²)) exp(−√5 t/ℓ)`.
pub fn matern52(t: f64, length: f64, variance: f64) -> f64 {
    let a = 5.0_f64.sqrt() * t / length;
    variance * (1.0 + a + a * a / 3.0) * (-a).exp()
}

/// Covariance matrix over `points`. With `periodic`, distances wrap around
/// the unit interval, `t = min(|x − y|, 1 − |x − y|)`.
pub fn matern_covariance(points: &[f64], length: f64, variance: f64, periodic: bool) -> Result<DMatrix<f64>> {
    if !(length > 0.0 && length.is_finite()) {
        return Err(Error::InvalidArgument(format!("correlation length must be positive, got {length}")));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::InvalidArgument(format!("Matérn variance must be positive, got {variance}")));
    }
    let n = points.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let mut t = (points[i] - points[j]).abs();
        if periodic {
            t = t.min(1.0 - t);
        }
        matern52(t, length, variance)
    }))
}

/// Mean `exp(−½ (0.5 − x)²) / √(2π)` of the Burgers initial condition.
pub fn burgers_prior_mean(points: &[f64]) -> DVector<f64> {
    let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    DVector::from_iterator(points.len(), points.iter().map(|&x| c * (-0.5 * (0.5 - x) * (0.5 - x)).exp()))
}

/// Gaussian prior with the Burgers mean and a Matérn-5/2 covariance.
pub fn burgers_prior(points: &[f64], length: f64, variance: f64, periodic: bool) -> Result<GaussianPrior> {
    GaussianPrior::new(burgers_prior_mean(points), matern_covariance(points, length, variance, periodic)?)
}
