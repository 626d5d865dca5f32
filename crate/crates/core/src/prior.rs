//! Gaussian priors and isotropic Gaussian observation noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{cholesky_with_jitter, standard_normal_vector, sym_eigenvalues_desc};

/// Gaussian prior `N(mean, cov)` with a stored Cholesky factor `cov = L L^T`.
///
/// For a Gaussian the subspace Poincaré constant is `lambda_max(cov)` and the
/// subspace Cramér–Rao constant is `lambda_min(cov)`.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
    poincare: f64,
    cramer_rao: f64,
    jitter: f64,
    standard: bool,
}

impl GaussianPrior {
    /// Builds the prior, factorizing `cov` with jitter if required. The
    /// stored covariance includes any jitter that was added.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim("prior covariance rows", mean.len(), cov.nrows())?;
        check_dim("prior covariance cols", mean.len(), cov.ncols())?;
        let (factor, cov, jitter) = cholesky_with_jitter(&cov)?;
        let eig = sym_eigenvalues_desc(&cov);
        let poincare = eig[0];
        let cramer_rao = *eig.last().unwrap();
        if cramer_rao <= 0.0 {
            return Err(Error::NotPositiveDefinite {
                context: "prior covariance has a non-positive eigenvalue",
            });
        }
        Ok(Self {
            mean,
            cov,
            factor,
            poincare,
            cramer_rao,
            jitter,
            standard: false,
        })
    }

    /// `N(0, I_d)`.
    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
            factor: DMatrix::identity(d, d),
            poincare: 1.0,
            cramer_rao: 1.0,
            jitter: 0.0,
            standard: true,
        }
    }

    /// Diagonal covariance with the given variances.
    pub fn diagonal(mean: DVector<f64>, variances: &[f64]) -> Result<Self> {
        check_dim("prior variances", mean.len(), variances.len())?;
        if variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                context: "variances must be positive",
            });
        }
        let cov = DMatrix::from_diagonal(&DVector::from_column_slice(variances));
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular `L` with `L L^T = covariance()`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `C̄(X) = lambda_max(Σ)`.
    pub fn poincare_constant(&self) -> f64 {
        self.poincare
    }

    /// `c̄(X) = lambda_min(Σ)`.
    pub fn cramer_rao_constant(&self) -> f64 {
        self.cramer_rao
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// True when mean is zero and covariance is the identity.
    pub fn is_standard(&self) -> bool {
        self.standard
            || (self.mean.iter().all(|&v| v == 0.0)
                && self.cov == DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.cov[(i, j)] == 0.0))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vector(rng, self.dim());
        self.from_whitened(&z)
    }

    /// `x = L z + mean`.
    pub fn from_whitened(&self, z: &DVector<f64>) -> DVector<f64> {
        if self.standard {
            return z.clone();
        }
        &self.factor * z + &self.mean
    }

    /// `z = L^{-1}(x - mean)`.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        if self.standard {
            return x.clone();
        }
        let centered = x - &self.mean;
        self.factor
            .solve_lower_triangular(&centered)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// Gain `Σ U (U^T Σ U)^{-1}` mapping a goal residual `x_r - U^T x` to the
    /// correction of the prior conditional given `U^T X = x_r`.
    pub fn conditional_gain(&self, goal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("goal rows", self.dim(), goal.nrows())?;
        let su = &self.cov * goal;
        let sr = goal.transpose() * &su;
        let inv = crate::linalg::spd_inverse(&sr, "goal-marginal prior covariance")?;
        Ok(su * inv)
    }
}

/// Additive noise `N(0, σ² I_m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    variance: f64,
    dim: usize,
}

impl NoiseModel {
    pub fn new(variance: f64, dim: usize) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive and finite, got {variance}"
            )));
        }
        Ok(Self { variance, dim })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eig_desc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constants_match_dense_eigensolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = crate::linalg::standard_normal_matrix(&mut rng, 5, 5);
        let cov = &a * a.transpose() + DMatrix::identity(5, 5) * 0.1;
        let prior = GaussianPrior::new(DVector::zeros(5), cov.clone()).unwrap();
        let (vals, _) = sym_eig_desc(&cov);
        assert!((prior.poincare_constant() - vals[0]).abs() < 1e-12 * vals[0]);
        assert!((prior.cramer_rao_constant() - vals[4]).abs() < 1e-10 * vals[0]);
        assert!(prior.cramer_rao_constant() <= prior.poincare_constant());
        let l = prior.factor();
        assert!((l * l.transpose() - &cov).norm() <= 1e-10 * cov.norm());
    }

    #[test]
    fn whitening_round_trips() {
        let prior = GaussianPrior::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]),
        )
        .unwrap();
        let x = DVector::from_vec(vec![0.3, 0.7]);
        let back = prior.from_whitened(&prior.whiten(&x));
        assert!((back - x).norm() < 1e-14);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianPrior::new(DVector::zeros(2), cov).is_err());
    }

    #[test]
    fn noise_requires_positive_variance() {
        assert!(NoiseModel::new(0.0, 3).is_err());
        assert!(NoiseModel::new(-1.0, 3).is_err());
        assert_eq!(NoiseModel::new(0.1, 3).unwrap().dim(), 3);
    }
}
