#![allow(dead_code)]

use coupled_dr::{AffineModel, FnModel, GaussianPrior, OrthonormalBasis, Space};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    coupled_dr::samples::seeded_rng(seed, 1000)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_affine(rng: &mut ChaCha8Rng, m: usize, d: usize) -> AffineModel {
    let offset = DVector::from_fn(m, |_, _| rng.sample(StandardNormal));
    AffineModel::new(offset, gaussian_matrix(rng, m, d)).unwrap()
}

/// Random SPD covariance `A A^T / d + 0.1 I`.
pub fn random_covariance(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(rng, d, d);
    let mut c = &a * a.transpose() / d as f64;
    for i in 0..d {
        c[(i, i)] += 0.1;
    }
    c
}

pub fn random_prior(rng: &mut ChaCha8Rng, d: usize) -> GaussianPrior {
    let mean = DVector::from_fn(d, |_, _| rng.sample(StandardNormal));
    GaussianPrior::new(mean, random_covariance(rng, d)).unwrap()
}

pub fn random_basis(rng: &mut ChaCha8Rng, n: usize, k: usize, space: Space) -> OrthonormalBasis {
    OrthonormalBasis::new(coupled_dr::linalg::orthonormalize(&gaussian_matrix(rng, n, k)).unwrap(), space).unwrap()
}

pub fn random_orthogonal(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    gaussian_matrix(rng, k, k).qr().q()
}

/// `G(x) = sin(x_1)` on `R^2`.
pub fn sin_model() -> FnModel {
    FnModel::new(
        2,
        1,
        |x| DVector::from_element(1, x[0].sin()),
        |x| DMatrix::from_row_slice(1, 2, &[x[0].cos(), 0.0]),
    )
}

/// Nodes and weights of `n`-point Gauss–Hermite quadrature for the standard
/// normal density (Golub–Welsch on the probabilists' Jacobi matrix).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| if i.abs_diff(j) == 1 { (i.max(j) as f64).sqrt() } else { 0.0 });
    let eig = SymmetricEigen::new(jacobi);
    let weights = (0..n).map(|k| eig.eigenvectors[(0, k)].powi(2)).collect();
    (eig.eigenvalues.iter().copied().collect(), weights)
}

pub fn expect_standard_normal(f: impl Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_hermite(60);
    nodes.iter().zip(&weights).map(|(&x, &w)| w * f(x)).sum()
}

/// Quadrature values for the sin model with `U = e_2`, `V = [1]`:
/// `(upper, lower, exact error)`.
pub fn sin_model_oracle() -> (f64, f64, f64) {
    let upper = expect_standard_normal(|x| x.cos().powi(2));
    let lower = expect_standard_normal(f64::cos).powi(2);
    let mean = expect_standard_normal(f64::sin);
    let error = expect_standard_normal(|x| (x.sin() - mean).powi(2));
    (upper, lower, error)
}

pub fn relative_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
