//! Dense and matrix-free linear algebra helpers shared by the subspace,
//! design and oracle modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative jitter added to a covariance diagonal when Cholesky fails.
pub const JITTER_BASE: f64 = 1e-10;
/// Number of tenfold jitter escalations attempted after the base jitter.
pub const JITTER_RETRIES: usize = 3;

/// Flip column signs so that the entry of largest magnitude (lowest index on
/// ties) is positive.
pub fn normalize_signs(w: &mut DMatrix<f64>) {
    for mut col in w.column_iter_mut() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = i;
            }
        }
        if best_abs > 0.0 && col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// Full symmetric eigendecomposition with eigenvalues sorted descending and
/// sign-normalized eigenvectors. Ties keep the solver's order.
pub fn sym_eig_desc(h: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = h.nrows();
    let sym = symmetrize(h);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vecs.set_column(j, &eig.eigenvectors.column(i));
    }
    normalize_signs(&mut vecs);
    (vals, vecs)
}

/// Eigenvalues only, sorted descending.
pub fn sym_eigenvalues_desc(h: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = symmetrize(h).symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    vals
}

pub fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

/// Cholesky factor of `sigma`, retrying with diagonal jitter
/// `1e-10 * trace / n` escalated tenfold up to three times.
///
/// Returns the lower factor, the matrix actually factorized and the jitter used.
pub fn cholesky_with_jitter(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let n = sigma.nrows();
    if n == 0 || sigma.ncols() != n {
        return Err(Error::NotPositiveDefinite {
            context: "covariance must be square and non-empty",
        });
    }
    if sigma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            context: "covariance has non-finite entries",
        });
    }
    let sym = symmetrize(sigma);
    if let Some(ch) = sym.clone().cholesky() {
        return Ok((ch.l(), sym, 0.0));
    }
    let base = JITTER_BASE * sym.trace() / n as f64;
    if base <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            context: "covariance has non-positive trace",
        });
    }
    let mut jitter = base;
    for _ in 0..=JITTER_RETRIES {
        let mut shifted = sym.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = shifted.clone().cholesky() {
            return Ok((ch.l(), shifted, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite {
        context: "Cholesky failed after maximum jitter",
    })
}

/// log det of a symmetric positive definite matrix.
pub fn spd_logdet(a: &DMatrix<f64>, context: &'static str) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let ch = symmetrize(a)
        .cholesky()
        .ok_or(Error::SingularMatrix(context))?;
    Ok(2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn spd_inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let ch = symmetrize(a)
        .cholesky()
        .ok_or(Error::SingularMatrix(context))?;
    Ok(symmetrize(&ch.inverse()))
}

/// Solve `a x = b` for SPD `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let ch = symmetrize(a)
        .cholesky()
        .ok_or(Error::SingularMatrix(context))?;
    Ok(ch.solve(b))
}

/// `||W^T W - I||_F`.
pub fn orthonormality_defect(w: &DMatrix<f64>) -> f64 {
    let k = w.ncols();
    (w.transpose() * w - DMatrix::<f64>::identity(k, k)).norm()
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    // Column-major fill keeps the draw order independent of nalgebra internals.
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

pub fn standard_normal_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Thin QR orthonormalization. Fails when the columns are numerically
/// dependent.
pub fn orthonormalize(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, k) = a.shape();
    if k > n {
        return Err(Error::RankDeficient {
            requested: k,
            effective: n,
        });
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let effective = r
        .diagonal()
        .iter()
        .filter(|v| v.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE))
        .count();
    if effective < k {
        return Err(Error::RankDeficient {
            requested: k,
            effective,
        });
    }
    let mut q = qr.q();
    // Make diag(R) positive so the factor is unique.
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// Haar-distributed n×k matrix with orthonormal columns.
pub fn random_orthonormal<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Result<DMatrix<f64>> {
    orthonormalize(&standard_normal_matrix(rng, n, k))
}

/// Sample covariance (unbiased) of the rows of `data` (N×n).
pub fn sample_covariance(data: &DMatrix<f64>) -> DMatrix<f64> {
    let (n_samples, _) = data.shape();
    let mean = data.row_mean();
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let denom = (n_samples.max(2) - 1) as f64;
    symmetrize(&(centered.transpose() * &centered / denom))
}

/// Number of eigenvalues above `rel_tol * lambda_max` (zero when all vanish).
pub fn effective_rank(eigenvalues_desc: &[f64], rel_tol: f64) -> usize {
    let top = eigenvalues_desc.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    eigenvalues_desc.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Numerically stable `log(mean(exp(values)))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (sum / values.len() as f64).ln()
}

/// Dominant `k` eigenpairs of a symmetric operator given only matrix-vector
/// products, by Lanczos with full reorthogonalization.
///
/// Ritz pairs are accepted once `||A x - theta x|| <= tol * theta_1`.
pub fn lanczos_top<F, R>(
    n: usize,
    k: usize,
    apply: F,
    rng: &mut R,
    tol: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    R: Rng + ?Sized,
{
    if k == 0 || k > n {
        return Err(Error::RankOutOfRange {
            what: "k",
            value: k,
            max: n,
        });
    }
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut target = (2 * k + 20).min(n);

    let fresh_direction = |basis: &[DVector<f64>], rng: &mut R| -> Option<DVector<f64>> {
        for _ in 0..8 {
            let mut v = standard_normal_vector(rng, n);
            for _ in 0..2 {
                for q in basis {
                    let c = q.dot(&v);
                    v.axpy(-c, q, 1.0);
                }
            }
            let nv = v.norm();
            if nv > 1e-10 {
                return Some(v / nv);
            }
        }
        None
    };

    let mut next = fresh_direction(&basis, rng).ok_or_else(|| Error::EigenSolver("no start vector".into()))?;
    loop {
        while basis.len() < target {
            let q = next.clone();
            let mut w = apply(&q)?;
            let alpha = q.dot(&w);
            w.axpy(-alpha, &q, 1.0);
            if let (Some(prev), Some(&beta)) = (basis.last(), betas.last()) {
                w.axpy(-beta, prev, 1.0);
            }
            for _ in 0..2 {
                for b in basis.iter().chain(std::iter::once(&q)) {
                    let c = b.dot(&w);
                    w.axpy(-c, b, 1.0);
                }
            }
            basis.push(q);
            alphas.push(alpha);
            let beta = w.norm();
            let scale = alphas.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(1e-300);
            if basis.len() == n {
                betas.push(0.0);
                break;
            }
            if beta <= 1e-12 * scale {
                // Invariant subspace found; continue in a fresh orthogonal direction.
                betas.push(0.0);
                match fresh_direction(&basis, rng) {
                    Some(v) => next = v,
                    None => break,
                }
            } else {
                betas.push(beta);
                next = w / beta;
            }
        }

        let j = basis.len();
        let mut t = DMatrix::zeros(j, j);
        for i in 0..j {
            t[(i, i)] = alphas[i];
            if i + 1 < j {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let (theta, y) = sym_eig_desc(&t);
        let q_mat = DMatrix::from_columns(&basis);
        let kk = k.min(j);
        let ritz = &q_mat * y.columns(0, kk);
        let top = theta[0].abs().max(1e-300);
        let mut converged = kk == k;
        if converged {
            for c in 0..k {
                let x = ritz.column(c).into_owned();
                let r = apply(&x)? - &x * theta[c];
                if r.norm() > tol * top {
                    converged = false;
                    break;
                }
            }
        }
        if converged {
            let mut vecs = ritz;
            normalize_signs(&mut vecs);
            let vals = DVector::from_iterator(k, theta.iter().take(k).copied());
            return Ok((vals, vecs));
        }
        if j >= n {
            return Err(Error::EigenSolver(format!(
                "Lanczos exhausted the full space (n = {n}) without meeting tolerance"
            )));
        }
        target = (2 * target).min(n);
    }
}

/// Indices of the `k` largest (or smallest) entries, ties going to the lower
/// index. Returned in ascending index order.
pub fn extreme_indices(values: &[f64], k: usize, largest: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps lower indices first among equal values.
    order.sort_by(|&a, &b| {
        let ord = values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal);
        if largest {
            ord.reverse()
        } else {
            ord
        }
    });
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sign_convention_picks_largest_entry() {
        let mut w = DMatrix::from_column_slice(3, 2, &[0.1, -0.9, 0.2, 0.5, -0.5, 0.1]);
        normalize_signs(&mut w);
        assert!(w[(1, 0)] > 0.0);
        // tie between rows 0 and 1: lowest index wins
        assert!(w[(0, 1)] > 0.0);
    }

    #[test]
    fn jitter_rescues_semidefinite_matrix() {
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let sigma = &v * v.transpose();
        let (l, used, jitter) = cholesky_with_jitter(&sigma).unwrap();
        assert!(jitter > 0.0);
        assert!((&l * l.transpose() - used).norm() < 1e-12);
    }

    #[test]
    fn jitter_gives_up_on_indefinite_matrix() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_with_jitter(&sigma),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn lanczos_matches_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = standard_normal_matrix(&mut rng, 60, 60);
        let h = &a * a.transpose();
        let (vals, vecs) = sym_eig_desc(&h);
        let (lv, lw) = lanczos_top(60, 4, |x| Ok(&h * x), &mut rng, 1e-10).unwrap();
        for i in 0..4 {
            assert!((vals[i] - lv[i]).abs() <= 1e-9 * vals[0]);
            let overlap = vecs.column(i).dot(&lw.column(i)).abs();
            assert!((overlap - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn lanczos_handles_low_rank_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = standard_normal_matrix(&mut rng, 30, 2);
        let h = &b * b.transpose();
        let (lv, _) = lanczos_top(30, 3, |x| Ok(&h * x), &mut rng, 1e-8).unwrap();
        assert!(lv[2].abs() < 1e-8 * lv[0]);
    }

    #[test]
    fn log_mean_exp_is_stable() {
        let v = [-1000.0, -1000.0];
        assert!((log_mean_exp(&v) + 1000.0).abs() < 1e-12);
    }
}
