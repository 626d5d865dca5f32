//! Goal-oriented global sensitivity analysis from derivative information.
//!
//! For a factor set `τ` and output directions `V_s`, with
//! `D = Tr Cov(V_s^T G(X))`:
//!
//! ```text
//! c̄ ‖V^T J̄ U_τ‖² / D        ≤ S_tot(τ) ≤ C̄ Tr(U_τ^T H_X U_τ) / D
//! 1 − C̄ Tr(U_-τ^T H_X U_-τ) / D ≤ S_cl(τ)  ≤ 1 − c̄ ‖V^T J̄ U_-τ‖² / D
//! ```
//!
//! Only `diag(H_X(V_s))` and the projected mean Jacobian are needed.
//! Factors are coordinates of `X`, so the prior must have independent
//! coordinates (diagonal covariance); precondition correlated priors first
//! and read the factors as whitened coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::linalg::extreme_indices;
use crate::model::Model;
use crate::oracles::{mean_and_stderr, MCEstimate};
use crate::prior::GaussianPrior;
use crate::samples::{forward_batch, seeded_rng, streams, JacobianSampleSet};
use crate::subspace::{diag_hx, OrthonormalBasis, Space};

/// Relative floor (against `Tr H_X(V_s)`) below which the normalizer is
/// treated as zero.
pub const NORMALIZER_FLOOR: f64 = 1e-14;

/// A set of input factors `τ ⊆ {0..d−1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FactorSet {
    indices: Vec<usize>,
    dim: usize,
}

impl FactorSet {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&i) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidArgument(format!("factor index {i} out of range for d = {dim}")));
        }
        Ok(Self { indices, dim })
    }

    pub fn singleton(i: usize, dim: usize) -> Result<Self> {
        Self::new(vec![i], dim)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `−τ`.
    pub fn complement(&self) -> FactorSet {
        let indices = (0..self.dim).filter(|i| self.indices.binary_search(i).is_err()).collect();
        FactorSet { indices, dim: self.dim }
    }

    /// `U_τ`, or `None` for the empty set.
    pub fn selector(&self) -> Option<OrthonormalBasis> {
        OrthonormalBasis::canonical(self.dim, &self.indices, Space::Input).ok()
    }

    /// 1-based labels joined by `+`.
    pub fn label(&self) -> String {
        self.indices.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purpose {
    /// Least influential factors (smallest diagonals).
    Fixing,
    /// Most influential factors (largest diagonals).
    Prioritization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SobolBounds {
    pub lower: f64,
    pub upper: f64,
}

/// Precomputed quantities shared by all factor sets for one goal `V_s`.
#[derive(Debug, Clone)]
pub struct SobolBoundCalculator {
    /// `diag(H_X(V_s))`.
    diagonal: DVector<f64>,
    /// `V_s^T J̄`.
    projected_mean: DMatrix<f64>,
    normalizer: f64,
    poincare: f64,
    cramer_rao: f64,
}

impl SobolBoundCalculator {
    pub fn new(samples: &JacobianSampleSet, v_s: &OrthonormalBasis, prior: &GaussianPrior, normalizer: f64) -> Result<Self> {
        check_dim("prior vs input dimension", samples.input_dim(), prior.dim())?;
        if !prior.is_diagonal() {
            return Err(Error::CorrelatedPrior);
        }
        let diagonal = diag_hx(samples, v_s)?;
        let energy = diagonal.sum();
        if !(normalizer > NORMALIZER_FLOOR * energy) || !(normalizer > 0.0) {
            return Err(Error::ZeroNormalizer { value: normalizer });
        }
        let projected_mean = v_s.matrix().transpose() * samples.mean_jacobian()?;
        Ok(Self {
            diagonal,
            projected_mean,
            normalizer,
            poincare: prior.poincare_constant(),
            cramer_rao: prior.cramer_rao_constant(),
        })
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diagonal
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    fn diag_sum(&self, set: &FactorSet) -> f64 {
        set.indices().iter().map(|&i| self.diagonal[i]).sum()
    }

    fn mean_energy(&self, set: &FactorSet) -> f64 {
        set.indices().iter().map(|&i| self.projected_mean.column(i).norm_squared()).sum()
    }

    pub fn total(&self, tau: &FactorSet) -> SobolBounds {
        SobolBounds {
            lower: self.cramer_rao * self.mean_energy(tau) / self.normalizer,
            upper: self.poincare * self.diag_sum(tau) / self.normalizer,
        }
    }

    pub fn closed(&self, tau: &FactorSet) -> SobolBounds {
        let rest = tau.complement();
        SobolBounds {
            lower: 1.0 - self.poincare * self.diag_sum(&rest) / self.normalizer,
            upper: 1.0 - self.cramer_rao * self.mean_energy(&rest) / self.normalizer,
        }
    }
}

/// Bounds on the goal-oriented total Sobol' index of `τ`.
pub fn sobol_total_bounds(
    samples: &JacobianSampleSet,
    v_s: &OrthonormalBasis,
    tau: &FactorSet,
    prior: &GaussianPrior,
    normalizer: f64,
) -> Result<SobolBounds> {
    check_dim("factor set dimension", samples.input_dim(), tau.dim())?;
    Ok(SobolBoundCalculator::new(samples, v_s, prior, normalizer)?.total(tau))
}

/// Bounds on the goal-oriented closed Sobol' index of `τ`.
pub fn sobol_closed_bounds(
    samples: &JacobianSampleSet,
    v_s: &OrthonormalBasis,
    tau: &FactorSet,
    prior: &GaussianPrior,
    normalizer: f64,
) -> Result<SobolBounds> {
    check_dim("factor set dimension", samples.input_dim(), tau.dim())?;
    Ok(SobolBoundCalculator::new(samples, v_s, prior, normalizer)?.closed(tau))
}

/// Plain MC estimate of `Tr Cov(V_s^T G(X))` on its own seeded batch.
pub fn estimate_normalizer(
    model: &dyn Model,
    prior: &GaussianPrior,
    v_s: &OrthonormalBasis,
    count: usize,
    seed: u64,
) -> Result<MCEstimate> {
    if count < 2 {
        return Err(Error::InvalidArgument("normalizer needs at least 2 samples".into()));
    }
    check_dim("V_s rows", model.output_dim(), v_s.dim())?;
    let mut rng = seeded_rng(seed, streams::NORMALIZER);
    let xs: Vec<DVector<f64>> = (0..count).map(|_| prior.sample(&mut rng)).collect();
    let projected: Vec<DVector<f64>> = forward_batch(model, &xs)?.iter().map(|y| v_s.matrix().tr_mul(y)).collect();
    let mut mean = DVector::zeros(v_s.rank());
    for p in &projected {
        mean += p;
    }
    mean /= count as f64;
    let factor = count as f64 / (count - 1) as f64;
    let terms: Vec<f64> = projected.iter().map(|p| factor * (p - &mean).norm_squared()).collect();
    let (value, standard_error) = mean_and_stderr(&terms);
    Ok(MCEstimate {
        value,
        standard_error,
        outer_samples: count,
        inner_samples: 0,
        seed,
    })
}

/// Coordinate selection on `diag(H_X(V_s))`, ties to the lower index.
pub fn select_from_diagonal(diagonal: &DVector<f64>, r: usize, purpose: Purpose) -> Result<FactorSet> {
    let d = diagonal.len();
    if r == 0 || r > d {
        return Err(Error::RankOutOfRange { what: "r", value: r, max: d });
    }
    let largest = purpose == Purpose::Prioritization;
    FactorSet::new(extreme_indices(diagonal.as_slice(), r, largest), d)
}

/// Fixing set (`r` smallest diagonals) or prioritization set (`r` largest).
pub fn select_factors(samples: &JacobianSampleSet, v_s: &OrthonormalBasis, r: usize, purpose: Purpose) -> Result<FactorSet> {
    let d = samples.input_dim();
    if r == 0 || r > d {
        return Err(Error::RankOutOfRange { what: "r", value: r, max: d });
    }
    select_from_diagonal(&diag_hx(samples, v_s)?, r, purpose)
}

fn unit_direction(samples: &JacobianSampleSet, v: &DVector<f64>) -> Result<OrthonormalBasis> {
    check_dim("direction length", samples.output_dim(), v.len())?;
    OrthonormalBasis::new(DMatrix::from_column_slice(v.len(), 1, v.as_slice()), Space::Output)
}

/// `ν_i = E[(∂(v^T G)/∂x_i)²]`.
pub fn dgsm(samples: &JacobianSampleSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    diag_hx(samples, &unit_direction(samples, v)?)
}

/// `ω = J̄^T v`.
pub fn mean_gradient(samples: &JacobianSampleSet, v: &DVector<f64>) -> Result<DVector<f64>> {
    unit_direction(samples, v)?;
    Ok(samples.mean_jacobian()?.tr_mul(v))
}

/// The mean-gradient lower bound on the total index of factor `i`, next to
/// the classical DGSM-based bound it improves on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowerBoundComparison {
    pub ours: f64,
    pub kucherenko: f64,
}

/// `ours = σ_i² ω_i² / V` and `kucherenko = σ_i⁴ ω_i² / ((μ_i² + σ_i²) V)`,
/// with `V = Var(v^T G(X))`.
pub fn improved_lower_bound_check(
    samples: &JacobianSampleSet,
    v: &DVector<f64>,
    i: usize,
    prior: &GaussianPrior,
    output_variance: f64,
) -> Result<LowerBoundComparison> {
    if !(output_variance > 0.0) {
        return Err(Error::ZeroNormalizer { value: output_variance });
    }
    let d = samples.input_dim();
    if i >= d {
        return Err(Error::InvalidArgument(format!("factor index {i} out of range for d = {d}")));
    }
    check_dim("prior vs input dimension", d, prior.dim())?;
    let omega = mean_gradient(samples, v)?[i];
    let var = prior.covariance()[(i, i)];
    let mu = prior.mean()[i];
    let ours = var * omega * omega / output_variance;
    let kucherenko = var * var * omega * omega / ((mu * mu + var) * output_variance);
    debug_assert!(ours >= kucherenko);
    Ok(LowerBoundComparison { ours, kucherenko })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexKind {
    Closed,
    Total,
}

#[derive(Debug, Clone, Serialize)]
pub struct SobolRecord {
    /// 1-based.
    pub factors: Vec<usize>,
    pub kind: IndexKind,
    pub lower: f64,
    pub upper: f64,
    pub estimate: Option<f64>,
    pub stderr: Option<f64>,
}

/// Bounds (and optional oracle estimates) for a family of factor sets.
#[derive(Debug, Clone, Serialize)]
pub struct SobolReport {
    pub goal: String,
    pub normalizer: f64,
    pub normalizer_stderr: Option<f64>,
    pub records: Vec<SobolRecord>,
}

impl SobolReport {
    pub fn new(goal: impl Into<String>, normalizer: f64, normalizer_stderr: Option<f64>) -> Self {
        Self {
            goal: goal.into(),
            normalizer,
            normalizer_stderr,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, tau: &FactorSet, kind: IndexKind, bounds: SobolBounds, estimate: Option<&MCEstimate>) {
        self.records.push(SobolRecord {
            factors: tau.indices().iter().map(|i| i + 1).collect(),
            kind,
            lower: bounds.lower,
            upper: bounds.upper,
            estimate: estimate.map(|e| e.value),
            stderr: estimate.map(|e| e.standard_error),
        });
    }

    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(["factors", "kind", "lower", "estimate", "stderr", "upper", "goal"]);
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            let factors = r.factors.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("+");
            let kind = match r.kind {
                IndexKind::Closed => "closed",
                IndexKind::Total => "total",
            };
            t.push(vec![
                factors,
                kind.to_string(),
                fmt_f64(r.lower),
                opt(r.estimate),
                opt(r.stderr),
                fmt_f64(r.upper),
                self.goal.clone(),
            ]);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_samples(diag: &[f64]) -> JacobianSampleSet {
        JacobianSampleSet::from_dense(vec![DMatrix::from_diagonal(&DVector::from_column_slice(diag))]).unwrap()
    }

    #[test]
    fn linear_model_bounds_are_exact() {
        let samples = linear_samples(&[3.0, 1.0, 2.0]);
        let prior = GaussianPrior::standard(3);
        let v = OrthonormalBasis::identity(3, Space::Output);
        let calc = SobolBoundCalculator::new(&samples, &v, &prior, 14.0).unwrap();
        for (i, exact) in [(0, 9.0 / 14.0), (1, 1.0 / 14.0), (2, 4.0 / 14.0)] {
            let tau = FactorSet::singleton(i, 3).unwrap();
            for b in [calc.total(&tau), calc.closed(&tau)] {
                assert!((b.lower - exact).abs() < 1e-12 && (b.upper - exact).abs() < 1e-12);
            }
        }
        let all = FactorSet::new(vec![0, 1, 2], 3).unwrap();
        assert_eq!(calc.closed(&all), SobolBounds { lower: 1.0, upper: 1.0 });
    }

    #[test]
    fn factor_selection_hand_example() {
        let diag = DVector::from_vec(vec![4.0, 0.1, 2.0]);
        assert_eq!(select_from_diagonal(&diag, 1, Purpose::Fixing).unwrap().indices(), &[1]);
        assert_eq!(select_from_diagonal(&diag, 1, Purpose::Prioritization).unwrap().indices(), &[0]);
    }

    #[test]
    fn complement_partitions_trace() {
        let samples = linear_samples(&[3.0, 1.0, 2.0, 0.5]);
        let prior = GaussianPrior::standard(4);
        let v = OrthonormalBasis::identity(4, Space::Output);
        let calc = SobolBoundCalculator::new(&samples, &v, &prior, 1.0).unwrap();
        let tau = FactorSet::new(vec![1, 3], 4).unwrap();
        let total = calc.diag_sum(&tau) + calc.diag_sum(&tau.complement());
        assert!((total - calc.diagonal().sum()).abs() < 1e-12);
    }

    #[test]
    fn dgsm_of_linear_function() {
        let c = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let samples = JacobianSampleSet::from_dense(vec![c.clone(), c]).unwrap();
        let v = DVector::from_vec(vec![1.0]);
        let nu = dgsm(&samples, &v).unwrap();
        let omega = mean_gradient(&samples, &v).unwrap();
        assert_eq!(nu.as_slice(), &[1.0, 4.0, 0.25]);
        assert_eq!(omega.as_slice(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn improved_lower_bound_ratio() {
        let samples = JacobianSampleSet::from_dense(vec![DMatrix::from_row_slice(1, 1, &[2.0])]).unwrap();
        let v = DVector::from_vec(vec![1.0]);
        let centered = GaussianPrior::standard(1);
        let c = improved_lower_bound_check(&samples, &v, 0, &centered, 4.0).unwrap();
        assert_eq!(c.ours, c.kucherenko);
        let shifted = GaussianPrior::diagonal(DVector::from_vec(vec![1.0]), &[1.0]).unwrap();
        let c = improved_lower_bound_check(&samples, &v, 0, &shifted, 4.0).unwrap();
        assert!((c.ours - 2.0 * c.kucherenko).abs() < 1e-15);
        assert!((c.ours - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_normalizer_is_an_error() {
        let samples = linear_samples(&[1.0, 1.0]);
        let v = OrthonormalBasis::identity(2, Space::Output);
        assert!(matches!(
            SobolBoundCalculator::new(&samples, &v, &GaussianPrior::standard(2), 1e-20),
            Err(Error::ZeroNormalizer { .. })
        ));
    }
}
