//! Goal-oriented sensor placement.
//!
//! A design is a set `τ` of output coordinates; `V_τ = [e_i]_{i ∈ τ}`. The
//! optimal coordinate design for the bound objective keeps the `s` largest
//! diagonal entries of `H_Y(U_r)`. Indices are 0-based in the API and
//! 1-based in serialized records.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::io::{fmt_f64, CsvTable};
use crate::linalg::{extreme_indices, orthonormalize, spd_logdet, symmetrize};
use crate::model::Model;
use crate::prior::{GaussianPrior, NoiseModel};
use crate::samples::{seeded_rng, streams, JacobianSampleSet};
use crate::subspace::{diag_hy, optimal_vs, pca_output, OrthonormalBasis, Space};

/// Absolute improvement (in nats) required to accept a greedy pick or swap.
pub const EXCHANGE_TOL: f64 = 1e-12;
/// Cap on exchange passes.
pub const MAX_EXCHANGE_PASSES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignMethod {
    DiagTopK,
    Eim,
    PcaEim,
    LinearizedExchange,
    Random,
}

impl DesignMethod {
    pub fn label(self) -> &'static str {
        match self {
            Self::DiagTopK => "diag-top-k",
            Self::Eim => "eim",
            Self::PcaEim => "pca-eim",
            Self::LinearizedExchange => "linearized-exchange",
            Self::Random => "random",
        }
    }
}

/// Linear goal `U_r^T X` in the input space.
#[derive(Debug, Clone)]
pub struct GoalOperator {
    basis: OrthonormalBasis,
    description: String,
}

impl GoalOperator {
    pub fn new(basis: OrthonormalBasis, description: impl Into<String>) -> Result<Self> {
        if basis.space() != Space::Input {
            return Err(Error::InvalidArgument("a goal operator must live in the input space".into()));
        }
        Ok(Self {
            basis,
            description: description.into(),
        })
    }

    /// Goal on the contiguous coordinates `start..start+len` (0-based).
    pub fn window(d: usize, start: usize, len: usize) -> Result<Self> {
        let basis = OrthonormalBasis::window(d, start, len, Space::Input)?;
        Self::new(basis, format!("coordinates {}..={}", start + 1, start + len))
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        self.basis.matrix()
    }

    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// A coordinate design `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorDesign {
    indices: Vec<usize>,
    method: DesignMethod,
    /// Bound objective `Σ_{i∈τ} H_Y(U_r)_{ii}` when known.
    pub score: Option<f64>,
    /// Linearized goal-oriented EIG, set by the exchange design.
    pub criterion: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignRecord {
    pub method: DesignMethod,
    /// 1-based, ascending.
    pub indices: Vec<usize>,
    pub score: Option<f64>,
    pub criterion: Option<f64>,
    pub goal: String,
}

impl SensorDesign {
    /// Validates distinctness and range against `m`, then sorts.
    pub fn new(mut indices: Vec<usize>, m: usize, method: DesignMethod) -> Result<Self> {
        indices.sort_unstable();
        if indices.is_empty() || indices.len() > m {
            return Err(Error::RankOutOfRange {
                what: "s",
                value: indices.len(),
                max: m,
            });
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("design indices must be distinct".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= m {
                return Err(Error::InvalidArgument(format!("design index {last} out of range for m = {m}")));
            }
        }
        Ok(Self {
            indices,
            method,
            score: None,
            criterion: None,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn method(&self) -> DesignMethod {
        self.method
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// `V_τ` as an output-space basis.
    pub fn selector(&self, m: usize) -> Result<OrthonormalBasis> {
        OrthonormalBasis::canonical(m, &self.indices, Space::Output)
    }

    /// Sets `score` from a precomputed `diag(H_Y(U_r))`.
    pub fn scored(mut self, diagonal: &DVector<f64>) -> Self {
        self.score = Some(self.indices.iter().map(|&i| diagonal[i]).sum());
        self
    }

    pub fn to_record(&self, goal: &str) -> DesignRecord {
        DesignRecord {
            method: self.method,
            indices: self.indices.iter().map(|i| i + 1).collect(),
            score: self.score,
            criterion: self.criterion,
            goal: goal.to_string(),
        }
    }
}

/// Top-`s` diagonal rule on a given diagonal (ties to the lower index).
pub fn select_from_diagonal(diagonal: &DVector<f64>, s: usize) -> Result<SensorDesign> {
    let m = diagonal.len();
    if s == 0 || s > m {
        return Err(Error::RankOutOfRange { what: "s", value: s, max: m });
    }
    let idx = extreme_indices(diagonal.as_slice(), s, true);
    Ok(SensorDesign::new(idx, m, DesignMethod::DiagTopK)?.scored(diagonal))
}

/// `τ*`: the `s` largest diagonal entries of `H_Y(U_r)`.
pub fn select_sensors_diag(samples: &JacobianSampleSet, goal: &GoalOperator, s: usize) -> Result<SensorDesign> {
    let m = samples.output_dim();
    if s == 0 || s > m {
        return Err(Error::RankOutOfRange { what: "s", value: s, max: m });
    }
    select_from_diagonal(&diag_hy(samples, goal.basis())?, s)
}

/// Relaxed design over all orthonormal `V_s`: the dominant eigenbasis and
/// its eigenvalue sum.
pub fn relaxed_design(samples: &JacobianSampleSet, goal: &GoalOperator, s: usize) -> Result<(OrthonormalBasis, f64)> {
    let (basis, spectrum) = optimal_vs(samples, goal.basis(), s)?;
    Ok((basis, spectrum.sum()))
}

/// Greedy empirical interpolation points of the columns of `basis`, in
/// selection order (0-based).
pub fn eim_points(basis: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (m, s) = basis.shape();
    if s == 0 {
        return Err(Error::InvalidArgument("EIM needs at least one basis vector".into()));
    }
    // Rejects dependent columns (reports the effective rank).
    orthonormalize(basis)?;

    let mut points: Vec<usize> = Vec::with_capacity(s);
    for j in 0..s {
        let v = basis.column(j).into_owned();
        let residual = if j == 0 {
            v.clone()
        } else {
            let p = DMatrix::from_fn(j, j, |a, b| basis[(points[a], b)]);
            let rhs = DVector::from_fn(j, |a, _| v[points[a]]);
            let coef = p.lu().solve(&rhs).ok_or(Error::SingularInterpolation { step: j + 1 })?;
            &v - basis.columns(0, j) * coef
        };
        let scale = v.amax().max(f64::MIN_POSITIVE);
        let (best, value) = argmax_abs(&residual);
        if value <= 1e-12 * scale {
            return Err(Error::SingularInterpolation { step: j + 1 });
        }
        debug_assert!(!points.contains(&best) && best < m);
        points.push(best);
    }
    Ok(points)
}

/// First index of the largest absolute entry.
fn argmax_abs(v: &DVector<f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best.1 {
            best = (i, x.abs());
        }
    }
    best
}

/// EIM sensors of an output basis (e.g. the relaxed design `V_s^*`).
pub fn eim_design(basis: &OrthonormalBasis) -> Result<SensorDesign> {
    SensorDesign::new(eim_points(basis.matrix())?, basis.dim(), DesignMethod::Eim)
}

/// EIM applied to the `s` dominant PCA modes of output draws (rows of `y`).
pub fn pca_eim_sensors(y: &DMatrix<f64>, s: usize) -> Result<SensorDesign> {
    if y.nrows() < s {
        return Err(Error::RankDeficient {
            requested: s,
            effective: y.nrows(),
        });
    }
    let (modes, _) = pca_output(y, s)?;
    SensorDesign::new(eim_points(modes.matrix())?, y.ncols(), DesignMethod::PcaEim)
}

/// Goal-oriented EIG of a linear-Gaussian model `Y = J X + η` restricted to
/// coordinate designs. Everything that does not depend on `τ` is
/// precomputed.
#[derive(Debug, Clone)]
pub struct LinearGoalCriterion {
    /// `J Σ J^T`.
    data_cov: DMatrix<f64>,
    /// `U^T Σ J^T`.
    cross: DMatrix<f64>,
    /// `U^T Σ U`.
    goal_cov: DMatrix<f64>,
    goal_logdet: f64,
    noise_var: f64,
}

impl LinearGoalCriterion {
    pub fn new(jacobian: &DMatrix<f64>, prior: &GaussianPrior, noise: &NoiseModel, goal: &DMatrix<f64>) -> Result<Self> {
        check_dim("Jacobian columns vs prior", prior.dim(), jacobian.ncols())?;
        check_dim("goal rows vs prior", prior.dim(), goal.nrows())?;
        check_dim("Jacobian rows vs noise", noise.dim(), jacobian.nrows())?;
        let sigma = prior.covariance();
        let sj = sigma * jacobian.transpose();
        let goal_cov = symmetrize(&(goal.transpose() * sigma * goal));
        let goal_logdet = spd_logdet(&goal_cov, "goal-marginal prior covariance")?;
        Ok(Self {
            data_cov: symmetrize(&(jacobian * &sj)),
            cross: goal.transpose() * sj,
            goal_cov,
            goal_logdet,
            noise_var: noise.variance(),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.data_cov.nrows()
    }

    /// Goal-marginal posterior covariance `Σ_{r|τ}`.
    pub fn posterior_goal_cov(&self, tau: &[usize]) -> Result<DMatrix<f64>> {
        let k = tau.len();
        if k == 0 {
            return Ok(self.goal_cov.clone());
        }
        let mut evidence = DMatrix::from_fn(k, k, |a, b| self.data_cov[(tau[a], tau[b])]);
        for i in 0..k {
            evidence[(i, i)] += self.noise_var;
        }
        let b = DMatrix::from_fn(self.cross.nrows(), k, |a, c| self.cross[(a, tau[c])]);
        let chol = evidence
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { context: "design evidence covariance" })?;
        let w = chol.l().solve_lower_triangular(&b.transpose()).ok_or(Error::SingularMatrix("evidence factor"))?;
        Ok(symmetrize(&(&self.goal_cov - w.transpose() * w)))
    }

    /// `½ log det Σ_r − ½ log det Σ_{r|τ}` in nats.
    pub fn value(&self, tau: &[usize]) -> Result<f64> {
        let post = self.posterior_goal_cov(tau)?;
        let logdet = spd_logdet(&post, "goal-marginal posterior covariance")?;
        Ok(0.5 * (self.goal_logdet - logdet))
    }
}

/// Greedy selection followed by best-single-swap exchange passes on the
/// linearized criterion.
pub fn exchange_optimize(criterion: &LinearGoalCriterion, s: usize) -> Result<(Vec<usize>, f64)> {
    let m = criterion.output_dim();
    if s == 0 || s > m {
        return Err(Error::RankOutOfRange { what: "s", value: s, max: m });
    }
    let mut tau: Vec<usize> = Vec::with_capacity(s);
    let mut current = 0.0;
    while tau.len() < s {
        let mut best: Option<(usize, f64)> = None;
        for i in (0..m).filter(|i| !tau.contains(i)) {
            let mut trial = tau.clone();
            trial.push(i);
            let val = criterion.value(&trial)?;
            if best.is_none_or(|(_, b)| val > b + EXCHANGE_TOL) {
                best = Some((i, val));
            }
        }
        let (i, val) = best.expect("a candidate remains while |τ| < m");
        tau.push(i);
        current = val;
    }
    tau.sort_unstable();

    for _ in 0..MAX_EXCHANGE_PASSES {
        let mut best_swap: Option<(usize, usize, f64)> = None;
        let mut best_val = current;
        for pos in 0..s {
            for j in (0..m).filter(|j| !tau.contains(j)) {
                let mut trial = tau.clone();
                trial[pos] = j;
                let val = criterion.value(&trial)?;
                if val > best_val + EXCHANGE_TOL {
                    best_val = val;
                    best_swap = Some((pos, j, val));
                }
            }
        }
        match best_swap {
            Some((pos, j, val)) => {
                tau[pos] = j;
                tau.sort_unstable();
                current = val;
            }
            None => break,
        }
    }
    Ok((tau, current))
}

/// Exchange design on the model linearized at the prior mean.
pub fn linearized_exchange_design(
    model: &dyn Model,
    prior: &GaussianPrior,
    noise: &NoiseModel,
    goal: &GoalOperator,
    s: usize,
) -> Result<SensorDesign> {
    let j0 = model.jacobian(prior.mean())?;
    let criterion = LinearGoalCriterion::new(&j0, prior, noise, goal.matrix())?;
    let (tau, value) = exchange_optimize(&criterion, s)?;
    let mut design = SensorDesign::new(tau, model.output_dim(), DesignMethod::LinearizedExchange)?;
    design.criterion = Some(value);
    Ok(design)
}

/// `count` uniformly random size-`s` subsets of `0..m`.
pub fn random_designs(m: usize, s: usize, count: usize, seed: u64) -> Result<Vec<SensorDesign>> {
    if s == 0 || s > m {
        return Err(Error::RankOutOfRange { what: "s", value: s, max: m });
    }
    let mut rng = seeded_rng(seed, streams::RANDOM_DESIGNS);
    (0..count)
        .map(|_| SensorDesign::new(index::sample(&mut rng, m, s).into_vec(), m, DesignMethod::Random))
        .collect()
}

/// Per-coordinate `diag(H_Y(U_r))`, 1-based index column.
pub fn diagonal_csv(diagonal: &DVector<f64>) -> CsvTable {
    let mut table = CsvTable::new(["index", "diag_hy"]);
    for (i, v) in diagonal.iter().enumerate() {
        table.push(vec![(i + 1).to_string(), fmt_f64(*v)]);
    }
    table
}
