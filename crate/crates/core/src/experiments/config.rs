//! Experiment configuration.
//!
//! A config file is TOML. An optional top-level `scale = "desk" | "full"`
//! picks the preset that every omitted key falls back to; unknown keys are
//! rejected. Windows and goal starts are 1-based grid or time indices.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::samples::StorageMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ConddiffGoal,
    ConddiffSobol,
    ConddiffCoupled,
    ConddiffConvergence,
    ConddiffRankSweep,
    BurgersBoed,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::ConddiffGoal,
        Self::ConddiffSobol,
        Self::ConddiffCoupled,
        Self::ConddiffConvergence,
        Self::ConddiffRankSweep,
        Self::BurgersBoed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ConddiffGoal => "conddiff-goal",
            Self::ConddiffSobol => "conddiff-sobol",
            Self::ConddiffCoupled => "conddiff-coupled",
            Self::ConddiffConvergence => "conddiff-convergence",
            Self::ConddiffRankSweep => "conddiff-rank-sweep",
            Self::BurgersBoed => "burgers-boed",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown experiment `{s}` (known: {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Desk,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Storage {
    Dense,
    Operator,
}

impl From<Storage> for StorageMode {
    fn from(s: Storage) -> Self {
        match s {
            Storage::Dense => StorageMode::Dense,
            Storage::Operator => StorageMode::Operator,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConddiffConfig {
    pub steps: usize,
    pub dt: f64,
    pub noise_variance: f64,
    /// `[start, length]` of the input-space goal window.
    pub input_window: [usize; 2],
    /// `[start, length]` of the output-space goal window.
    pub output_window: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurgersConfig {
    pub grid: usize,
    pub viscosity: f64,
    pub final_time: f64,
    pub time_step: f64,
    pub noise_variance: f64,
    pub length_scale: f64,
    pub prior_variance: f64,
    pub periodic_distance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionConfig {
    pub r: usize,
    pub s: usize,
    /// Jacobian samples `M`.
    pub samples: usize,
    pub max_iter: usize,
    pub stall_tol: f64,
    /// Random initializations for the convergence study.
    pub inits: usize,
    /// `r = s` values of the rank sweep.
    pub ranks: Vec<usize>,
    pub storage: Storage,
    /// Relative ridge of the CCA baseline.
    pub cca_ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Pick-freeze pairs; 0 skips the oracle where it is optional.
    pub pick_freeze_pairs: usize,
    /// Samples of the plain MC normalizer estimate.
    pub normalizer_samples: usize,
}

/// Inner-loop sampling distribution of the nested EIG estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    /// Plain nested Monte Carlo with prior draws.
    Prior,
    /// Importance sampling from a per-outer-sample Laplace approximation.
    Laplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoedConfig {
    /// Jacobian samples `M` of the Burgers model.
    pub jacobian_samples: usize,
    pub goal_starts: Vec<usize>,
    pub goal_rank: usize,
    pub sensors: usize,
    pub outer_samples: usize,
    pub inner_samples: usize,
    pub random_designs: usize,
    /// Evaluate every design on the same nested-MC draws.
    pub common_random_numbers: bool,
    pub exchange: bool,
    pub proposal: Proposal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub conddiff: ConddiffConfig,
    pub burgers: BurgersConfig,
    pub reduction: ReductionConfig,
    pub estimators: EstimatorConfig,
    pub boed: BoedConfig,
}

impl ExperimentConfig {
    /// Small problem sizes that run in CI.
    pub fn desk() -> Self {
        Self {
            scale: Scale::Desk,
            output_dir: PathBuf::from("results"),
            seed: 0,
            conddiff: ConddiffConfig {
                steps: 50,
                dt: 0.02,
                noise_variance: 0.1,
                input_window: [11, 10],
                output_window: [31, 10],
            },
            burgers: BurgersConfig {
                grid: 50,
                viscosity: 1e-3,
                final_time: 0.1,
                time_step: 1e-3,
                noise_variance: 0.01,
                length_scale: 0.1,
                prior_variance: 1.0,
                periodic_distance: false,
            },
            reduction: ReductionConfig {
                r: 10,
                s: 10,
                samples: 200,
                max_iter: 10,
                stall_tol: 1e-10,
                inits: 10,
                ranks: vec![5, 10, 20],
                storage: Storage::Dense,
                cca_ridge: 1e-8,
            },
            estimators: EstimatorConfig {
                pick_freeze_pairs: 2000,
                normalizer_samples: 2000,
            },
            boed: BoedConfig {
                jacobian_samples: 200,
                goal_starts: vec![8, 18, 28, 38],
                goal_rank: 5,
                sensors: 10,
                outer_samples: 300,
                inner_samples: 20,
                random_designs: 50,
                common_random_numbers: true,
                exchange: true,
                proposal: Proposal::Laplace,
            },
        }
    }

    /// The problem sizes of the original study.
    pub fn full() -> Self {
        let mut c = Self::desk();
        c.scale = Scale::Full;
        c.conddiff = ConddiffConfig {
            steps: 100,
            dt: 0.01,
            noise_variance: 0.1,
            input_window: [21, 10],
            output_window: [61, 10],
        };
        c.burgers.grid = 100;
        c.burgers.time_step = 1e-4;
        c.reduction.samples = 10_000;
        c.estimators = EstimatorConfig {
            pick_freeze_pairs: 10_000,
            normalizer_samples: 100_000,
        };
        c.boed = BoedConfig {
            jacobian_samples: 1000,
            goal_starts: vec![15, 25, 35, 45, 55, 65, 75],
            goal_rank: 5,
            sensors: 10,
            outer_samples: 1000,
            inner_samples: 30,
            random_designs: 250,
            common_random_numbers: true,
            exchange: true,
            proposal: Proposal::Laplace,
        };
        c
    }

    pub fn preset(scale: Scale) -> Self {
        match scale {
            Scale::Desk => Self::desk(),
            Scale::Full => Self::full(),
        }
    }

    /// Parses TOML text, layering it over the selected preset, and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_str_scaled(text, None)
    }

    /// As [`Self::from_toml_str`], with `scale` forcing the preset and
    /// overriding any `scale` key in the text.
    pub fn from_toml_str_scaled(text: &str, scale: Option<Scale>) -> Result<Self> {
        let mut user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(forced) = scale {
            user.insert("scale".into(), toml::Value::try_from(forced).map_err(|e| Error::Config(e.to_string()))?);
        }
        let scale = match user.get("scale") {
            None => Scale::Desk,
            Some(v) => v
                .clone()
                .try_into::<Scale>()
                .map_err(|_| Error::Config(format!("scale must be \"desk\" or \"full\", got {v}")))?,
        };
        let base = toml::Table::try_from(Self::preset(scale)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, user);
        let config: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path, scale: Option<Scale>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str_scaled(&text, scale)
    }

    /// Canonical TOML rendering, used for hashing and the manifest.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let c = &self.conddiff;
        if c.steps == 0 {
            return fail("conddiff.steps must be positive".into());
        }
        positive("conddiff.dt", c.dt)?;
        positive("conddiff.noise_variance", c.noise_variance)?;
        window("conddiff.input_window", c.input_window, c.steps)?;
        window("conddiff.output_window", c.output_window, c.steps)?;

        let b = &self.burgers;
        if b.grid < 3 {
            return fail("burgers.grid must be at least 3".into());
        }
        for (name, v) in [
            ("burgers.final_time", b.final_time),
            ("burgers.time_step", b.time_step),
            ("burgers.noise_variance", b.noise_variance),
            ("burgers.length_scale", b.length_scale),
            ("burgers.prior_variance", b.prior_variance),
        ] {
            positive(name, v)?;
        }
        if !(b.viscosity >= 0.0 && b.viscosity.is_finite()) {
            return fail(format!("burgers.viscosity must be non-negative, got {}", b.viscosity));
        }

        let r = &self.reduction;
        let n = c.steps;
        rank("reduction.r", r.r, n)?;
        rank("reduction.s", r.s, n)?;
        if r.samples == 0 {
            return fail("reduction.samples must be positive".into());
        }
        if r.max_iter == 0 {
            return fail("reduction.max_iter must be positive".into());
        }
        if !(r.stall_tol >= 0.0) {
            return fail("reduction.stall_tol must be non-negative".into());
        }
        if r.inits == 0 {
            return fail("reduction.inits must be positive".into());
        }
        if r.ranks.is_empty() {
            return fail("reduction.ranks must not be empty".into());
        }
        for &k in &r.ranks {
            rank("reduction.ranks entry", k, n)?;
        }
        if !(r.cca_ridge >= 0.0 && r.cca_ridge.is_finite()) {
            return fail("reduction.cca_ridge must be non-negative".into());
        }

        let e = &self.estimators;
        if e.pick_freeze_pairs == 1 {
            return fail("estimators.pick_freeze_pairs must be 0 (skip) or at least 2".into());
        }
        if e.normalizer_samples < 2 {
            return fail("estimators.normalizer_samples must be at least 2".into());
        }

        let o = &self.boed;
        if o.jacobian_samples == 0 {
            return fail("boed.jacobian_samples must be positive".into());
        }
        if o.goal_starts.is_empty() {
            return fail("boed.goal_starts must not be empty".into());
        }
        for &start in &o.goal_starts {
            window("boed.goal_starts entry", [start, o.goal_rank], b.grid)?;
        }
        rank("boed.sensors", o.sensors, b.grid)?;
        if o.outer_samples < 2 || o.inner_samples < 2 {
            return fail("boed.outer_samples and boed.inner_samples must be at least 2".into());
        }
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
    }
}

fn rank(name: &str, k: usize, max: usize) -> Result<()> {
    if k == 0 || k > max {
        return Err(Error::Config(format!("{name} = {k} must lie in 1..={max}")));
    }
    Ok(())
}

fn window(name: &str, [start, len]: [usize; 2], n: usize) -> Result<()> {
    if start == 0 || len == 0 || start + len - 1 > n {
        return Err(Error::Config(format!(
            "{name} [{start}, {len}] must satisfy 1 <= start and start + length - 1 <= {n}"
        )));
    }
    Ok(())
}

/// Recursively overlays `over` onto `base`; non-table values replace.
fn merge(mut base: toml::Table, over: toml::Table) -> toml::Table {
    for (k, v) in over {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                base.insert(k, toml::Value::Table(merge(b, o)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}
