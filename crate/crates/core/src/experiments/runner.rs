//! Runs one experiment from a validated config and writes its CSV files
//! plus `manifest.json` into `<output_dir>/<experiment>/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::burgers::BurgersModel;
use super::conddiff::ConditionedDiffusion;
use super::config::{ExperimentConfig, ExperimentKind, Proposal};
use super::matern::burgers_prior;
use crate::boed::{
    diagonal_csv, eim_design, linearized_exchange_design, pca_eim_sensors, random_designs, relaxed_design,
    select_sensors_diag, GoalOperator, SensorDesign,
};
use crate::error::{Error, Result};
use crate::gsa::{estimate_normalizer, FactorSet, IndexKind, SobolBoundCalculator, SobolReport};
use crate::io::{fmt_f64, matrix_columns_csv, CsvTable};
use crate::model::Model;
use crate::oracles::{conditional_expectation_error, sobol_pick_freeze, LaplaceEigSampler, MCEstimate, NestedEigSampler, SobolKind};
use crate::prior::{GaussianPrior, NoiseModel};
use crate::samples::{sample_jacobians, sample_outputs, JacobianSampleSet};
use crate::subspace::{
    alternating_decomposition, cca, diag_hx, diag_hy, error_sandwich, joint_dr, optimal_ur, optimal_vs, pca_input,
    pca_output, OrthonormalBasis, Space,
};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: ExperimentKind,
    pub crate_version: String,
    /// Git-style blob hash of the experiment name plus canonical config.
    pub input_hash: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub conventions: BTreeMap<String, String>,
    pub files: Vec<FileEntry>,
    pub summary: Value,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// SHA-256 over `"blob <len>\0" + content`, hex-encoded.
pub fn git_blob_sha256(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn input_hash(kind: ExperimentKind, config: &ExperimentConfig) -> String {
    let text = format!("experiment = \"{}\"\n{}", kind.name(), config.to_toml());
    git_blob_sha256(text.as_bytes())
}

/// Collected outputs of one run, written only after all computation succeeds.
struct Outputs {
    tables: Vec<(String, CsvTable)>,
    summary: serde_json::Map<String, Value>,
}

impl Outputs {
    fn new() -> Self {
        Self {
            tables: Vec::new(),
            summary: serde_json::Map::new(),
        }
    }

    fn table(&mut self, name: impl Into<String>, table: CsvTable) {
        self.tables.push((name.into(), table));
    }

    fn note(&mut self, key: &str, value: Value) {
        self.summary.insert(key.to_string(), value);
    }
}

pub fn run_experiment(kind: ExperimentKind, config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let out = match kind {
        ExperimentKind::ConddiffGoal => conddiff_goal(config)?,
        ExperimentKind::ConddiffSobol => conddiff_sobol(config)?,
        ExperimentKind::ConddiffCoupled => conddiff_coupled(config)?,
        ExperimentKind::ConddiffConvergence => conddiff_convergence(config)?,
        ExperimentKind::ConddiffRankSweep => conddiff_rank_sweep(config)?,
        ExperimentKind::BurgersBoed => burgers_boed(config)?,
    };
    let dir = config.output_dir.join(kind.name());
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for (name, table) in &out.tables {
        let text = table.render();
        std::fs::write(dir.join(name), &text)
            .map_err(|e| Error::Config(format!("cannot write {}: {e}", dir.join(name).display())))?;
        files.push(FileEntry {
            name: name.clone(),
            sha256: git_blob_sha256(text.as_bytes()),
            rows: table.len(),
        });
    }
    let manifest = Manifest {
        experiment: kind,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        input_hash: input_hash(kind, config),
        config: config.clone(),
        seed: config.seed,
        conventions: conventions(kind, config),
        files,
        summary: Value::Object(out.summary),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(MANIFEST_NAME), text)
        .map_err(|e| Error::Config(format!("cannot write manifest in {}: {e}", dir.display())))?;
    Ok(RunOutcome { dir, manifest })
}

fn conventions(kind: ExperimentKind, config: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut c = BTreeMap::new();
    c.insert("indices".into(), "1-based in all CSV files".into());
    if kind == ExperimentKind::BurgersBoed {
        let b = &config.burgers;
        c.insert(
            "burgers_scheme".into(),
            "finite volume, local Lax-Friedrichs flux with wave speed sqrt(a^2+b^2+1e-16), RK4".into(),
        );
        c.insert(
            "matern".into(),
            format!(
                "nu=2.5, length={}, variance={}, distance={}",
                b.length_scale,
                b.prior_variance,
                if b.periodic_distance { "periodic" } else { "euclidean" }
            ),
        );
        c.insert("coordinates".into(), "physical (prior not whitened)".into());
    } else {
        c.insert("increment_scaling".into(), "u_{k+1} = u_k + f(u_k) dt + sqrt(dt) x_{k+1}".into());
        c.insert("prior".into(), "standard normal".into());
    }
    c
}

/// Reads a run directory, re-hashes its files and renders a summary.
pub fn report(dir: &Path) -> Result<String> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("malformed manifest {}: {e}", path.display())))?;
    let mut out = format!(
        "experiment: {}\nscale: {:?}\nseed: {}\ninput hash: {}\n",
        manifest.experiment, manifest.config.scale, manifest.seed, manifest.input_hash
    );
    out.push_str("files:\n");
    for f in &manifest.files {
        let status = match std::fs::read(dir.join(&f.name)) {
            Ok(bytes) if git_blob_sha256(&bytes) == f.sha256 => "ok",
            Ok(_) => "MODIFIED",
            Err(_) => "MISSING",
        };
        out.push_str(&format!("  {:<32} {:>6} rows  {status}\n", f.name, f.rows));
    }
    out.push_str("summary:\n");
    if let Value::Object(map) = &manifest.summary {
        for (k, v) in map {
            out.push_str(&format!("  {k}: {v}\n"));
        }
    }
    Ok(out)
}

struct ConddiffSetup {
    model: Arc<ConditionedDiffusion>,
    prior: GaussianPrior,
    samples: JacobianSampleSet,
}

fn conddiff_setup(config: &ExperimentConfig) -> Result<ConddiffSetup> {
    let c = &config.conddiff;
    let model = Arc::new(ConditionedDiffusion::new(c.steps, c.dt)?);
    let prior = GaussianPrior::standard(c.steps);
    let samples = sample_jacobians(
        model.clone(),
        &prior,
        config.reduction.samples,
        config.seed,
        config.reduction.storage.into(),
    )?;
    Ok(ConddiffSetup { model, prior, samples })
}

fn window_basis(n: usize, [start, len]: [usize; 2], space: Space) -> Result<OrthonormalBasis> {
    OrthonormalBasis::window(n, start - 1, len, space)
}

fn indexed_column(name: &str, values: &DVector<f64>) -> CsvTable {
    let mut t = CsvTable::new(["index", name]);
    for (i, v) in values.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), fmt_f64(*v)]);
    }
    t
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, |m, v| m.max(v.abs()))
}

fn conddiff_goal(config: &ExperimentConfig) -> Result<Outputs> {
    let setup = conddiff_setup(config)?;
    let c = &config.conddiff;
    let n = c.steps;
    let (r, s) = (config.reduction.r, config.reduction.s);
    let mut out = Outputs::new();

    let (_, paths) = sample_outputs(setup.model.as_ref(), &setup.prior, 5, config.seed)?;
    let mut header = vec!["time".to_string()];
    header.extend((1..=paths.nrows()).map(|i| format!("path{i}")));
    let mut table = CsvTable::new(header);
    for k in 0..n {
        let mut row = vec![fmt_f64((k + 1) as f64 * c.dt)];
        row.extend(paths.column(k).iter().map(|&v| fmt_f64(v)));
        table.push(row);
    }
    out.table("paths.csv", table);

    let u_goal = window_basis(n, c.input_window, Space::Input)?;
    let (v_star, spec_y) = optimal_vs(&setup.samples, &u_goal, s)?;
    let hy = diag_hy(&setup.samples, &u_goal)?;
    out.table("vs_given_ur.csv", matrix_columns_csv(v_star.matrix(), "v"));
    out.table("diag_hy.csv", indexed_column("diag_hy", &hy));

    let v_goal = window_basis(n, c.output_window, Space::Output)?;
    let (u_star, spec_x) = optimal_ur(&setup.samples, &v_goal, r)?;
    let hx = diag_hx(&setup.samples, &v_goal)?;
    out.table("ur_given_vs.csv", matrix_columns_csv(u_star.matrix(), "u"));
    out.table("diag_hx.csv", indexed_column("diag_hx", &hx));

    let mut spectra = CsvTable::new(["k", "eig_hy_given_ur", "eig_hx_given_vs"]);
    for k in 0..r.max(s) {
        let cell = |v: &DVector<f64>| v.get(k).map(|x| fmt_f64(*x)).unwrap_or_default();
        spectra.push(vec![(k + 1).to_string(), cell(spec_y.values()), cell(spec_x.values())]);
    }
    out.table("spectra.csv", spectra);

    let before = c.input_window[0] - 1;
    let after = c.output_window[0] + c.output_window[1] - 1;
    out.note("max_diag_hy_before_input_window", json!(max_abs(hy.iter().take(before).copied())));
    out.note("max_diag_hx_after_output_window", json!(max_abs(hx.iter().skip(after).copied())));
    out.note("max_vs_entry_before_input_window", json!(max_abs(v_star.matrix().rows(0, before).iter().copied())));
    out.note("max_ur_entry_after_output_window", json!(max_abs(u_star.matrix().rows(after, n - after).iter().copied())));
    Ok(out)
}

fn conddiff_sobol(config: &ExperimentConfig) -> Result<Outputs> {
    let setup = conddiff_setup(config)?;
    let c = &config.conddiff;
    let n = c.steps;
    let v_goal = window_basis(n, c.output_window, Space::Output)?;
    let normalizer = estimate_normalizer(
        setup.model.as_ref(),
        &setup.prior,
        &v_goal,
        config.estimators.normalizer_samples,
        config.seed,
    )?;
    let calc = SobolBoundCalculator::new(&setup.samples, &v_goal, &setup.prior, normalizer.value)?;
    let goal = format!("outputs {}..={}", c.output_window[0], c.output_window[0] + c.output_window[1] - 1);
    let mut report = SobolReport::new(goal, normalizer.value, Some(normalizer.standard_error));
    let pairs = config.estimators.pick_freeze_pairs;
    let mut estimates = Vec::with_capacity(n);
    for i in 0..n {
        let tau = FactorSet::singleton(i, n)?;
        let est = if pairs > 0 {
            Some(sobol_pick_freeze(
                setup.model.as_ref(),
                &setup.prior,
                &v_goal,
                tau.indices(),
                SobolKind::Total,
                pairs,
                config.seed,
            )?)
        } else {
            None
        };
        report.push(&tau, IndexKind::Total, calc.total(&tau), est.as_ref());
        estimates.push(est);
    }
    let mut out = Outputs::new();
    out.table("sobol_total.csv", report.to_csv());

    // Factor rankings by the upper bound and by the oracle, most influential first.
    let uppers: Vec<f64> = report.records.iter().map(|r| r.upper).collect();
    let by_upper = ranking(&uppers);
    let by_oracle = if pairs > 0 {
        Some(ranking(&estimates.iter().map(|e| e.map_or(0.0, |e| e.value)).collect::<Vec<_>>()))
    } else {
        None
    };
    let mut table = CsvTable::new(["rank", "factor_by_upper_bound", "factor_by_estimate"]);
    for k in 0..n {
        table.push(vec![
            (k + 1).to_string(),
            (by_upper[k] + 1).to_string(),
            by_oracle.as_ref().map(|o| (o[k] + 1).to_string()).unwrap_or_default(),
        ]);
    }
    out.table("rankings.csv", table);

    let covered = estimates
        .iter()
        .zip(&report.records)
        .filter_map(|(e, r)| e.map(|e| e.value + 3.0 * e.standard_error >= r.lower && e.value - 3.0 * e.standard_error <= r.upper))
        .filter(|&ok| ok)
        .count();
    out.note("normalizer", json!(normalizer.value));
    out.note("normalizer_stderr", json!(normalizer.standard_error));
    out.note("factors_with_estimate_inside_bounds", json!(covered));
    Ok(out)
}

/// Indices sorted by decreasing value; ties keep the lower index first.
fn ranking(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

fn bounds_row(
    table: &mut CsvTable,
    label: &str,
    setup: &ConddiffSetup,
    u_r: &OrthonormalBasis,
    v_s: &OrthonormalBasis,
    config: &ExperimentConfig,
) -> Result<()> {
    let sandwich = error_sandwich(&setup.samples, u_r, v_s, &setup.prior)?;
    let est = pick_freeze_error(setup, u_r, v_s, config)?;
    table.push(vec![
        label.to_string(),
        fmt_f64(sandwich.lower),
        est.map(|e| fmt_f64(e.value)).unwrap_or_default(),
        est.map(|e| fmt_f64(e.standard_error)).unwrap_or_default(),
        fmt_f64(sandwich.upper),
    ]);
    Ok(())
}

fn pick_freeze_error(
    setup: &ConddiffSetup,
    u_r: &OrthonormalBasis,
    v_s: &OrthonormalBasis,
    config: &ExperimentConfig,
) -> Result<Option<MCEstimate>> {
    let pairs = config.estimators.pick_freeze_pairs;
    if pairs == 0 {
        return Ok(None);
    }
    conditional_expectation_error(setup.model.as_ref(), &setup.prior, u_r, v_s, pairs, config.seed).map(Some)
}

fn conddiff_coupled(config: &ExperimentConfig) -> Result<Outputs> {
    let setup = conddiff_setup(config)?;
    let n = config.conddiff.steps;
    let red = &config.reduction;
    let v_init = OrthonormalBasis::random(n, red.s, config.seed, Space::Output)?;
    let pair = alternating_decomposition(&setup.samples, red.r, red.s, &v_init, red.max_iter, red.stall_tol)?;
    let (x, y) = sample_outputs(setup.model.as_ref(), &setup.prior, red.samples, config.seed)?;
    let (pca_u, _) = pca_input(&x, red.r)?;
    let (pca_v, _) = pca_output(&y, red.s)?;

    let mut out = Outputs::new();
    out.table("coupled_ur.csv", matrix_columns_csv(pair.u_r.matrix(), "u"));
    out.table("coupled_vs.csv", matrix_columns_csv(pair.v_s.matrix(), "v"));
    out.table("pca_ur.csv", matrix_columns_csv(pca_u.matrix(), "u"));
    out.table("pca_vs.csv", matrix_columns_csv(pca_v.matrix(), "v"));
    let mut history = CsvTable::new(["half_step", "objective"]);
    for (k, v) in pair.objective_history.iter().enumerate() {
        history.push(vec![(k + 1).to_string(), fmt_f64(*v)]);
    }
    out.table("history.csv", history);

    let mut bounds = CsvTable::new(["method", "lower", "estimate", "stderr", "upper"]);
    bounds_row(&mut bounds, "coupled", &setup, &pair.u_r, &pair.v_s, config)?;
    bounds_row(&mut bounds, "pca", &setup, &pca_u, &pca_v, config)?;
    out.table("bounds.csv", bounds);
    out.note("iterations", json!(pair.iterations));
    out.note("objective", json!(pair.objective()));
    Ok(out)
}

fn conddiff_convergence(config: &ExperimentConfig) -> Result<Outputs> {
    let setup = conddiff_setup(config)?;
    let n = config.conddiff.steps;
    let red = &config.reduction;
    let mut table = CsvTable::new(["init", "half_step", "objective"]);
    let mut monotone = true;
    let mut worst_late_change = 0.0_f64;
    for init in 0..red.inits {
        let v_init = OrthonormalBasis::random(n, red.s, config.seed.wrapping_add(init as u64), Space::Output)?;
        let pair = alternating_decomposition(&setup.samples, red.r, red.s, &v_init, red.max_iter, red.stall_tol)?;
        let h = &pair.objective_history;
        for (k, v) in h.iter().enumerate() {
            table.push(vec![(init + 1).to_string(), (k + 1).to_string(), fmt_f64(*v)]);
        }
        monotone &= h.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
        // Half-step 6 closes the third full iteration.
        if let Some(&ref3) = h.get(5) {
            for &v in &h[5..] {
                worst_late_change = worst_late_change.max((v - ref3).abs() / ref3.abs().max(f64::MIN_POSITIVE));
            }
        }
    }
    let mut out = Outputs::new();
    out.table("histories.csv", table);
    out.note("all_nondecreasing", json!(monotone));
    out.note("max_relative_change_after_iteration_3", json!(worst_late_change));
    Ok(out)
}

fn conddiff_rank_sweep(config: &ExperimentConfig) -> Result<Outputs> {
    let setup = conddiff_setup(config)?;
    let n = config.conddiff.steps;
    let red = &config.reduction;
    let normalizer = estimate_normalizer(
        setup.model.as_ref(),
        &setup.prior,
        &OrthonormalBasis::identity(n, Space::Output),
        config.estimators.normalizer_samples,
        config.seed,
    )?;
    let (x, y) = sample_outputs(setup.model.as_ref(), &setup.prior, red.samples, config.seed)?;
    let mut table = CsvTable::new([
        "rank",
        "method",
        "lower",
        "upper",
        "relative_lower",
        "relative_upper",
        "estimate",
        "stderr",
        "relative_estimate",
    ]);
    let tr = normalizer.value;
    for &k in &red.ranks {
        let v_init = OrthonormalBasis::random(n, k, config.seed, Space::Output)?;
        let coupled = alternating_decomposition(&setup.samples, k, k, &v_init, red.max_iter, red.stall_tol)?;
        let (joint_u, joint_v) = joint_dr(&setup.samples, k, k)?;
        let (pca_u, _) = pca_input(&x, k)?;
        let (pca_v, _) = pca_output(&y, k)?;
        let c = cca(&x, &y, k, k, red.cca_ridge)?;
        let methods: [(&str, &OrthonormalBasis, &OrthonormalBasis); 4] = [
            ("coupled", &coupled.u_r, &coupled.v_s),
            ("joint-dr", &joint_u, &joint_v),
            ("pca", &pca_u, &pca_v),
            ("cca", &c.u_r, &c.v_s),
        ];
        for (label, u, v) in methods {
            let sandwich = error_sandwich(&setup.samples, u, v, &setup.prior)?;
            let est = pick_freeze_error(&setup, u, v, config)?;
            let opt = |f: Option<f64>| f.map(fmt_f64).unwrap_or_default();
            table.push(vec![
                k.to_string(),
                label.to_string(),
                fmt_f64(sandwich.lower),
                fmt_f64(sandwich.upper),
                fmt_f64(sandwich.lower / tr),
                fmt_f64(sandwich.upper / tr),
                opt(est.map(|e| e.value)),
                opt(est.map(|e| e.standard_error)),
                opt(est.map(|e| e.value / tr)),
            ]);
        }
    }
    let mut out = Outputs::new();
    out.table("rank_sweep.csv", table);
    out.note("trace_cov_g", json!(normalizer.value));
    out.note("trace_cov_g_stderr", json!(normalizer.standard_error));
    Ok(out)
}

struct BurgersSetup {
    model: Arc<BurgersModel>,
    prior: GaussianPrior,
    noise: NoiseModel,
}

fn burgers_setup(config: &ExperimentConfig) -> Result<BurgersSetup> {
    let b = &config.burgers;
    let model = Arc::new(BurgersModel::new(b.grid, b.viscosity, b.final_time, b.time_step)?);
    let prior = burgers_prior(&model.grid_points(), b.length_scale, b.prior_variance, b.periodic_distance)?;
    let noise = NoiseModel::new(b.noise_variance, b.grid)?;
    Ok(BurgersSetup { model, prior, noise })
}

fn sensors_label(design: &SensorDesign) -> String {
    design.indices().iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(" ")
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

enum EigSampler<'a> {
    Prior(NestedEigSampler),
    Laplace(LaplaceEigSampler<'a>),
}

impl EigSampler<'_> {
    fn estimate_coordinates(&self, tau: &[usize]) -> Result<MCEstimate> {
        match self {
            EigSampler::Prior(s) => s.estimate_coordinates(tau),
            EigSampler::Laplace(s) => s.estimate_coordinates(tau),
        }
    }
}

fn burgers_boed(config: &ExperimentConfig) -> Result<Outputs> {
    let setup = burgers_setup(config)?;
    let n = config.burgers.grid;
    let o = &config.boed;
    let model: &dyn Model = setup.model.as_ref();
    let mut out = Outputs::new();

    let points = setup.model.grid_points();
    let mut rng = crate::samples::seeded_rng(config.seed, crate::samples::streams::OUTPUT_SAMPLES);
    let draws: Vec<DVector<f64>> = (0..5).map(|_| setup.prior.sample(&mut rng)).collect();
    let mean_final = model.forward(setup.prior.mean())?;
    let mut header: Vec<String> = vec!["x".into(), "prior_mean".into(), "final_state_of_mean".into()];
    header.extend((1..=draws.len()).map(|i| format!("prior_sample{i}")));
    let mut prior_table = CsvTable::new(header);
    for i in 0..n {
        let mut row = vec![fmt_f64(points[i]), fmt_f64(setup.prior.mean()[i]), fmt_f64(mean_final[i])];
        row.extend(draws.iter().map(|d| fmt_f64(d[i])));
        prior_table.push(row);
    }
    out.table("prior.csv", prior_table);

    let samples = sample_jacobians(setup.model.clone(), &setup.prior, o.jacobian_samples, config.seed, config.reduction.storage.into())?;
    let (_, y) = sample_outputs(model, &setup.prior, o.jacobian_samples, config.seed)?;
    let pca_eim = pca_eim_sensors(&y, o.sensors)?;
    let randoms = random_designs(n, o.sensors, o.random_designs, config.seed)?;

    let mut eig_table = CsvTable::new(["goal_start", "method", "replicate", "eig", "stderr", "sensors"]);
    let mut goal_summaries = Vec::new();
    let mut design_index = 0_u64;
    for &start in &o.goal_starts {
        let goal = GoalOperator::window(n, start - 1, o.goal_rank)?;
        let hy = diag_hy(&samples, goal.basis())?;
        out.table(format!("diag_hy_goal{start}.csv"), diagonal_csv(&hy));
        let tau_star = select_sensors_diag(&samples, &goal, o.sensors)?;
        let (relaxed, _) = relaxed_design(&samples, &goal, o.sensors)?;
        out.table(format!("relaxed_modes_goal{start}.csv"), matrix_columns_csv(relaxed.matrix(), "v"));
        let eim = eim_design(&relaxed)?;

        let mut named: Vec<(&str, SensorDesign)> = vec![("diag-top-k", tau_star), ("eim", eim), ("pca-eim", pca_eim.clone())];
        if o.exchange {
            named.push(("linearized-exchange", linearized_exchange_design(model, &setup.prior, &setup.noise, &goal, o.sensors)?));
        }

        let build = |seed: u64| -> Result<EigSampler<'_>> {
            Ok(match o.proposal {
                Proposal::Prior => EigSampler::Prior(NestedEigSampler::new(
                    model,
                    &setup.prior,
                    &setup.noise,
                    Some(goal.basis()),
                    o.outer_samples,
                    o.inner_samples,
                    seed,
                )?),
                Proposal::Laplace => EigSampler::Laplace(LaplaceEigSampler::new(
                    model,
                    &setup.prior,
                    &setup.noise,
                    Some(goal.basis()),
                    o.outer_samples,
                    o.inner_samples,
                    seed,
                )?),
            })
        };
        let shared = if o.common_random_numbers { Some(build(config.seed)?) } else { None };
        let mut evaluate = |design: &SensorDesign| -> Result<MCEstimate> {
            design_index += 1;
            match &shared {
                Some(sampler) => sampler.estimate_coordinates(design.indices()),
                None => build(config.seed.wrapping_add(design_index))?.estimate_coordinates(design.indices()),
            }
        };

        let mut method_eigs = BTreeMap::new();
        for (label, design) in &named {
            let est = evaluate(design)?;
            eig_table.push(vec![
                start.to_string(),
                label.to_string(),
                "0".into(),
                fmt_f64(est.value),
                fmt_f64(est.standard_error),
                sensors_label(design),
            ]);
            method_eigs.insert(label.to_string(), est.value);
        }
        let mut random_values = Vec::with_capacity(randoms.len());
        for (k, design) in randoms.iter().enumerate() {
            let est = evaluate(design)?;
            eig_table.push(vec![
                start.to_string(),
                "random".into(),
                (k + 1).to_string(),
                fmt_f64(est.value),
                fmt_f64(est.standard_error),
                sensors_label(design),
            ]);
            random_values.push(est.value);
        }
        let random_median = if random_values.is_empty() { f64::NAN } else { median(&mut random_values) };
        goal_summaries.push(json!({
            "goal_start": start,
            "eig": method_eigs,
            "random_median": random_median,
        }));
    }
    out.table("eig.csv", eig_table);
    out.note("goals", Value::Array(goal_summaries));
    out.note("time_step", json!(setup.model.time_step()));
    out.note("proposal", serde_json::to_value(o.proposal).expect("enum serializes"));
    out.note("steps", json!(setup.model.steps()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::desk();
        c.output_dir = dir.to_path_buf();
        c.conddiff.steps = 12;
        c.conddiff.dt = 1.0 / 12.0;
        c.conddiff.input_window = [3, 3];
        c.conddiff.output_window = [6, 3];
        c.reduction.r = 3;
        c.reduction.s = 3;
        c.reduction.samples = 30;
        c.reduction.inits = 2;
        c.reduction.ranks = vec![2, 3];
        c.estimators.pick_freeze_pairs = 50;
        c.estimators.normalizer_samples = 50;
        c.burgers.grid = 12;
        c.burgers.time_step = 1e-3;
        c.burgers.final_time = 0.02;
        c.boed = crate::experiments::config::BoedConfig {
            jacobian_samples: 20,
            goal_starts: vec![2, 7],
            goal_rank: 2,
            sensors: 3,
            outer_samples: 10,
            inner_samples: 4,
            random_designs: 3,
            common_random_numbers: true,
            exchange: true,
            proposal: Proposal::Laplace,
        };
        c
    }

    #[test]
    fn burgers_boed_runs_with_prior_proposal_and_fresh_draws() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny(dir.path());
        c.boed.proposal = Proposal::Prior;
        c.boed.common_random_numbers = false;
        let out = run_experiment(ExperimentKind::BurgersBoed, &c).unwrap();
        assert_eq!(out.manifest.summary["proposal"], "prior");
        assert!(!report(&out.dir).unwrap().contains("MODIFIED"));
    }

    #[test]
    fn blob_hash_matches_git_format() {
        // `printf 'hello\n' | git hash-object --stdin` under sha256 object format.
        assert_eq!(git_blob_sha256(b"hello\n"), "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4");
    }

    #[test]
    fn every_experiment_runs_and_reruns_identically() {
        let tmp = tempfile::tempdir().unwrap();
        let config = tiny(tmp.path());
        for kind in ExperimentKind::ALL {
            let first = run_experiment(kind, &config).unwrap();
            let second = run_experiment(kind, &config).unwrap();
            assert_eq!(first.manifest, second.manifest, "{kind}");
            assert!(!first.manifest.files.is_empty());
            let text = report(&first.dir).unwrap();
            assert!(!text.contains("MODIFIED") && !text.contains("MISSING"), "{text}");
        }
    }

    #[test]
    fn report_flags_modified_files() {
        let tmp = tempfile::tempdir().unwrap();
        let config = tiny(tmp.path());
        let run = run_experiment(ExperimentKind::ConddiffGoal, &config).unwrap();
        std::fs::write(run.dir.join("diag_hy.csv"), "tampered").unwrap();
        assert!(report(&run.dir).unwrap().contains("MODIFIED"));
    }
}
