//! Experiment orchestration.
//!
//! An [`ExperimentConfig`] names a system, an observable, the orders `q` and
//! the estimators to run. [`run_experiment`] simulates every `(q, run)` cell
//! on a bounded rayon pool, aggregates the per-run estimates, compares them
//! with the analytic oracles where one exists, and writes a CSV of
//! [`SpectrumResult`] rows plus a JSON [`Manifest`] from which the run can be
//! replayed.
//!
//! The config schema is documented in `configs/README.md`.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{self, Density, GenericityReport, IntervalModel};
use crate::dynamics::{GasketParams, HenonParams, MapSystem, DOUBLING_ESTIMATION_JITTER};
use crate::evt::{self, EIEstimate, ResultMeta, SpectrumKind, SpectrumResult};
use crate::matching::{self, MatchConfig, Metric};
use crate::observables::{self, BranchMap, Observable, ObservableKind, PiecewiseBranch};
use crate::seeding;

/// Column order of result CSV files.
pub const CSV_HEADER: [&str; 12] = [
    "kind",
    "system",
    "observable",
    "q",
    "run_count",
    "mean",
    "std",
    "n_total",
    "block_size",
    "quantile",
    "K",
    "seed",
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config at `{path}`: {reason}")]
    Validation { path: String, reason: String },
    #[error("cannot parse {}: {source}", path.display())]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{}, record {record}: {reason}", path.display())]
    Format {
        path: PathBuf,
        record: usize,
        reason: String,
    },
    #[error("q = {q}: {failed} of {runs} runs failed (first error: {first})")]
    TooManyFailures {
        q: usize,
        failed: usize,
        runs: usize,
        first: String,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// Process exit code: 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Parse { .. } => 1,
            _ => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> CliError {
    CliError::Validation {
        path: path.into(),
        reason: reason.into(),
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Which estimators a run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    EstimateDq,
    EstimateEi,
    Analytic,
    Genericity,
    All,
}

impl Mode {
    fn simulates(self) -> bool {
        matches!(self, Mode::EstimateDq | Mode::EstimateEi | Mode::All)
    }

    fn fits_gumbel(self) -> bool {
        matches!(self, Mode::EstimateDq | Mode::All)
    }

    fn estimates_ei(self) -> bool {
        matches!(self, Mode::EstimateEi | Mode::All)
    }
}

/// System name plus a flat parameter map, e.g.
/// `{"name": "henon", "params": {"a": 1.4, "b": 0.3}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl SystemSpec {
    pub fn new(name: &str, params: &[(&str, f64)]) -> Self {
        Self {
            name: name.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    fn allowed_keys(&self) -> Option<&'static [&'static str]> {
        match self.name.as_str() {
            "doubling" => Some(&["jitter"]),
            "henon" => Some(&["a", "b", "burn_in", "escape_radius"]),
            "gasket" => Some(&["p0", "p1", "p2", "L"]),
            _ => None,
        }
    }

    fn count(&self, key: &str, default: usize) -> Result<usize> {
        match self.params.get(key) {
            None => Ok(default),
            Some(&v) if v >= 0.0 && v.fract() == 0.0 && v < 1e15 => Ok(v as usize),
            Some(v) => Err(invalid(
                format!("system.params.{key}"),
                format!("{v} is not a nonnegative integer"),
            )),
        }
    }

    /// Builds and validates the system.
    pub fn build(&self) -> Result<MapSystem> {
        let keys = self
            .allowed_keys()
            .ok_or_else(|| invalid("system.name", format!("unknown system `{}`", self.name)))?;
        if let Some(k) = self.params.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(invalid(
                format!("system.params.{k}"),
                format!("`{}` accepts {}", self.name, keys.join(", ")),
            ));
        }
        let get = |k: &str, d: f64| self.params.get(k).copied().unwrap_or(d);
        let system = match self.name.as_str() {
            "doubling" => MapSystem::Doubling {
                jitter: get("jitter", DOUBLING_ESTIMATION_JITTER),
            },
            "henon" => {
                let d = HenonParams::default();
                MapSystem::Henon(HenonParams {
                    a: get("a", d.a),
                    b: get("b", d.b),
                    burn_in: self.count("burn_in", d.burn_in)?,
                    escape_radius: get("escape_radius", d.escape_radius),
                    ..d
                })
            }
            _ => {
                let d = GasketParams::default();
                MapSystem::Gasket(GasketParams {
                    weights: [
                        get("p0", d.weights[0]),
                        get("p1", d.weights[1]),
                        get("p2", d.weights[2]),
                    ],
                    depth: self.count("L", d.depth)?,
                    ..d
                })
            }
        };
        system
            .validate()
            .map_err(|e| invalid("system.params", e.to_string()))?;
        Ok(system)
    }

    /// Identifier used in the `system` CSV column, e.g. `henon(a=1.4;b=0.3)`.
    pub fn label(&self) -> String {
        if self.params.is_empty() {
            return self.name.clone();
        }
        let params: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        format!("{}({})", self.name, params.join(";"))
    }
}

/// A catalog name or an inline piecewise interval observable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservableSpec {
    Named(String),
    Piecewise {
        #[serde(default = "default_piecewise_name")]
        name: String,
        branches: Vec<PiecewiseBranch>,
    },
}

fn default_piecewise_name() -> String {
    "piecewise".into()
}

impl ObservableSpec {
    pub fn build(&self) -> Result<Observable> {
        match self {
            ObservableSpec::Named(name) => {
                observables::catalog(name).map_err(|e| invalid("observable", e.to_string()))
            }
            ObservableSpec::Piecewise { name, branches } => {
                Observable::piecewise(name, branches.clone())
                    .map_err(|e| invalid("observable.branches", e.to_string()))
            }
        }
    }

    pub fn label(&self) -> &str {
        match self {
            ObservableSpec::Named(name) => name,
            ObservableSpec::Piecewise { name, .. } => name,
        }
    }
}

/// Output file names, resolved against the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub genericity: PathBuf,
    /// When set, each `(q, run)` series is dumped as `q{q}_run{run}.bin`.
    pub series_dir: Option<PathBuf>,
    /// Append rows to an existing CSV instead of replacing it.
    pub append: bool,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            csv: "results.csv".into(),
            manifest: "manifest.json".into(),
            genericity: "genericity.json".into(),
            series_dir: None,
            append: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub observable: ObservableSpec,
    pub q_list: Vec<usize>,
    pub n_total: usize,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(rename = "K", default = "default_k")]
    pub k: usize,
    pub runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default)]
    pub outputs: Outputs,
    pub mode: Mode,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_resolution")]
    pub analytic_resolution: usize,
    #[serde(default = "default_genericity_samples")]
    pub genericity_samples: usize,
}

fn default_block_size() -> usize {
    50_000
}

fn default_quantile() -> f64 {
    0.999
}

fn default_k() -> usize {
    5
}

fn default_resolution() -> usize {
    analytic::DEFAULT_RESOLUTION
}

fn default_genericity_samples() -> usize {
    10_000
}

impl ExperimentConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| CliError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    /// Checks every field and returns the resolved system and observable.
    pub fn validate(&self) -> Result<(MapSystem, Observable)> {
        if self.q_list.is_empty() {
            return Err(invalid("q_list", "must not be empty"));
        }
        for (i, &q) in self.q_list.iter().enumerate() {
            if q < 2 {
                return Err(invalid(format!("q_list[{i}]"), format!("q = {q} < 2")));
            }
        }
        if self.runs == 0 {
            return Err(invalid("runs", "need at least one run"));
        }
        if self.n_total == 0 {
            return Err(invalid("n_total", "must be positive"));
        }
        if self.block_size == 0 {
            return Err(invalid("block_size", "must be positive"));
        }
        if self.mode.fits_gumbel() && self.n_total < 2 * self.block_size {
            return Err(invalid(
                "n_total",
                format!(
                    "{} < 2 * block_size = {}",
                    self.n_total,
                    2 * self.block_size
                ),
            ));
        }
        if self.mode.estimates_ei() {
            if !(self.quantile > 0.0 && self.quantile < 1.0) {
                return Err(invalid(
                    "quantile",
                    format!("{} outside (0,1)", self.quantile),
                ));
            }
            if self.k == 0 {
                return Err(invalid("K", "must be at least 1"));
            }
        }
        if self.analytic_resolution == 0 {
            return Err(invalid("analytic_resolution", "must be positive"));
        }
        if self.outputs.csv.as_os_str().is_empty() || self.outputs.manifest.as_os_str().is_empty() {
            return Err(invalid("outputs", "file names must be nonempty"));
        }
        let system = self.system.build()?;
        let obs = self.observable.build()?;
        if obs.in_dim() != system.dim() {
            return Err(invalid(
                "observable",
                format!(
                    "`{}` takes {}-dimensional input, `{}` is {}-dimensional",
                    obs.name(),
                    obs.in_dim(),
                    system.name(),
                    system.dim()
                ),
            ));
        }
        match self.mode {
            Mode::Analytic => {
                let any = self
                    .q_list
                    .iter()
                    .any(|&q| dq_oracle(&system, &obs, q).is_some());
                if interval_model(&system, &obs).is_none() && !any {
                    return Err(invalid(
                        "mode",
                        format!(
                            "no analytic oracle for `{}` observed by `{}`",
                            system.name(),
                            obs.name()
                        ),
                    ));
                }
            }
            Mode::Genericity => {
                if interval_model(&system, &obs).is_none() {
                    return Err(invalid(
                        "mode",
                        "genericity needs an interval map with a piecewise observable",
                    ));
                }
                if self.genericity_samples == 0 {
                    return Err(invalid("genericity_samples", "must be positive"));
                }
            }
            _ => {}
        }
        Ok((system, obs))
    }

    fn meta(&self) -> ResultMeta {
        ResultMeta {
            system: self.system.label(),
            observable: self.observable.label().to_string(),
            n_total: self.n_total,
            block_size: self.block_size,
            quantile: self.quantile,
            k: self.k,
            seed: self.master_seed,
        }
    }
}

/// Interval model for the analytic extremal index, available for the
/// doubling map observed through a piecewise or one-dimensional identity
/// observable.
pub fn interval_model(system: &MapSystem, obs: &Observable) -> Option<IntervalModel> {
    if !matches!(system, MapSystem::Doubling { .. }) {
        return None;
    }
    let branches = match obs.kind() {
        ObservableKind::Piecewise(b) => b.clone(),
        ObservableKind::Identity if obs.in_dim() == 1 => observables::identity_branches(),
        _ => return None,
    };
    IntervalModel::new(observables::doubling_branches(), branches, Density::Uniform).ok()
}

/// Exact `D_q^f` where one is known: 1 for the doubling map under a
/// piecewise-affine observable, the self-similar dimension for the gasket
/// under an invertible linear observable, and the projection value
/// `min(D_q, 1)` for a linear functional with `q <= 2`.
pub fn dq_oracle(system: &MapSystem, obs: &Observable, q: usize) -> Option<f64> {
    match system {
        MapSystem::Doubling { .. } => match obs.kind() {
            ObservableKind::Identity => Some(1.0),
            ObservableKind::Piecewise(b) => b
                .iter()
                .all(|br| matches!(br.map, BranchMap::Affine { slope, .. } if slope != 0.0))
                .then_some(1.0),
            _ => None,
        },
        MapSystem::Gasket(p) => {
            let dq = analytic::dq_self_similar(&p.weights, 0.5, q as f64).ok()?;
            match obs.kind() {
                ObservableKind::Identity => Some(dq),
                ObservableKind::Linear { matrix } if obs.out_dim() == 2 => {
                    let det = matrix[0][0] * matrix[1][1] - matrix[0][1] * matrix[1][0];
                    (det != 0.0).then_some(dq)
                }
                ObservableKind::Linear { .. } if q <= 2 => analytic::hk_projection(dq, 1).ok(),
                _ => None,
            }
        }
        MapSystem::Henon(_) => None,
    }
}

/// Seeds used by one `(q, run)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub q: usize,
    pub run: u64,
    /// `master_seed ^ run`; trajectory `t` uses this seed advanced by `t` jumps.
    pub run_seed: u64,
    pub trajectories: usize,
    pub eval_errors: usize,
    pub error: Option<String>,
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub runs: Vec<RunRecord>,
    pub rows: usize,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| CliError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Overrides `config.threads` when set.
    pub threads: Option<usize>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            threads: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub rows: Vec<SpectrumResult>,
    pub manifest: Manifest,
    pub genericity: Option<GenericityReport>,
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Per-run estimates of one cell.
#[derive(Debug, Clone, Default)]
struct CellEstimate {
    dq: Option<f64>,
    theta_gumbel: Option<f64>,
    ei: Option<EIEstimate>,
    eval_errors: usize,
}

fn run_cell(
    config: &ExperimentConfig,
    system: &MapSystem,
    obs: &Observable,
    q: usize,
    run: u64,
    series_dir: Option<&Path>,
) -> std::result::Result<CellEstimate, String> {
    let mc = MatchConfig::new(q, config.n_total)
        .with_block_size(config.block_size)
        .with_metric(config.metric);
    let series = matching::y_process(system, obs, &mc, config.master_seed, run)
        .map_err(|e| e.to_string())?;
    if let Some(dir) = series_dir {
        let path = dir.join(format!("q{q}_run{run}.bin"));
        matching::write_series(&path, &series.values).map_err(|e| e.to_string())?;
    }
    let mut out = CellEstimate {
        eval_errors: series.eval_errors,
        ..CellEstimate::default()
    };
    if config.mode.fits_gumbel() {
        let fit = evt::fit_gumbel(&series.block_maxima()).map_err(|e| e.to_string())?;
        let dq = evt::dq_from_gumbel(&fit, q).map_err(|e| e.to_string())?;
        out.theta_gumbel = evt::theta_from_gumbel(&fit, q, config.block_size, dq).ok();
        out.dq = Some(dq);
    }
    if config.mode.estimates_ei() {
        out.ei = Some(
            evt::estimate_ei(&series.values, config.quantile, config.k, q)
                .map_err(|e| e.to_string())?,
        );
    }
    Ok(out)
}

fn push_aggregate(
    rows: &mut Vec<SpectrumResult>,
    values: &[f64],
    kind: SpectrumKind,
    q: usize,
    meta: &ResultMeta,
) -> Result<Option<SpectrumResult>> {
    if values.is_empty() {
        return Ok(None);
    }
    let row = evt::aggregate_runs(values, kind, q, meta.clone()).map_err(runtime)?;
    rows.push(row.clone());
    Ok(Some(row))
}

fn exact_row(value: f64, kind: SpectrumKind, q: usize, meta: &ResultMeta) -> SpectrumResult {
    SpectrumResult {
        q,
        estimate_mean: value,
        estimate_std: 0.0,
        run_count: 1,
        kind,
        metadata: meta.clone(),
    }
}

fn delta_row(est: &SpectrumResult, oracle: f64, kind: SpectrumKind) -> SpectrumResult {
    SpectrumResult {
        estimate_mean: est.estimate_mean - oracle,
        kind,
        ..est.clone()
    }
}

/// Results of one experiment before anything is written.
#[derive(Debug, Clone)]
pub struct Computed {
    pub rows: Vec<SpectrumResult>,
    pub records: Vec<RunRecord>,
    pub genericity: Option<GenericityReport>,
}

/// Runs all cells and aggregates them into result rows, ordered by `q` and
/// then by kind. No files are written except optional series dumps.
pub fn compute(
    config: &ExperimentConfig,
    threads: usize,
    series_dir: Option<&Path>,
) -> Result<Computed> {
    let (system, obs) = config.validate()?;
    let meta = config.meta();
    let model = interval_model(&system, &obs);

    let genericity = if config.mode == Mode::Genericity {
        let model = model.as_ref().expect("checked by validate");
        let report = analytic::check_genericity(
            model,
            config.genericity_samples,
            config.k,
            config.master_seed,
        )
        .map_err(runtime)?;
        Some(report)
    } else {
        None
    };

    let cells: Vec<(usize, u64)> = if config.mode.simulates() {
        config
            .q_list
            .iter()
            .flat_map(|&q| (0..config.runs as u64).map(move |r| (q, r)))
            .collect()
    } else {
        Vec::new()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(runtime)?;
    let outcomes: Vec<_> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(q, run)| run_cell(config, &system, &obs, q, run, series_dir))
            .collect()
    });

    let mut records = Vec::with_capacity(cells.len());
    let mut rows = Vec::new();
    for &q in &config.q_list {
        let mut ok = Vec::new();
        let mut failures = Vec::new();
        for (&(cq, run), outcome) in cells.iter().zip(&outcomes) {
            if cq != q {
                continue;
            }
            let mut record = RunRecord {
                q,
                run,
                run_seed: seeding::run_seed(config.master_seed, run),
                trajectories: q,
                eval_errors: 0,
                error: None,
            };
            match outcome {
                Ok(est) => {
                    record.eval_errors = est.eval_errors;
                    ok.push(est);
                }
                Err(e) => {
                    log::warn!("q = {q}, run {run} failed: {e}");
                    record.error = Some(e.clone());
                    failures.push(e.clone());
                }
            }
            records.push(record);
        }
        if config.mode.simulates() && ok.len() * 2 < config.runs {
            return Err(CliError::TooManyFailures {
                q,
                failed: failures.len(),
                runs: config.runs,
                first: failures.first().cloned().unwrap_or_default(),
            });
        }

        let dqs: Vec<f64> = ok.iter().filter_map(|c| c.dq).collect();
        let dq_row = push_aggregate(&mut rows, &dqs, SpectrumKind::Dq, q, &meta)?;
        let thg: Vec<f64> = ok.iter().filter_map(|c| c.theta_gumbel).collect();
        push_aggregate(&mut rows, &thg, SpectrumKind::ThetaGumbel, q, &meta)?;

        let eis: Vec<&EIEstimate> = ok.iter().filter_map(|c| c.ei.as_ref()).collect();
        let thetas: Vec<f64> = eis.iter().map(|e| e.theta_hat).collect();
        let theta_row = push_aggregate(&mut rows, &thetas, SpectrumKind::Theta, q, &meta)?;
        let hqs: Vec<f64> = eis
            .iter()
            .filter_map(|e| evt::hq_from_theta(e.theta_hat, q).ok())
            .collect();
        push_aggregate(&mut rows, &hqs, SpectrumKind::Hq, q, &meta)?;
        if !eis.is_empty() {
            for k in 0..config.k {
                let pk: Vec<f64> = eis.iter().map(|e| e.p_hat[k]).collect();
                push_aggregate(&mut rows, &pk, SpectrumKind::PHat(k), q, &meta)?;
            }
        }

        if matches!(config.mode, Mode::Analytic | Mode::All) {
            let dq_exact = dq_oracle(&system, &obs, q);
            if let Some(d) = dq_exact {
                rows.push(exact_row(d, SpectrumKind::DqAnalytic, q, &meta));
            }
            let theta_exact = match &model {
                Some(m) => Some(
                    analytic::theta_q_interval(m, q, config.analytic_resolution)
                        .map_err(runtime)?,
                ),
                None => None,
            };
            if let Some(t) = theta_exact {
                rows.push(exact_row(t, SpectrumKind::ThetaAnalytic, q, &meta));
            }
            if config.mode == Mode::All {
                if let (Some(est), Some(d)) = (&dq_row, dq_exact) {
                    rows.push(delta_row(est, d, SpectrumKind::DqDelta));
                }
                if let (Some(est), Some(t)) = (&theta_row, theta_exact) {
                    rows.push(delta_row(est, t, SpectrumKind::ThetaDelta));
                }
            }
        }
    }
    Ok(Computed {
        rows,
        records,
        genericity,
    })
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs the experiment and writes the CSV, the manifest and, in genericity
/// mode, the genericity report into `opts.out_dir`.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentSummary> {
    let started = Instant::now();
    let started_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    config.validate()?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let series_dir = config
        .outputs
        .series_dir
        .as_ref()
        .map(|d| resolve(&opts.out_dir, d));
    if let Some(d) = &series_dir {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }

    let threads = opts.threads.unwrap_or(config.threads);
    let computed = compute(config, threads, series_dir.as_deref())?;

    let csv_path = resolve(&opts.out_dir, &config.outputs.csv);
    emit_results(&computed.rows, &csv_path, config.outputs.append)?;
    if let Some(report) = &computed.genericity {
        write_json(&resolve(&opts.out_dir, &config.outputs.genericity), report)?;
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        started_unix_s,
        wall_time_s: started.elapsed().as_secs_f64(),
        runs: computed.records,
        rows: computed.rows.len(),
    };
    let manifest_path = resolve(&opts.out_dir, &config.outputs.manifest);
    write_json(&manifest_path, &manifest)?;
    Ok(ExperimentSummary {
        rows: computed.rows,
        manifest,
        genericity: computed.genericity,
        csv_path,
        manifest_path,
    })
}

/// Re-runs the experiment recorded in a manifest.
pub fn replay(manifest_path: &Path, opts: &RunOptions) -> Result<ExperimentSummary> {
    let manifest = Manifest::load(manifest_path)?;
    run_experiment(&manifest.config, opts)
}

/// `x` with 17 significant digits, enough to round-trip any `f64`.
fn fmt_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn csv_record(row: &SpectrumResult) -> [String; 12] {
    let m = &row.metadata;
    [
        row.kind.to_string(),
        m.system.clone(),
        m.observable.clone(),
        row.q.to_string(),
        row.run_count.to_string(),
        fmt_float(row.estimate_mean),
        fmt_float(row.estimate_std),
        m.n_total.to_string(),
        m.block_size.to_string(),
        fmt_float(m.quantile),
        m.k.to_string(),
        m.seed.to_string(),
    ]
}

/// Writes `rows` to `path`. The header is written whenever the file is new
/// or empty, so appending to an existing results file keeps a single header.
pub fn emit_results(rows: &[SpectrumResult], path: &Path, append: bool) -> Result<()> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = if append {
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err)?
    } else {
        File::create(path).map_err(io_err)?
    };
    let fresh = file.metadata().map_err(io_err)?.len() == 0;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER).map_err(csv_err)?;
    }
    for row in rows {
        w.write_record(csv_record(row)).map_err(csv_err)?;
    }
    let mut file = w.into_inner().map_err(|e| io_err(e.into_error()))?;
    file.flush().map_err(io_err)
}

/// Reads a file written by [`emit_results`].
pub fn parse_results(path: &Path) -> Result<Vec<SpectrumResult>> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            record: 0,
            reason: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |reason: String| CliError::Format {
            path: path.to_path_buf(),
            record: i + 1,
            reason,
        };
        let field = |j: usize| {
            rec.get(j)
                .ok_or_else(|| bad(format!("missing column {}", CSV_HEADER[j])))
        };
        macro_rules! num {
            ($j:expr) => {
                field($j)?
                    .parse()
                    .map_err(|e| bad(format!("column {}: {e}", CSV_HEADER[$j])))?
            };
        }
        rows.push(SpectrumResult {
            kind: field(0)?
                .parse()
                .map_err(|e: evt::EvtError| bad(e.to_string()))?,
            q: num!(3),
            run_count: num!(4),
            estimate_mean: num!(5),
            estimate_std: num!(6),
            metadata: ResultMeta {
                system: field(1)?.to_string(),
                observable: field(2)?.to_string(),
                n_total: num!(7),
                block_size: num!(8),
                quantile: num!(9),
                k: num!(10),
                seed: num!(11),
            },
        });
    }
    Ok(rows)
}
