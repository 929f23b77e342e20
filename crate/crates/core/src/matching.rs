//! The matching process `Y_i = -log max_{j=2..q} d(f(T^i x_1), f(T^i x_j))`
//! and its reductions: block maxima, empirical quantile thresholds, tail
//! survival.
//!
//! The event `{Y_i > u}` is the visit of the `q`-tuple of observations to the
//! target set where all of them sit in one ball of radius `e^{-u}` around the
//! reference observation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsError, MapSystem, Orbit};
use crate::observables::{Observable, ObservableError};
use crate::point::Point;
use crate::seeding::{self, SimRng};

/// Maximum tolerated fraction of guarded observable evaluations.
pub const MAX_EVAL_ERROR_RATE: f64 = 1e-6;

pub const SERIES_MAGIC: &[u8; 8] = b"OBSMATCH";
pub const SERIES_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error("invalid match configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "{errors} of {evaluations} observable evaluations hit a singularity (limit {limit:e})"
    )]
    DataQuality {
        errors: usize,
        evaluations: usize,
        limit: f64,
    },
    #[error("insufficient tail: {got} samples, need at least {needed}")]
    InsufficientTail { needed: usize, got: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed series file: {reason}")]
    Format { path: String, reason: String },
}

type Result<T> = std::result::Result<T, MatchError>;

/// Distance on the observation space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Sup,
    Euclidean,
}

impl Metric {
    #[inline]
    pub fn distance(self, a: &Point, b: &Point) -> f64 {
        match self {
            Metric::Sup => a.sup_distance(b),
            Metric::Euclidean => a.euclidean_distance(b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub q: usize,
    pub n_total: usize,
    pub block_size: usize,
    pub metric: Metric,
    /// Distances below this value are clamped to it.
    pub floor: f64,
}

pub const DEFAULT_BLOCK_SIZE: usize = 50_000;
pub const DEFAULT_FLOOR: f64 = 1e-300;

impl MatchConfig {
    pub fn new(q: usize, n_total: usize) -> Self {
        Self {
            q,
            n_total,
            block_size: DEFAULT_BLOCK_SIZE,
            metric: Metric::Sup,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn with_block_size(mut self, block_size: usize) -> Self {
        self.block_size = block_size;
        self
    }

    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(MatchError::InvalidConfig(format!("q = {} < 2", self.q)));
        }
        if self.n_total == 0 {
            return Err(MatchError::InvalidConfig("n_total must be positive".into()));
        }
        if self.block_size == 0 {
            return Err(MatchError::InvalidConfig(
                "block_size must be positive".into(),
            ));
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return Err(MatchError::InvalidConfig(format!(
                "floor = {} must be positive",
                self.floor
            )));
        }
        Ok(())
    }
}

/// Provenance of a simulated series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub master: u64,
    pub run: u64,
}

impl SeedInfo {
    /// Seeds of the `q` trajectories, as `master ^ run` followed by `t` jumps.
    pub fn trajectory_seed(&self) -> u64 {
        seeding::run_seed(self.master, self.run)
    }
}

#[derive(Debug, Clone)]
pub struct MatchSeries {
    pub values: Vec<f64>,
    pub config: MatchConfig,
    pub seeds: Option<SeedInfo>,
    /// Guarded observable evaluations (singularities clamped).
    pub eval_errors: usize,
}

impl MatchSeries {
    /// Wraps precomputed values (e.g. synthetic test series).
    pub fn from_values(values: Vec<f64>, config: MatchConfig) -> Self {
        Self {
            values,
            config,
            seeds: None,
            eval_errors: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block_maxima(&self) -> Vec<f64> {
        block_maxima(&self.values, self.config.block_size)
    }

    pub fn threshold_for_quantile(&self, p: f64) -> Result<f64> {
        threshold_for_quantile(&self.values, p)
    }
}

/// Simulates the matching process for run `run` of master seed `master`.
pub fn y_process(
    system: &MapSystem,
    obs: &Observable,
    cfg: &MatchConfig,
    master: u64,
    run: u64,
) -> Result<MatchSeries> {
    cfg.validate()?;
    let rngs = seeding::run_rngs(master, run, cfg.q);
    let mut series = y_process_with_rngs(system, obs, cfg, rngs)?;
    series.seeds = Some(SeedInfo { master, run });
    Ok(series)
}

/// Simulates the matching process with one explicit generator per
/// trajectory. Trajectory 0 is the reference.
pub fn y_process_with_rngs(
    system: &MapSystem,
    obs: &Observable,
    cfg: &MatchConfig,
    rngs: Vec<SimRng>,
) -> Result<MatchSeries> {
    cfg.validate()?;
    if rngs.len() != cfg.q {
        return Err(MatchError::InvalidConfig(format!(
            "{} generators for q = {}",
            rngs.len(),
            cfg.q
        )));
    }
    if obs.in_dim() != system.dim() {
        return Err(MatchError::InvalidConfig(format!(
            "observable `{}` takes dimension {}, system `{}` has dimension {}",
            obs.name(),
            obs.in_dim(),
            system.name(),
            system.dim()
        )));
    }
    let mut orbits: Vec<Orbit<'_>> = rngs
        .into_iter()
        .map(|rng| system.orbit(rng))
        .collect::<std::result::Result<_, _>>()?;

    let n = cfg.n_total;
    let metric = cfg.metric;
    let floor = cfg.floor;
    let mut values = Vec::with_capacity(n);
    let mut eval_errors = 0usize;
    for i in 0..n {
        let (reference, bad) = obs.evaluate_guarded(&orbits[0].position());
        eval_errors += bad as usize;
        let mut widest = 0.0_f64;
        for orbit in &orbits[1..] {
            let (other, bad) = obs.evaluate_guarded(&orbit.position());
            eval_errors += bad as usize;
            widest = widest.max(metric.distance(&reference, &other));
        }
        values.push(-widest.max(floor).ln());
        if i + 1 < n {
            for orbit in orbits.iter_mut() {
                orbit.advance()?;
            }
        }
    }

    let evaluations = n * cfg.q;
    if eval_errors as f64 > MAX_EVAL_ERROR_RATE * evaluations as f64 {
        return Err(MatchError::DataQuality {
            errors: eval_errors,
            evaluations,
            limit: MAX_EVAL_ERROR_RATE,
        });
    }
    Ok(MatchSeries {
        values,
        config: cfg.clone(),
        seeds: None,
        eval_errors,
    })
}

/// `Y` for one time step given the reference observation and the others.
pub fn match_value(reference: &Point, others: &[Point], metric: Metric, floor: f64) -> f64 {
    let widest = others
        .iter()
        .fold(0.0_f64, |acc, o| acc.max(metric.distance(reference, o)));
    -widest.max(floor).ln()
}

/// Maxima of consecutive disjoint blocks; a trailing partial block is
/// dropped.
pub fn block_maxima(values: &[f64], block_size: usize) -> Vec<f64> {
    if block_size == 0 {
        return Vec::new();
    }
    values
        .chunks_exact(block_size)
        .map(|b| b.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect()
}

/// Empirical `p`-quantile with lower interpolation: the order statistic of
/// rank `floor(p (n-1))`.
pub fn threshold_for_quantile(values: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(MatchError::InvalidConfig(format!(
            "quantile {p} outside (0,1)"
        )));
    }
    let n = values.len();
    if (n as f64) * (1.0 - p) < 1.0 - 1e-9 {
        return Err(MatchError::InsufficientTail {
            needed: (1.0 / (1.0 - p)).ceil() as usize,
            got: n,
        });
    }
    let rank = (p * (n - 1) as f64).floor() as usize;
    let mut scratch = values.to_vec();
    let (_, v, _) = scratch.select_nth_unstable_by(rank, f64::total_cmp);
    Ok(*v)
}

/// `u_n(s) = (log n + s) / (D (q - 1))`.
pub fn u_n_schedule(n: f64, s: f64, dq: f64, q: usize) -> Result<f64> {
    if !(dq > 0.0) {
        return Err(MatchError::InvalidConfig(format!(
            "dimension {dq} must be positive"
        )));
    }
    if q < 2 || !(n >= 1.0) {
        return Err(MatchError::InvalidConfig("need q >= 2 and n >= 1".into()));
    }
    Ok((n.ln() + s) / (dq * (q - 1) as f64))
}

/// Fraction of values strictly above `u`.
pub fn survival(values: &[f64], u: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&y| y > u).count() as f64 / values.len() as f64
}

/// Least-squares slope of `log survival(u)` against `u` over the given
/// thresholds. Thresholds with no exceedance are skipped.
pub fn tail_slope(values: &[f64], thresholds: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&u| (u, survival(values, u)))
        .filter(|&(_, s)| s > 0.0)
        .map(|(u, s)| (u, s.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Writes a raw series: `"OBSMATCH"`, version `u32`, length `u64`, then the
/// values, all little-endian.
pub fn write_series(path: &Path, values: &[f64]) -> Result<()> {
    let io = |source| MatchError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(SERIES_MAGIC).map_err(io)?;
    w.write_all(&SERIES_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(values.len() as u64).to_le_bytes())
        .map_err(io)?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_series(path: &Path) -> Result<Vec<f64>> {
    let io = |source| MatchError::Io {
        path: path.display().to_string(),
        source,
    };
    let bad = |reason: &str| MatchError::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    };
    let mut r = BufReader::new(File::open(path).map_err(io)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != SERIES_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    if u32::from_le_bytes(word) != SERIES_VERSION {
        return Err(bad("unsupported version"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(io)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io)?;
    if bytes.len() != len * 8 {
        return Err(bad("length field does not match payload"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}
