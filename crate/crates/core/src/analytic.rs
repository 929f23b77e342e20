//! Exact oracles.
//!
//! For a piecewise expanding interval map `T` with invariant density `h` and
//! a piecewise monotone observable `f`, when the return terms `p_k` (k >= 1)
//! vanish the extremal index of the matching process is
//!
//! ```text
//! theta_q = 1 - N_q / D_q
//! N_q = int h(x)^q / max(|f'(x)|, |(f o T)'(x)|)^(q-1) dx
//! D_q = int (sum_{y in f^-1(f(x))} h(y) / |f'(y)|)^(q-1) h(x) dx
//! ```
//!
//! [`p0q_interval`] integrates both with a breakpoint-aligned midpoint rule.
//! [`check_genericity`] samples the twin sets `A_0(x)`, `A_k(x)` to certify
//! the vanishing empirically. The module also provides the closed-form
//! dimension spectrum of self-similar measures and the projection rule
//! `D_q^f = min(D_q, m)`.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::observables::{branch_index, validate_branches, ObservableError, PiecewiseBranch};
use crate::seeding::SimRng;

/// Equality tolerance on observation values in twin-set membership.
pub const MATCH_TOL: f64 = 1e-9;
/// Distance under which two preimages are the same point.
pub const MERGE_TOL: f64 = 1e-12;
pub const DEFAULT_RESOLUTION: usize = 100_000;
pub const DEFAULT_K_MAX: usize = 5;
const MAX_WITNESSES: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyticError {
    #[error("invalid interval model: {0}")]
    Model(String),
    #[error(transparent)]
    Branches(#[from] ObservableError),
    #[error("generalized dimension of order 1 is not supported")]
    UnsupportedOrder,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

type Result<T> = std::result::Result<T, AnalyticError>;

/// Invariant density on `[0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    #[default]
    Uniform,
    /// Value `values[i]` on `[breaks[i], breaks[i+1])`.
    PiecewiseConstant { breaks: Vec<f64>, values: Vec<f64> },
}

impl Density {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Density::Uniform => {
                if (0.0..=1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Density::PiecewiseConstant { breaks, values } => {
                if x < breaks[0] || x > breaks[breaks.len() - 1] {
                    return 0.0;
                }
                let i = breaks[1..]
                    .partition_point(|&b| b <= x)
                    .min(values.len() - 1);
                values[i]
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Density::Uniform => Vec::new(),
            Density::PiecewiseConstant { breaks, .. } => breaks.clone(),
        }
    }

    fn integral(&self) -> f64 {
        match self {
            Density::Uniform => 1.0,
            Density::PiecewiseConstant { breaks, values } => breaks
                .windows(2)
                .zip(values)
                .map(|(w, v)| (w[1] - w[0]) * v)
                .sum(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Density::PiecewiseConstant { breaks, values } = self {
            if breaks.len() != values.len() + 1 || values.is_empty() {
                return Err(AnalyticError::Model(
                    "density needs len(breaks) = len(values) + 1".into(),
                ));
            }
            if breaks.windows(2).any(|w| !(w[1] > w[0])) || values.iter().any(|v| !(*v >= 0.0)) {
                return Err(AnalyticError::Model(
                    "density breaks must increase, values be >= 0".into(),
                ));
            }
            if breaks[0].abs() > 1e-12 || (breaks[breaks.len() - 1] - 1.0).abs() > 1e-12 {
                return Err(AnalyticError::Model(
                    "density must be supported on [0,1]".into(),
                ));
            }
        }
        let total = self.integral();
        if (total - 1.0).abs() > 1e-6 {
            return Err(AnalyticError::Model(format!(
                "density integrates to {total}"
            )));
        }
        Ok(())
    }

    /// Draw from the density by inverse CDF.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self {
            Density::Uniform => u,
            Density::PiecewiseConstant { breaks, values } => {
                let mut acc = 0.0;
                for (w, v) in breaks.windows(2).zip(values) {
                    let mass = (w[1] - w[0]) * v;
                    if u < acc + mass && mass > 0.0 {
                        return w[0] + (u - acc) / v;
                    }
                    acc += mass;
                }
                breaks[breaks.len() - 1]
            }
        }
    }
}

/// A piecewise expanding map `T`, a piecewise monotone observable `f` and the
/// invariant density of `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalModel {
    pub map_branches: Vec<PiecewiseBranch>,
    pub obs_branches: Vec<PiecewiseBranch>,
    #[serde(default)]
    pub density: Density,
}

impl IntervalModel {
    pub fn new(
        map_branches: Vec<PiecewiseBranch>,
        obs_branches: Vec<PiecewiseBranch>,
        density: Density,
    ) -> Result<Self> {
        let model = Self {
            map_branches,
            obs_branches,
            density,
        };
        model.validate()?;
        Ok(model)
    }

    /// Doubling map with the two-branch example observable.
    pub fn example() -> Self {
        Self {
            map_branches: crate::observables::doubling_branches(),
            obs_branches: crate::observables::example_branches(),
            density: Density::Uniform,
        }
    }

    /// Doubling map observed through the identity.
    pub fn doubling_identity() -> Self {
        Self {
            map_branches: crate::observables::doubling_branches(),
            obs_branches: crate::observables::identity_branches(),
            density: Density::Uniform,
        }
    }

    /// Doubling map observed through itself: the degenerate `f = T` case.
    pub fn doubling_self_observed() -> Self {
        Self {
            map_branches: crate::observables::doubling_branches(),
            obs_branches: crate::observables::doubling_branches(),
            density: Density::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_branches(&self.map_branches)?;
        validate_branches(&self.obs_branches)?;
        for (i, b) in self.map_branches.iter().enumerate() {
            for j in 1..32 {
                let x = b.lo() + (b.hi() - b.lo()) * j as f64 / 32.0;
                if !(b.dmap(x).abs() > 1.0) {
                    return Err(AnalyticError::Model(format!(
                        "map branch {i} is not expanding at {x}"
                    )));
                }
                let tx = b.map(x);
                if !(-1e-12..=1.0 + 1e-12).contains(&tx) {
                    return Err(AnalyticError::Model(format!(
                        "map branch {i} leaves [0,1] at {x}"
                    )));
                }
            }
        }
        self.density.validate()
    }

    pub fn t(&self, x: f64) -> f64 {
        let i = branch_index(&self.map_branches, x).unwrap_or(self.map_branches.len() - 1);
        let y = self.map_branches[i].map(x);
        // branch images are closed; fold the right end of [0,1) back to 0
        if y >= 1.0 {
            y - 1.0
        } else {
            y.max(0.0)
        }
    }

    pub fn t_prime(&self, x: f64) -> f64 {
        let i = branch_index(&self.map_branches, x).unwrap_or(self.map_branches.len() - 1);
        self.map_branches[i].dmap(x)
    }

    pub fn f(&self, x: f64) -> f64 {
        let i = branch_index(&self.obs_branches, x).unwrap_or(self.obs_branches.len() - 1);
        self.obs_branches[i].map(x)
    }

    pub fn f_prime(&self, x: f64) -> f64 {
        let i = branch_index(&self.obs_branches, x).unwrap_or(self.obs_branches.len() - 1);
        self.obs_branches[i].dmap(x)
    }

    /// `(f o T)'(x) = f'(T x) T'(x)`.
    pub fn f_of_t_prime(&self, x: f64) -> f64 {
        self.f_prime(self.t(x)) * self.t_prime(x)
    }

    /// Points where one of the integrands of `p0q_interval` may jump.
    fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0, 1.0];
        let obs_ends: Vec<f64> = self
            .obs_branches
            .iter()
            .flat_map(|b| [b.lo(), b.hi()])
            .collect();
        pts.extend(&obs_ends);
        pts.extend(self.map_branches.iter().flat_map(|b| [b.lo(), b.hi()]));
        pts.extend(self.density.breakpoints());
        // f o T breaks where T x hits a breakpoint of f (or of h, for h(Tx))
        for &e in obs_ends.iter().chain(self.density.breakpoints().iter()) {
            pts.extend(preimages(&self.map_branches, e));
        }
        // the preimage set of f(x) changes where f(x) crosses an image end
        for b in &self.obs_branches {
            let (lo, hi) = b.image();
            pts.extend(preimages(&self.obs_branches, lo));
            pts.extend(preimages(&self.obs_branches, hi));
        }
        // density at the preimages of f(x)
        for &e in &self.density.breakpoints() {
            pts.extend(preimages(&self.obs_branches, self.f(e)));
        }
        pts.retain(|x| (0.0..=1.0).contains(x));
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
        pts
    }
}

/// All `x` in `[0,1]` with `f(x) = y`, sorted, near-duplicates merged.
pub fn preimages(branches: &[PiecewiseBranch], y: f64) -> Vec<f64> {
    let last = branches.len().saturating_sub(1);
    let mut out: Vec<f64> = branches
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let x = b.inverse(y);
            let inside =
                x >= b.lo() - MERGE_TOL && (x < b.hi() || (i == last && x <= b.hi() + MERGE_TOL));
            (x.is_finite() && inside).then(|| x.clamp(0.0, 1.0))
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup_by(|a, b| (*a - *b).abs() <= MERGE_TOL);
    out
}

/// Numerator and denominator of `p_{0,q}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P0Terms {
    pub numerator: f64,
    pub denominator: f64,
}

impl P0Terms {
    pub fn ratio(&self) -> f64 {
        self.numerator / self.denominator
    }
}

/// Integrates the numerator and denominator of `p_{0,q}` with `resolution`
/// midpoint cells on every piece between consecutive breakpoints.
pub fn p0q_terms(model: &IntervalModel, q: usize, resolution: usize) -> Result<P0Terms> {
    if q < 2 {
        return Err(AnalyticError::InvalidArgument(format!("q = {q} < 2")));
    }
    if resolution == 0 {
        return Err(AnalyticError::InvalidArgument(
            "resolution must be positive".into(),
        ));
    }
    model.validate()?;
    let power = (q - 1) as i32;
    let pts = model.breakpoints();
    let (mut numerator, mut denominator) = (0.0, 0.0);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let width = (b - a) / resolution as f64;
        let (mut num_piece, mut den_piece) = (0.0, 0.0);
        for c in 0..resolution {
            let x = a + (c as f64 + 0.5) * width;
            let h = model.density.eval(x);
            if h == 0.0 {
                continue;
            }
            let stretch = model.f_prime(x).abs().max(model.f_of_t_prime(x).abs());
            num_piece += h.powi(q as i32) / stretch.powi(power);
            let mass: f64 = preimages(&model.obs_branches, model.f(x))
                .into_iter()
                .map(|y| model.density.eval(y) / model.f_prime(y).abs())
                .sum();
            den_piece += mass.powi(power) * h;
        }
        numerator += num_piece * width;
        denominator += den_piece * width;
    }
    if !(denominator > 0.0) {
        return Err(AnalyticError::Model("denominator integral vanished".into()));
    }
    Ok(P0Terms {
        numerator,
        denominator,
    })
}

/// `p_{0,q}` by quadrature.
pub fn p0q_interval(model: &IntervalModel, q: usize, resolution: usize) -> Result<f64> {
    Ok(p0q_terms(model, q, resolution)?.ratio())
}

/// `theta_q = 1 - p_{0,q}`; valid when the genericity conditions hold.
pub fn theta_q_interval(model: &IntervalModel, q: usize, resolution: usize) -> Result<f64> {
    Ok(1.0 - p0q_interval(model, q, resolution)?)
}

/// Closed form for the doubling map with the example observable:
/// `1 - (2 + 2^{2-q}) / (1 + 3^q)`.
pub fn example_theta_closed_form(q: usize) -> f64 {
    let q = q as i32;
    1.0 - (2.0 + 2f64.powi(2 - q)) / (1.0 + 3f64.powi(q))
}

/// Result of [`check_genericity`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericityReport {
    pub samples: usize,
    /// Samples with an observational twin `y != x` in `A_0(x)`.
    pub h1_violations: usize,
    /// `(x, y)` pairs with `y != x`, `y` in `A_0(x)`.
    pub h1_witnesses: Vec<(f64, f64)>,
    /// `h2_violations[k-1]` counts samples with `A_k(x)` nonempty.
    pub h2_violations: Vec<usize>,
    pub h2_witnesses: Vec<Vec<(f64, f64)>>,
}

impl GenericityReport {
    pub fn h1_fraction(&self) -> f64 {
        self.h1_violations as f64 / self.samples as f64
    }

    pub fn h2_fraction(&self, k: usize) -> f64 {
        self.h2_violations[k - 1] as f64 / self.samples as f64
    }

    pub fn is_clean(&self) -> bool {
        self.h1_violations == 0 && self.h2_violations.iter().all(|&v| v == 0)
    }
}

/// Samples `sample_count` points from the density and inspects their
/// observational twins `y` (`f(y) = f(x)`) for membership in `A_0(x)` and
/// `A_k(x)`, `1 <= k <= k_max`.
pub fn check_genericity(
    model: &IntervalModel,
    sample_count: usize,
    k_max: usize,
    seed: u64,
) -> Result<GenericityReport> {
    model.validate()?;
    let mut rng = SimRng::seed_from_u64(seed);
    let mut report = GenericityReport {
        samples: sample_count,
        h1_violations: 0,
        h1_witnesses: Vec::new(),
        h2_violations: vec![0; k_max],
        h2_witnesses: vec![Vec::new(); k_max],
    };
    let same = |a: f64, b: f64| (a - b).abs() <= MATCH_TOL;
    for _ in 0..sample_count {
        let x = model.density.sample(&mut rng);
        // orbit of x and its observations up to time k_max + 1
        let mut xs = vec![x];
        for i in 0..=k_max {
            xs.push(model.t(xs[i]));
        }
        let fx: Vec<f64> = xs.iter().map(|&v| model.f(v)).collect();

        let twins: Vec<f64> = preimages(&model.obs_branches, fx[0])
            .into_iter()
            .filter(|y| (y - x).abs() > MERGE_TOL)
            .collect();
        let mut h1_hit = None;
        let mut h2_hit = vec![None; k_max];
        for &y in &twins {
            let mut fy = Vec::with_capacity(k_max + 2);
            let mut z = y;
            fy.push(model.f(z));
            for _ in 0..=k_max {
                z = model.t(z);
                fy.push(model.f(z));
            }
            if same(fy[1], fx[1]) {
                h1_hit.get_or_insert(y);
                continue;
            }
            // y is in A_k when the observations first re-coincide at k + 1
            for k in 1..=k_max {
                if same(fy[k + 1], fx[k + 1]) {
                    h2_hit[k - 1].get_or_insert(y);
                    break;
                }
            }
        }
        if let Some(y) = h1_hit {
            report.h1_violations += 1;
            if report.h1_witnesses.len() < MAX_WITNESSES {
                report.h1_witnesses.push((x, y));
            }
        }
        for (k, hit) in h2_hit.into_iter().enumerate() {
            if let Some(y) = hit {
                report.h2_violations[k] += 1;
                if report.h2_witnesses[k].len() < MAX_WITNESSES {
                    report.h2_witnesses[k].push((x, y));
                }
            }
        }
    }
    Ok(report)
}

/// Generalized dimension `log(sum w_i^q) / ((q-1) log r)` of the self-similar
/// measure with weights `w` and common contraction ratio `r`, under the open
/// set condition. Zero weights are outside the support and skipped.
pub fn dq_self_similar(weights: &[f64], ratio: f64, q: f64) -> Result<f64> {
    if (q - 1.0).abs() < 1e-12 {
        return Err(AnalyticError::UnsupportedOrder);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(AnalyticError::InvalidArgument(format!(
            "ratio {ratio} outside (0,1)"
        )));
    }
    let total: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
        return Err(AnalyticError::InvalidArgument(
            "weights must be a probability vector".into(),
        ));
    }
    let moment: f64 = weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|w| w.powf(q))
        .sum();
    Ok(moment.ln() / ((q - 1.0) * ratio.ln()))
}

/// `D_q^f = min(D_q, m)` for prevalent observables into `R^m`, `1 <= q <= 2`.
pub fn hk_projection(dq: f64, m: usize) -> Result<f64> {
    if !(dq >= 0.0) || m == 0 {
        return Err(AnalyticError::InvalidArgument(
            "need dq >= 0 and m >= 1".into(),
        ));
    }
    Ok(dq.min(m as f64))
}
