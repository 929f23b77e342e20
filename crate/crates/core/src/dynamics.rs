//! Benchmark maps: the doubling map on `[0,1)`, the Hénon map, and the
//! shift on Sierpinski-gasket addresses.
//!
//! [`MapSystem::step`] is the pure map `T`. Long simulations go through
//! [`Orbit`], which owns a seeded generator: the doubling-map orbit adds a
//! tiny jitter after each step (plain doubles collapse to 0 after ~53
//! doublings) and the gasket orbit is the shift on a finite address window
//! that is refilled with fresh weighted digits.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::point::Point;
use crate::seeding::SimRng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DynamicsError {
    #[error("orbit of {system} diverged at state {state}{}", index.map(|i| format!(" (step {i})")).unwrap_or_default())]
    DivergedOrbit {
        system: String,
        state: Point,
        index: Option<usize>,
    },
    #[error("basin box rejected {attempts} consecutive initial draws")]
    BasinConfiguration { attempts: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("state has dimension {got}, system expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

type Result<T> = std::result::Result<T, DynamicsError>;

/// Axis-aligned box used to draw Hénon initial conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for BasinBox {
    fn default() -> Self {
        Self {
            x_min: -1.5,
            x_max: 1.5,
            y_min: -0.5,
            y_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HenonParams {
    pub a: f64,
    pub b: f64,
    pub basin: BasinBox,
    pub burn_in: usize,
    /// `|x|` above this value counts as an escaping orbit.
    pub escape_radius: f64,
}

impl Default for HenonParams {
    fn default() -> Self {
        Self {
            a: 1.4,
            b: 0.3,
            basin: BasinBox::default(),
            burn_in: 1000,
            escape_radius: 1e6,
        }
    }
}

impl HenonParams {
    pub fn with_ab(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GasketParams {
    /// Digit probabilities `(p0, p1, p2)`.
    pub weights: [f64; 3],
    pub vertices: [[f64; 2]; 3],
    /// Address length `L`.
    pub depth: usize,
}

impl Default for GasketParams {
    fn default() -> Self {
        Self {
            weights: [0.5, 0.3, 0.2],
            vertices: [[0.0, 0.0], [1.0, 0.0], [0.5, 1.0]],
            depth: 52,
        }
    }
}

impl GasketParams {
    pub fn with_weights(weights: [f64; 3]) -> Self {
        Self {
            weights,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights", "weights must be finite and nonnegative"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(
                "weights",
                format!("weights sum to {total}, expected 1"),
            ));
        }
        if self.depth == 0 {
            return Err(invalid("depth", "address length must be positive"));
        }
        let [v0, v1, v2] = self.vertices;
        let area = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1]);
        if !(area.abs() > 0.0) {
            return Err(invalid("vertices", "vertices are collinear"));
        }
        Ok(())
    }

    /// Whether `2p - v_{d1} + v_new 2^{-L}` reproduces the embedding exactly:
    /// true when every vertex coordinate is a multiple of 1/2 in `[-1, 1]` and
    /// `L <= 52`, so all embedded coordinates are multiples of `2^{-53}`.
    pub fn exact_incremental(&self) -> bool {
        self.depth <= 52
            && self
                .vertices
                .iter()
                .flatten()
                .all(|c| c.abs() <= 1.0 && (2.0 * c).fract() == 0.0)
    }

    fn draw_digit<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        let u: f64 = rng.random();
        if u < self.weights[0] {
            0
        } else if u < self.weights[0] + self.weights[1] {
            1
        } else {
            2
        }
    }

    /// Barycentric coordinates of `p` with respect to the three vertices.
    fn barycentric(&self, p: Point) -> [f64; 3] {
        let [v0, v1, v2] = self.vertices;
        let det = (v1[0] - v0[0]) * (v2[1] - v0[1]) - (v2[0] - v0[0]) * (v1[1] - v0[1]);
        let dx = p.x() - v0[0];
        let dy = p.y() - v0[1];
        let l1 = (dx * (v2[1] - v0[1]) - (v2[0] - v0[0]) * dy) / det;
        let l2 = ((v1[0] - v0[0]) * dy - dx * (v1[1] - v0[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Index of the first-level sub-triangle containing `p`.
    pub fn cell_of(&self, p: Point) -> u8 {
        let lambda = self.barycentric(p);
        let mut best = 0;
        for i in 1..3 {
            if lambda[i] > lambda[best] {
                best = i;
            }
        }
        best as u8
    }
}

/// Finite symbolic address of a point of the gasket.
#[derive(Debug, Clone, PartialEq)]
pub struct GasketAddress {
    digits: VecDeque<u8>,
}

impl GasketAddress {
    pub fn new(digits: impl IntoIterator<Item = u8>) -> Result<Self> {
        let digits: VecDeque<u8> = digits.into_iter().collect();
        if digits.is_empty() {
            return Err(invalid("digits", "address must be nonempty"));
        }
        if digits.iter().any(|&d| d > 2) {
            return Err(invalid("digits", "digits must lie in {0,1,2}"));
        }
        Ok(Self { digits })
    }

    /// Draws `params.depth` i.i.d. weighted digits.
    pub fn random<R: Rng + ?Sized>(params: &GasketParams, rng: &mut R) -> Self {
        let digits = (0..params.depth).map(|_| params.draw_digit(rng)).collect();
        Self { digits }
    }

    /// Address of `p` obtained by reading off sub-triangles along the
    /// expanding map.
    pub fn from_point(params: &GasketParams, p: Point) -> Self {
        let mut p = p;
        let mut digits = VecDeque::with_capacity(params.depth);
        for _ in 0..params.depth {
            let d = params.cell_of(p);
            let v = params.vertices[d as usize];
            p = Point::new2(2.0 * p.x() - v[0], 2.0 * p.y() - v[1]);
            digits.push_back(d);
        }
        Self { digits }
    }

    pub fn digits(&self) -> impl Iterator<Item = u8> + '_ {
        self.digits.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.digits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digits.is_empty()
    }

    pub fn first(&self) -> u8 {
        self.digits[0]
    }

    /// `sum_k v_{d_k} 2^{-k}`, evaluated by Horner's rule from the last digit.
    pub fn embed(&self, vertices: &[[f64; 2]; 3]) -> Point {
        let (mut x, mut y) = (0.0, 0.0);
        for &d in self.digits.iter().rev() {
            let v = vertices[d as usize];
            x = 0.5 * (x + v[0]);
            y = 0.5 * (y + v[1]);
        }
        Point::new2(x, y)
    }

    /// Drops the leading digit and appends a fresh weighted digit.
    pub fn shift<R: Rng + ?Sized>(&mut self, params: &GasketParams, rng: &mut R) -> u8 {
        let first = self.digits.pop_front().expect("address is nonempty");
        self.digits.push_back(params.draw_digit(rng));
        first
    }

    /// Shift with an explicitly supplied trailing digit.
    pub fn shift_with(&mut self, digit: u8) -> u8 {
        let first = self.digits.pop_front().expect("address is nonempty");
        self.digits.push_back(digit.min(2));
        first
    }
}

/// A deterministic dynamical system together with a sampler for its
/// invariant measure.
#[derive(Debug, Clone, PartialEq)]
pub enum MapSystem {
    /// `x -> 2x mod 1`; `jitter` is the half-width of the uniform noise added
    /// by [`Orbit::advance`], zero for exact analytic tests.
    Doubling {
        jitter: f64,
    },
    Henon(HenonParams),
    Gasket(GasketParams),
}

/// Jitter used by long-run doubling-map estimation.
pub const DOUBLING_ESTIMATION_JITTER: f64 = 1e-12;

/// Maximum number of consecutive rejected Hénon draws.
pub const MAX_REJECTED_DRAWS: usize = 100;

impl MapSystem {
    pub fn doubling() -> Self {
        MapSystem::Doubling { jitter: 0.0 }
    }

    pub fn henon(a: f64, b: f64) -> Self {
        MapSystem::Henon(HenonParams::with_ab(a, b))
    }

    pub fn gasket(weights: [f64; 3]) -> Self {
        MapSystem::Gasket(GasketParams::with_weights(weights))
    }

    pub fn name(&self) -> &'static str {
        match self {
            MapSystem::Doubling { .. } => "doubling",
            MapSystem::Henon(_) => "henon",
            MapSystem::Gasket(_) => "gasket",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            MapSystem::Doubling { .. } => 1,
            MapSystem::Henon(_) | MapSystem::Gasket(_) => 2,
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        match self {
            MapSystem::Doubling { jitter } => {
                out.insert("jitter".into(), *jitter);
            }
            MapSystem::Henon(p) => {
                out.insert("a".into(), p.a);
                out.insert("b".into(), p.b);
                out.insert("burn_in".into(), p.burn_in as f64);
            }
            MapSystem::Gasket(p) => {
                out.insert("p0".into(), p.weights[0]);
                out.insert("p1".into(), p.weights[1]);
                out.insert("p2".into(), p.weights[2]);
                out.insert("L".into(), p.depth as f64);
            }
        }
        out
    }

    /// Invariant density on `[0,1]` for absolutely continuous interval maps.
    pub fn density(&self, x: f64) -> Option<f64> {
        match self {
            MapSystem::Doubling { .. } => Some(if (0.0..=1.0).contains(&x) { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    /// `T'(x)` for interval maps.
    pub fn derivative(&self, _x: f64) -> Option<f64> {
        match self {
            MapSystem::Doubling { .. } => Some(2.0),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MapSystem::Doubling { jitter } => {
                if !(jitter.is_finite() && *jitter >= 0.0) {
                    return Err(invalid("jitter", "jitter must be finite and nonnegative"));
                }
            }
            MapSystem::Henon(p) => {
                if !(p.a.is_finite() && p.b.is_finite()) {
                    return Err(invalid("a/b", "Hénon parameters must be finite"));
                }
                let bx = p.basin;
                if !(bx.x_min < bx.x_max && bx.y_min < bx.y_max) {
                    return Err(invalid("basin", "empty basin box"));
                }
                if !(p.escape_radius > 0.0) {
                    return Err(invalid("escape_radius", "must be positive"));
                }
            }
            MapSystem::Gasket(p) => p.validate()?,
        }
        Ok(())
    }

    fn check_dim(&self, x: &Point) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(DynamicsError::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// One application of the map.
    pub fn step(&self, x: &Point) -> Result<Point> {
        self.check_dim(x)?;
        match self {
            MapSystem::Doubling { .. } => Ok(Point::new1(wrap_unit(2.0 * x.x()))),
            MapSystem::Henon(p) => {
                let next = henon_step(p, x.x(), x.y());
                if !next.is_finite() || next.x().abs() > p.escape_radius {
                    return Err(DynamicsError::DivergedOrbit {
                        system: self.name().into(),
                        state: next,
                        index: None,
                    });
                }
                Ok(next)
            }
            MapSystem::Gasket(p) => {
                let d = p.cell_of(*x);
                let v = p.vertices[d as usize];
                Ok(Point::new2(2.0 * x.x() - v[0], 2.0 * x.y() - v[1]))
            }
        }
    }

    /// Draws an initial state distributed (approximately, for Hénon) per
    /// the invariant measure.
    pub fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Point> {
        match self {
            MapSystem::Doubling { .. } => Ok(Point::new1(rng.random::<f64>())),
            MapSystem::Gasket(p) => Ok(GasketAddress::random(p, rng).embed(&p.vertices)),
            MapSystem::Henon(p) => sample_henon(p, rng),
        }
    }

    /// Convenience wrapper seeding a fresh generator.
    pub fn sample_initial_seeded(&self, seed: u64) -> Result<Point> {
        use rand::SeedableRng;
        let mut rng = SimRng::seed_from_u64(seed);
        self.sample_initial(&mut rng)
    }

    /// Orbit started from a sampled initial condition; `rng` is kept for the
    /// jitter or the fresh address digits.
    pub fn orbit(&self, mut rng: SimRng) -> Result<Orbit<'_>> {
        let state = match self {
            MapSystem::Gasket(p) => {
                let address = GasketAddress::random(p, &mut rng);
                let point = address.embed(&p.vertices);
                OrbitState::Address { address, point }
            }
            _ => OrbitState::Point(self.sample_initial(&mut rng)?),
        };
        let exact = matches!(self, MapSystem::Gasket(p) if p.exact_incremental());
        Ok(Orbit {
            system: self,
            state,
            rng,
            steps: 0,
            exact,
        })
    }

    /// Orbit started from a given state.
    pub fn orbit_from(&self, x0: Point, rng: SimRng) -> Result<Orbit<'_>> {
        self.check_dim(&x0)?;
        let state = match self {
            MapSystem::Gasket(p) => {
                let address = GasketAddress::from_point(p, x0);
                let point = address.embed(&p.vertices);
                OrbitState::Address { address, point }
            }
            _ => OrbitState::Point(x0),
        };
        let exact = matches!(self, MapSystem::Gasket(p) if p.exact_incremental());
        Ok(Orbit {
            system: self,
            state,
            rng,
            steps: 0,
            exact,
        })
    }
}

fn invalid(name: &str, reason: impl Into<String>) -> DynamicsError {
    DynamicsError::InvalidParameter {
        name: name.into(),
        reason: reason.into(),
    }
}

#[inline]
fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[inline]
fn henon_step(p: &HenonParams, x: f64, y: f64) -> Point {
    Point::new2(1.0 - p.a * x * x + y, p.b * x)
}

fn sample_henon<R: Rng + ?Sized>(p: &HenonParams, rng: &mut R) -> Result<Point> {
    let bx = p.basin;
    'draw: for _ in 0..MAX_REJECTED_DRAWS {
        let mut x = bx.x_min + (bx.x_max - bx.x_min) * rng.random::<f64>();
        let mut y = bx.y_min + (bx.y_max - bx.y_min) * rng.random::<f64>();
        for _ in 0..p.burn_in {
            let next = henon_step(p, x, y);
            if !next.is_finite() || next.x().abs() > p.escape_radius {
                continue 'draw;
            }
            x = next.x();
            y = next.y();
        }
        return Ok(Point::new2(x, y));
    }
    Err(DynamicsError::BasinConfiguration {
        attempts: MAX_REJECTED_DRAWS,
    })
}

/// `(x0, T x0, ..., T^{length-1} x0)` under the pure map.
pub fn trajectory(system: &MapSystem, x0: Point, length: usize) -> Result<Vec<Point>> {
    if length == 0 {
        return Err(invalid("length", "trajectory length must be at least 1"));
    }
    Trajectory::new(system, x0).take(length).collect()
}

/// Streaming version of [`trajectory`]: yields `T^i x0` for `i = 0, 1, ...`
/// and stops after the first error.
pub struct Trajectory<'a> {
    system: &'a MapSystem,
    next: Option<Point>,
    index: usize,
}

impl<'a> Trajectory<'a> {
    pub fn new(system: &'a MapSystem, x0: Point) -> Self {
        Self {
            system,
            next: Some(x0),
            index: 0,
        }
    }
}

impl Iterator for Trajectory<'_> {
    type Item = Result<Point>;

    fn next(&mut self) -> Option<Self::Item> {
        let current = self.next.take()?;
        let index = self.index;
        self.index += 1;
        match self.system.step(&current) {
            Ok(p) => self.next = Some(p),
            Err(DynamicsError::DivergedOrbit { system, state, .. }) => {
                return Some(Err(DynamicsError::DivergedOrbit {
                    system,
                    state,
                    index: Some(index + 1),
                }))
            }
            Err(e) => return Some(Err(e)),
        }
        Some(Ok(current))
    }
}

#[derive(Debug, Clone)]
enum OrbitState {
    Point(Point),
    Address {
        address: GasketAddress,
        point: Point,
    },
}

/// A simulated orbit that owns its random stream.
#[derive(Debug, Clone)]
pub struct Orbit<'a> {
    system: &'a MapSystem,
    state: OrbitState,
    rng: SimRng,
    steps: usize,
    exact: bool,
}

impl Orbit<'_> {
    pub fn position(&self) -> Point {
        match &self.state {
            OrbitState::Point(p) => *p,
            OrbitState::Address { point, .. } => *point,
        }
    }

    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn advance(&mut self) -> Result<()> {
        let index = self.steps + 1;
        match (&mut self.state, self.system) {
            (OrbitState::Point(p), MapSystem::Doubling { jitter }) => {
                let mut x = 2.0 * p.x();
                if *jitter > 0.0 {
                    x += *jitter * (2.0 * self.rng.random::<f64>() - 1.0);
                }
                *p = Point::new1(wrap_unit(x));
            }
            (OrbitState::Point(p), MapSystem::Henon(params)) => {
                let next = henon_step(params, p.x(), p.y());
                if !next.is_finite() || next.x().abs() > params.escape_radius {
                    return Err(DynamicsError::DivergedOrbit {
                        system: "henon".into(),
                        state: next,
                        index: Some(index),
                    });
                }
                *p = next;
            }
            (OrbitState::Address { address, point }, MapSystem::Gasket(params)) => {
                let first = address.shift(params, &mut self.rng) as usize;
                if self.exact {
                    let last = *address.digits.back().expect("address is nonempty") as usize;
                    let (v, w) = (params.vertices[first], params.vertices[last]);
                    let tail = 0.5f64.powi(address.len() as i32);
                    *point = Point::new2(
                        2.0 * point.x() - v[0] + w[0] * tail,
                        2.0 * point.y() - v[1] + w[1] * tail,
                    );
                } else {
                    *point = address.embed(&params.vertices);
                }
            }
            _ => unreachable!("orbit state always matches its system"),
        }
        self.steps = index;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    #[test]
    fn doubling_step_examples() {
        let sys = MapSystem::doubling();
        assert_eq!(sys.step(&Point::new1(0.3)).unwrap().x(), 0.6);
        assert_eq!(sys.step(&Point::new1(0.75)).unwrap().x(), 0.5);
    }

    #[test]
    fn henon_step_at_origin() {
        let sys = MapSystem::henon(1.4, 0.3);
        let next = sys.step(&Point::new2(0.0, 0.0)).unwrap();
        assert_eq!(next.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn henon_divergence_is_reported() {
        let sys = MapSystem::henon(1.4, 0.3);
        let err = trajectory(&sys, Point::new2(10.0, 0.0), 20).unwrap_err();
        match err {
            DynamicsError::DivergedOrbit { index: Some(i), .. } => assert!(i >= 1),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn trajectory_examples() {
        let sys = MapSystem::doubling();
        let t = trajectory(&sys, Point::new1(0.1), 3).unwrap();
        let xs: Vec<f64> = t.iter().map(|p| p.x()).collect();
        assert_eq!(xs.len(), 3);
        assert!((xs[1] - 0.2).abs() < 1e-15 && (xs[2] - 0.4).abs() < 1e-15);

        let single = trajectory(&sys, Point::new1(0.42), 1).unwrap();
        assert_eq!(single, vec![Point::new1(0.42)]);

        let t = trajectory(&sys, Point::new1(1.0 / 3.0), 4).unwrap();
        for (i, p) in t.iter().enumerate() {
            let expected = if i % 2 == 0 { 1.0 / 3.0 } else { 2.0 / 3.0 };
            assert!((p.x() - expected).abs() < 1e-14);
        }
        assert!(trajectory(&sys, Point::new1(0.1), 0).is_err());
    }

    #[test]
    fn doubling_sampler_range() {
        let sys = MapSystem::doubling();
        for seed in 0..200 {
            let x = sys.sample_initial_seeded(seed).unwrap().x();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn sampler_is_reproducible() {
        for sys in [
            MapSystem::doubling(),
            MapSystem::henon(1.4, 0.3),
            MapSystem::gasket([0.5, 0.3, 0.2]),
        ] {
            let a = sys.sample_initial_seeded(99).unwrap();
            let b = sys.sample_initial_seeded(99).unwrap();
            assert_eq!(a.as_slice(), b.as_slice());
        }
    }

    #[test]
    fn degenerate_gasket_sits_on_vertex() {
        let sys = MapSystem::gasket([1.0, 0.0, 0.0]);
        let p = sys.sample_initial_seeded(5).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn henon_sample_lands_near_attractor() {
        let sys = MapSystem::henon(1.4, 0.3);
        let mut r = rng(3);
        for _ in 0..200 {
            let p = sys.sample_initial(&mut r).unwrap();
            assert!(p.x().abs() <= 1.5 && p.y().abs() <= 0.45, "{p}");
        }
    }

    #[test]
    fn impossible_basin_is_rejected() {
        let mut params = HenonParams::with_ab(1.4, 0.3);
        params.basin = BasinBox {
            x_min: 50.0,
            x_max: 60.0,
            y_min: 50.0,
            y_max: 60.0,
        };
        let sys = MapSystem::Henon(params);
        assert_eq!(
            sys.sample_initial(&mut rng(1)),
            Err(DynamicsError::BasinConfiguration { attempts: 100 })
        );
    }

    #[test]
    fn gasket_embedding_examples() {
        let params = GasketParams::default();
        let zeros = GasketAddress::new(vec![0; 52]).unwrap();
        assert_eq!(zeros.embed(&params.vertices).as_slice(), &[0.0, 0.0]);

        let mut digits = vec![0u8; 52];
        digits[0] = 1;
        let p = GasketAddress::new(digits).unwrap().embed(&params.vertices);
        assert_eq!(p.as_slice(), &[0.5, 0.0]);

        // leading term only fixes the point up to the sub-triangle diameter
        let mut digits = vec![2u8; 52];
        digits[0] = 1;
        let p = GasketAddress::new(digits).unwrap().embed(&params.vertices);
        assert!((p.x() - 0.5).abs() <= 0.25 + 1e-12 && p.y() <= 0.5);

        assert!(GasketAddress::new(Vec::<u8>::new()).is_err());
        assert!(GasketAddress::new(vec![3]).is_err());
    }

    #[test]
    fn gasket_shift_conjugates_expanding_map() {
        let params = GasketParams::default();
        let sys = MapSystem::Gasket(params.clone());
        let mut r = rng(11);
        for _ in 0..500 {
            let mut address = GasketAddress::random(&params, &mut r);
            let before = address.embed(&params.vertices);
            let d1 = address.shift(&params, &mut r) as usize;
            let after = address.embed(&params.vertices);
            let v = params.vertices[d1];
            let expected = Point::new2(2.0 * before.x() - v[0], 2.0 * before.y() - v[1]);
            assert!(after.sup_distance(&expected) <= 2f64.powi(-(params.depth as i32) + 1));
            // the point map recovers the same image away from cell boundaries
            let stepped = sys.step(&before).unwrap();
            if params.cell_of(before) as usize == d1 {
                assert!(stepped.sup_distance(&expected) < 1e-12);
            }
        }
    }

    #[test]
    fn embedded_points_lie_in_triangle() {
        let params = GasketParams::default();
        let mut r = rng(8);
        for _ in 0..1000 {
            let p = GasketAddress::random(&params, &mut r).embed(&params.vertices);
            let l = params.barycentric(p);
            assert!(l.iter().all(|&v| v >= -1e-12), "{p} {l:?}");
        }
    }

    #[test]
    fn address_from_point_round_trips() {
        let params = GasketParams::default();
        let mut r = rng(21);
        for _ in 0..200 {
            let a = GasketAddress::random(&params, &mut r);
            let p = a.embed(&params.vertices);
            let b = GasketAddress::from_point(&params, p);
            assert!(b.embed(&params.vertices).sup_distance(&p) < 1e-12);
        }
    }

    #[test]
    fn incremental_gasket_orbit_is_exact() {
        let sys = MapSystem::gasket([0.5, 0.3, 0.2]);
        let MapSystem::Gasket(params) = &sys else {
            unreachable!()
        };
        assert!(params.exact_incremental());
        let mut orbit = sys.orbit(rng(31)).unwrap();
        for _ in 0..5000 {
            orbit.advance().unwrap();
            let OrbitState::Address { address, point } = &orbit.state else {
                unreachable!()
            };
            assert_eq!(*point, address.embed(&params.vertices));
        }
        let mut skewed = params.clone();
        skewed.vertices[2] = [0.3, 0.9];
        assert!(!skewed.exact_incremental());
    }

    #[test]
    fn gasket_weights_are_validated() {
        assert!(GasketParams::with_weights([0.5, 0.5, 0.1])
            .validate()
            .is_err());
        assert!(GasketParams::with_weights([1.2, -0.2, 0.0])
            .validate()
            .is_err());
        assert!(GasketParams::with_weights([0.2, 0.3, 0.5])
            .validate()
            .is_ok());
    }

    #[test]
    fn orbit_matches_pure_step_without_jitter() {
        let sys = MapSystem::henon(1.4, 0.3);
        let x0 = sys.sample_initial_seeded(1).unwrap();
        let pure = trajectory(&sys, x0, 50).unwrap();
        let mut orbit = sys.orbit_from(x0, rng(0)).unwrap();
        for p in pure {
            assert_eq!(orbit.position(), p);
            orbit.advance().unwrap();
        }
    }

    #[test]
    fn jittered_doubling_orbit_does_not_collapse() {
        let sys = MapSystem::Doubling {
            jitter: DOUBLING_ESTIMATION_JITTER,
        };
        let mut orbit = sys.orbit(rng(4)).unwrap();
        let mut zeros = 0;
        for _ in 0..10_000 {
            orbit.advance().unwrap();
            let x = orbit.position().x();
            assert!((0.0..1.0).contains(&x));
            if x == 0.0 {
                zeros += 1;
            }
        }
        assert_eq!(zeros, 0);
    }
}
