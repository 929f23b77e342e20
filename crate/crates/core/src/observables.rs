//! Observation functions `f: M -> R^m`.
//!
//! Catalog entries cover the two observable families used on the gasket and
//! Hénon experiments, the mean observable `(x+y)/2`, the piecewise interval
//! observable of the doubling-map example, and two generic linear maps used
//! for projection checks. Interval observables carry an explicit branch list
//! so that preimages can be enumerated exactly.

use std::f64::consts::{E, SQRT_2};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::point::Point;

/// Below this magnitude the `1/x` observables refuse to evaluate.
pub const SINGULARITY_FLOOR: f64 = 1e-300;

/// Step of the central finite difference.
pub const FD_STEP: f64 = 1e-6;

/// Distance to a branch boundary under which a point counts as a breakpoint.
pub const BREAKPOINT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObservableError {
    #[error("observable `{name}` is not finite at {at}")]
    Evaluation { name: String, at: Point },
    #[error("observable `{name}` has a branch boundary at {boundary}")]
    Breakpoint { name: String, boundary: f64 },
    #[error("observable `{name}` expects dimension {expected}, got {got}")]
    DimensionMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown observable `{0}`")]
    Unknown(String),
    #[error("invalid branch list: {0}")]
    InvalidBranches(String),
    #[error("{0} is outside every branch domain")]
    OutsideDomain(f64),
}

type Result<T> = std::result::Result<T, ObservableError>;

/// Strictly monotone map on one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BranchMap {
    /// `slope * x + intercept`
    Affine { slope: f64, intercept: f64 },
    /// `coef * x^power` on a nonnegative domain
    Monomial { coef: f64, power: f64 },
}

impl BranchMap {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            BranchMap::Affine { slope, intercept } => slope * x + intercept,
            BranchMap::Monomial { coef, power } => coef * x.powf(power),
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        match *self {
            BranchMap::Affine { slope, intercept } => (y - intercept) / slope,
            BranchMap::Monomial { coef, power } => (y / coef).powf(1.0 / power),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            BranchMap::Affine { slope, .. } => slope,
            BranchMap::Monomial { coef, power } => coef * power * x.powf(power - 1.0),
        }
    }
}

/// One monotone piece of an interval map, defined on `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseBranch {
    pub domain: [f64; 2],
    pub map: BranchMap,
}

impl PiecewiseBranch {
    pub fn new(lo: f64, hi: f64, map: BranchMap) -> Self {
        Self {
            domain: [lo, hi],
            map,
        }
    }

    pub fn affine(lo: f64, hi: f64, slope: f64, intercept: f64) -> Self {
        Self::new(lo, hi, BranchMap::Affine { slope, intercept })
    }

    pub fn lo(&self) -> f64 {
        self.domain[0]
    }

    pub fn hi(&self) -> f64 {
        self.domain[1]
    }

    pub fn map(&self, x: f64) -> f64 {
        self.map.eval(x)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.map.inverse(y)
    }

    pub fn dmap(&self, x: f64) -> f64 {
        self.map.derivative(x)
    }

    /// Closed image interval `[min, max]` of the branch.
    pub fn image(&self) -> (f64, f64) {
        let a = self.map(self.lo());
        let b = self.map(self.hi());
        (a.min(b), a.max(b))
    }
}

/// Index of the branch containing `x`. Domains are half-open except the last
/// one, which also contains its right end.
pub fn branch_index(branches: &[PiecewiseBranch], x: f64) -> Option<usize> {
    let last = branches.len().checked_sub(1)?;
    branches
        .iter()
        .enumerate()
        .position(|(i, b)| x >= b.lo() && (x < b.hi() || (i == last && x <= b.hi())))
}

/// Checks that `branches` partition `[0,1]`, are strictly monotone, and have
/// working inverses.
pub fn validate_branches(branches: &[PiecewiseBranch]) -> Result<()> {
    let fail = |msg: String| Err(ObservableError::InvalidBranches(msg));
    if branches.is_empty() {
        return fail("no branches".into());
    }
    if branches[0].lo().abs() > 1e-12 {
        return fail(format!(
            "first branch starts at {}, expected 0",
            branches[0].lo()
        ));
    }
    if (branches[branches.len() - 1].hi() - 1.0).abs() > 1e-12 {
        return fail("last branch must end at 1".into());
    }
    for w in branches.windows(2) {
        if (w[0].hi() - w[1].lo()).abs() > 1e-12 {
            return fail(format!(
                "gap or overlap between {} and {}",
                w[0].hi(),
                w[1].lo()
            ));
        }
    }
    for (i, b) in branches.iter().enumerate() {
        if !(b.hi() > b.lo()) {
            return fail(format!("branch {i} has an empty domain"));
        }
        if let BranchMap::Monomial { power, coef } = b.map {
            if b.lo() < 0.0 || power <= 0.0 || coef == 0.0 {
                return fail(format!(
                    "branch {i}: monomials need power > 0, coef != 0 on x >= 0"
                ));
            }
        }
        let mut sign = 0.0;
        for j in 1..64 {
            let x = b.lo() + (b.hi() - b.lo()) * j as f64 / 64.0;
            let d = b.dmap(x);
            if !(d.abs() > 0.0) || !d.is_finite() {
                return fail(format!("branch {i}: derivative vanishes at {x}"));
            }
            if sign == 0.0 {
                sign = d.signum();
            } else if d.signum() != sign {
                return fail(format!("branch {i} is not monotone"));
            }
            let back = b.inverse(b.map(x));
            if (back - x).abs() > 1e-12 * (1.0 + x.abs()) {
                return fail(format!("branch {i}: inverse mismatch at {x}"));
            }
        }
    }
    Ok(())
}

/// Value of a piecewise map, wrapped so it can be used outside `[0,1]`.
pub fn eval_piecewise(branches: &[PiecewiseBranch], x: f64) -> Result<f64> {
    let i = branch_index(branches, x).ok_or(ObservableError::OutsideDomain(x))?;
    Ok(branches[i].map(x))
}

/// Derivative of a piecewise map, or the nearest interior boundary when `x`
/// sits on one.
pub fn derivative_piecewise(branches: &[PiecewiseBranch], x: f64) -> std::result::Result<f64, f64> {
    for b in &branches[..branches.len().saturating_sub(1)] {
        if (x - b.hi()).abs() <= BREAKPOINT_TOL {
            return Err(b.hi());
        }
    }
    match branch_index(branches, x) {
        Some(i) => Ok(branches[i].dmap(x)),
        None => Err(x),
    }
}

/// A derivative value: scalar for interval observables, Jacobian otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Derivative {
    Scalar(f64),
    /// Row-major `rows x cols` matrix stored in the top-left corner.
    Jacobian {
        rows: usize,
        cols: usize,
        entries: [[f64; 2]; 2],
    },
}

impl Derivative {
    pub fn scalar(&self) -> Option<f64> {
        match *self {
            Derivative::Scalar(d) => Some(d),
            Derivative::Jacobian {
                rows: 1,
                cols: 1,
                entries,
            } => Some(entries[0][0]),
            _ => None,
        }
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        match *self {
            Derivative::Scalar(d) => {
                assert!(r == 0 && c == 0);
                d
            }
            Derivative::Jacobian { entries, .. } => entries[r][c],
        }
    }
}

pub type CustomFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;

#[derive(Clone)]
pub enum ObservableKind {
    Identity,
    /// `x -> A x` with `A` of shape `out_dim x in_dim`.
    Linear {
        matrix: [[f64; 2]; 2],
    },
    /// `((x - 0.5)^2, 2y)`
    ShiftedSquare,
    /// `(1, y^2 + x)`
    Degenerate,
    /// `(x^2, y^2)`
    Squares,
    /// `(sin(1/x), cos(1/y))`
    InverseTrig,
    Piecewise(Vec<PiecewiseBranch>),
    /// User-supplied function; derivatives fall back to finite differences.
    Custom(CustomFn),
}

impl fmt::Debug for ObservableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservableKind::Identity => write!(f, "Identity"),
            ObservableKind::Linear { matrix } => write!(f, "Linear({matrix:?})"),
            ObservableKind::ShiftedSquare => write!(f, "ShiftedSquare"),
            ObservableKind::Degenerate => write!(f, "Degenerate"),
            ObservableKind::Squares => write!(f, "Squares"),
            ObservableKind::InverseTrig => write!(f, "InverseTrig"),
            ObservableKind::Piecewise(b) => write!(f, "Piecewise({b:?})"),
            ObservableKind::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Observable {
    name: String,
    in_dim: usize,
    out_dim: usize,
    kind: ObservableKind,
}

/// Names accepted by [`catalog`].
pub const CATALOG: &[&str] = &[
    "id",
    "id1",
    "shear2",
    "shear100",
    "stretch_y100",
    "inverse_trig",
    "shifted_square",
    "degenerate",
    "squares",
    "mean",
    "example_f",
    "doubling_f",
    "generic_linear2",
    "generic_projection1",
];

/// Looks up a built-in observable.
pub fn catalog(name: &str) -> Result<Observable> {
    let obs = match name {
        "id" => Observable::identity(2),
        "id1" => Observable::identity(1),
        "shear2" => Observable::linear(name, 2, [[2.0, 1.0], [0.0, 2.0]]),
        "shear100" => Observable::linear(name, 2, [[100.0, 1.0], [0.0, 100.0]]),
        "stretch_y100" => Observable::linear(name, 2, [[1.0, 0.0], [0.0, 100.0]]),
        "inverse_trig" => Observable::new(name, 2, 2, ObservableKind::InverseTrig),
        "shifted_square" => Observable::new(name, 2, 2, ObservableKind::ShiftedSquare),
        "degenerate" => Observable::new(name, 2, 2, ObservableKind::Degenerate),
        "squares" => Observable::new(name, 2, 2, ObservableKind::Squares),
        "mean" => Observable::linear(name, 1, [[0.5, 0.5], [0.0, 0.0]]),
        "example_f" => Observable::new(name, 1, 1, ObservableKind::Piecewise(example_branches())),
        "doubling_f" => Observable::new(name, 1, 1, ObservableKind::Piecewise(doubling_branches())),
        "generic_linear2" => Observable::linear(name, 2, [[1.0, SQRT_2 - 1.0], [2.0 - E, 1.0]]),
        "generic_projection1" => {
            Observable::linear(name, 1, [[1f64.cos(), 1f64.sin()], [0.0, 0.0]])
        }
        _ => return Err(ObservableError::Unknown(name.into())),
    };
    Ok(obs)
}

/// Branches of the example observable: `2x` on `[0, 1/2]`, `3/2 - x` on
/// `(1/2, 1]`.
pub fn example_branches() -> Vec<PiecewiseBranch> {
    vec![
        PiecewiseBranch::affine(0.0, 0.5, 2.0, 0.0),
        PiecewiseBranch::affine(0.5, 1.0, -1.0, 1.5),
    ]
}

/// Branches of `x -> 2x mod 1`.
pub fn doubling_branches() -> Vec<PiecewiseBranch> {
    vec![
        PiecewiseBranch::affine(0.0, 0.5, 2.0, 0.0),
        PiecewiseBranch::affine(0.5, 1.0, 2.0, -1.0),
    ]
}

pub fn identity_branches() -> Vec<PiecewiseBranch> {
    vec![PiecewiseBranch::affine(0.0, 1.0, 1.0, 0.0)]
}

impl Observable {
    pub fn new(name: &str, in_dim: usize, out_dim: usize, kind: ObservableKind) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
            kind,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let name = if dim == 1 { "id1" } else { "id" };
        Self::new(name, dim, dim, ObservableKind::Identity)
    }

    /// Linear observable from a 2-dimensional state into `R^out_dim`; only the
    /// first `out_dim` rows of `matrix` are used.
    pub fn linear(name: &str, out_dim: usize, matrix: [[f64; 2]; 2]) -> Self {
        Self::new(name, 2, out_dim, ObservableKind::Linear { matrix })
    }

    /// Validated interval observable from a branch list.
    pub fn piecewise(name: &str, branches: Vec<PiecewiseBranch>) -> Result<Self> {
        validate_branches(&branches)?;
        Ok(Self::new(name, 1, 1, ObservableKind::Piecewise(branches)))
    }

    pub fn custom(name: &str, in_dim: usize, out_dim: usize, f: CustomFn) -> Self {
        Self::new(name, in_dim, out_dim, ObservableKind::Custom(f))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn kind(&self) -> &ObservableKind {
        &self.kind
    }

    pub fn branches(&self) -> Option<&[PiecewiseBranch]> {
        match &self.kind {
            ObservableKind::Piecewise(b) => Some(b),
            _ => None,
        }
    }

    pub fn has_analytic_derivative(&self) -> bool {
        !matches!(self.kind, ObservableKind::Custom(_))
    }

    fn check_dim(&self, x: &Point) -> Result<()> {
        if x.dim() != self.in_dim {
            return Err(ObservableError::DimensionMismatch {
                name: self.name.clone(),
                expected: self.in_dim,
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// `f(x)`, without the dimension check or the singularity guard.
    #[inline]
    fn eval_raw(&self, x: &Point) -> Point {
        match &self.kind {
            ObservableKind::Identity => *x,
            ObservableKind::Linear { matrix } => {
                let row = |r: usize| matrix[r][0] * x.x() + matrix[r][1] * x.y();
                if self.out_dim == 1 {
                    Point::new1(row(0))
                } else {
                    Point::new2(row(0), row(1))
                }
            }
            ObservableKind::ShiftedSquare => {
                let dx = x.x() - 0.5;
                Point::new2(dx * dx, 2.0 * x.y())
            }
            ObservableKind::Degenerate => Point::new2(1.0, x.y() * x.y() + x.x()),
            ObservableKind::Squares => Point::new2(x.x() * x.x(), x.y() * x.y()),
            ObservableKind::InverseTrig => Point::new2((1.0 / x.x()).sin(), (1.0 / x.y()).cos()),
            ObservableKind::Piecewise(branches) => {
                let xv = x.x();
                match branch_index(branches, xv) {
                    Some(i) => Point::new1(branches[i].map(xv)),
                    None => Point::new1(f64::NAN),
                }
            }
            ObservableKind::Custom(f) => f(x),
        }
    }

    fn singular(&self, x: &Point) -> bool {
        matches!(self.kind, ObservableKind::InverseTrig)
            && x.as_slice().iter().any(|c| c.abs() < SINGULARITY_FLOOR)
    }

    /// `f(x)`.
    pub fn evaluate(&self, x: &Point) -> Result<Point> {
        self.check_dim(x)?;
        let value = if self.singular(x) {
            None
        } else {
            Some(self.eval_raw(x))
        };
        match value {
            Some(v) if v.is_finite() && v.dim() == self.out_dim => Ok(v),
            _ => Err(ObservableError::Evaluation {
                name: self.name.clone(),
                at: *x,
            }),
        }
    }

    /// Evaluation used inside simulation loops: coordinates closer to a
    /// singularity than [`SINGULARITY_FLOOR`] are pushed out to it. The flag
    /// reports whether the guard fired (or the value is still not finite).
    #[inline]
    pub fn evaluate_guarded(&self, x: &Point) -> (Point, bool) {
        if self.singular(x) {
            let mut clamped = *x;
            for c in clamped.as_mut_slice() {
                if c.abs() < SINGULARITY_FLOOR {
                    *c = if *c < 0.0 {
                        -SINGULARITY_FLOOR
                    } else {
                        SINGULARITY_FLOOR
                    };
                }
            }
            return (self.eval_raw(&clamped), true);
        }
        let v = self.eval_raw(x);
        let bad = !v.is_finite();
        (v, bad)
    }

    /// Analytic derivative where available, central finite difference
    /// otherwise.
    pub fn derivative(&self, x: &Point) -> Result<Derivative> {
        self.check_dim(x)?;
        let jac = |entries: [[f64; 2]; 2]| Derivative::Jacobian {
            rows: self.out_dim,
            cols: self.in_dim,
            entries,
        };
        let d = match &self.kind {
            ObservableKind::Identity if self.in_dim == 1 => Derivative::Scalar(1.0),
            ObservableKind::Identity => jac([[1.0, 0.0], [0.0, 1.0]]),
            ObservableKind::Linear { matrix } => {
                let mut m = *matrix;
                if self.out_dim == 1 {
                    m[1] = [0.0, 0.0];
                }
                jac(m)
            }
            ObservableKind::ShiftedSquare => jac([[2.0 * (x.x() - 0.5), 0.0], [0.0, 2.0]]),
            ObservableKind::Degenerate => jac([[0.0, 0.0], [1.0, 2.0 * x.y()]]),
            ObservableKind::Squares => jac([[2.0 * x.x(), 0.0], [0.0, 2.0 * x.y()]]),
            ObservableKind::InverseTrig => {
                if self.singular(x) {
                    return Err(ObservableError::Evaluation {
                        name: self.name.clone(),
                        at: *x,
                    });
                }
                let (u, v) = (x.x(), x.y());
                jac([
                    [-(1.0 / u).cos() / (u * u), 0.0],
                    [0.0, (1.0 / v).sin() / (v * v)],
                ])
            }
            ObservableKind::Piecewise(branches) => match derivative_piecewise(branches, x.x()) {
                Ok(d) => Derivative::Scalar(d),
                Err(boundary) => {
                    return Err(ObservableError::Breakpoint {
                        name: self.name.clone(),
                        boundary,
                    })
                }
            },
            ObservableKind::Custom(_) => return self.finite_difference(x),
        };
        Ok(d)
    }

    /// Central finite difference with step [`FD_STEP`].
    #[allow(clippy::needless_range_loop)]
    pub fn finite_difference(&self, x: &Point) -> Result<Derivative> {
        self.check_dim(x)?;
        let mut entries = [[0.0; 2]; 2];
        for c in 0..self.in_dim {
            let mut plus = *x;
            let mut minus = *x;
            plus.as_mut_slice()[c] += FD_STEP;
            minus.as_mut_slice()[c] -= FD_STEP;
            let fp = self.evaluate(&plus)?;
            let fm = self.evaluate(&minus)?;
            for r in 0..self.out_dim {
                entries[r][c] = (fp.as_slice()[r] - fm.as_slice()[r]) / (2.0 * FD_STEP);
            }
        }
        if self.in_dim == 1 && self.out_dim == 1 {
            Ok(Derivative::Scalar(entries[0][0]))
        } else {
            Ok(Derivative::Jacobian {
                rows: self.out_dim,
                cols: self.in_dim,
                entries,
            })
        }
    }
}
