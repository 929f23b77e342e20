//! Matching statistics of observed chaotic trajectories.
//!
//! The crate simulates `q` independent trajectories of a chaotic map, passes
//! each through an observation function, and studies the process
//! `Y_i = -log max_j d(f(T^i x_1), f(T^i x_j))`. Block maxima of that process
//! follow a Gumbel law whose scale encodes the generalized dimension `D_q^f`
//! of the image measure and whose location carries the extremal index
//! `theta_q^f`. Exact oracles for both quantities live in [`analytic`].
//!
//! Module map:
//!
//! - [`dynamics`]: doubling map, Hénon map, Sierpinski-gasket shift.
//! - [`observables`]: observation functions and their derivatives.
//! - [`matching`]: the `Y_i` process, block maxima, quantile thresholds.
//! - [`evt`]: Gumbel MLE, parameter algebra, the `theta_K` estimator.
//! - [`analytic`]: quadrature of the interval-map extremal index formula,
//!   genericity checks, self-similar dimensions.
//! - [`cli`]: experiment configs, the multi-run driver, CSV/JSON output.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cli;
pub mod dynamics;
pub mod evt;
pub mod matching;
pub mod observables;
pub mod point;
pub mod seeding;

pub use point::Point;

/// Crate-level error. Each module has its own error enum; this one unifies
/// them for the experiment driver.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Dynamics(#[from] dynamics::DynamicsError),
    #[error(transparent)]
    Observable(#[from] observables::ObservableError),
    #[error(transparent)]
    Matching(#[from] matching::MatchError),
    #[error(transparent)]
    Evt(#[from] evt::EvtError),
    #[error(transparent)]
    Analytic(#[from] analytic::AnalyticError),
    #[error(transparent)]
    Cli(#[from] cli::CliError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
