//! Extreme-value estimation on the matching process.
//!
//! With `P(Y > u) ~ C e^{-u D (q-1)}`, the maximum of `n` consecutive values
//! satisfies `P(M_n <= u) ~ exp(-theta n C e^{-u D (q-1)})`, a Gumbel law with
//!
//! ```text
//! scale    = 1 / (D (q-1))
//! location = log(theta C n) / (D (q-1))
//! ```
//!
//! [`dq_from_gumbel`] and [`theta_from_gumbel`] invert these relations (the
//! latter with `C = 1`; see [`theta_from_gumbel_with_prefactor`]).
//! [`estimate_ei`] is the direct estimator `theta_K = 1 - sum_{k<K} p_k` built
//! from exceedance return patterns.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::matching::{self, MatchError};

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Smallest sample accepted by [`fit_gumbel`].
pub const MIN_FIT_SAMPLES: usize = 50;
pub const FIT_TOLERANCE: f64 = 1e-10;
pub const FIT_MAX_ITER: usize = 100;

/// Below this many exceedances `estimate_ei` logs a warning.
pub const RECOMMENDED_EXCEEDANCES: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum EvtError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("sample has zero variance")]
    DegenerateSample,
    #[error("Gumbel fit did not converge after {} iterations (last scales {:?})", trace.len(), &trace[trace.len().saturating_sub(3)..])]
    FitFailure { trace: Vec<f64> },
    #[error("no exceedance above threshold {threshold}")]
    InsufficientTail { threshold: f64 },
    #[error("theta = 1: every cluster term vanished and H_q is infinite")]
    InfiniteH,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Matching(#[from] MatchError),
}

type Result<T> = std::result::Result<T, EvtError>;

/// Fitted Gumbel law `exp(-exp(-(x - location)/scale))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GumbelParams {
    pub location: f64,
    pub scale: f64,
    pub n_samples: usize,
    pub loglik: f64,
}

impl GumbelParams {
    /// Parameters without fit metadata, e.g. for simulation.
    pub fn new(location: f64, scale: f64) -> Self {
        Self {
            location,
            scale,
            n_samples: 0,
            loglik: 0.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        (-(-(x - self.location) / self.scale).exp()).exp()
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.location - self.scale * (-p.ln()).ln()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        // u = 0 has probability 2^-53; map it away from the log singularity
        self.quantile(u.max(f64::MIN_POSITIVE))
    }

    pub fn log_likelihood(&self, data: &[f64]) -> f64 {
        data.iter()
            .map(|&x| {
                let z = (x - self.location) / self.scale;
                -self.scale.ln() - z - (-z).exp()
            })
            .sum()
    }

    /// Asymptotic standard error of the location MLE, from the inverse
    /// Fisher information `scale^2 (1 + 6 (1 - gamma)^2 / pi^2) / n`.
    pub fn location_std_error(&self) -> f64 {
        let c = 1.0 + 6.0 * (1.0 - EULER_GAMMA).powi(2) / (PI * PI);
        self.scale * (c / self.n_samples as f64).sqrt()
    }

    /// Asymptotic standard error of the scale MLE.
    pub fn scale_std_error(&self) -> f64 {
        self.scale * (6.0 / (PI * PI) / self.n_samples as f64).sqrt()
    }
}

fn check_sample(data: &[f64]) -> Result<(f64, f64)> {
    if data.len() < MIN_FIT_SAMPLES {
        return Err(EvtError::TooFewSamples {
            needed: MIN_FIT_SAMPLES,
            got: data.len(),
        });
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(EvtError::InvalidArgument(
            "sample contains non-finite values".into(),
        ));
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(EvtError::DegenerateSample);
    }
    Ok((mean, var.sqrt()))
}

/// Method-of-moments Gumbel fit.
pub fn fit_gumbel_moments(data: &[f64]) -> Result<GumbelParams> {
    let (mean, std) = check_sample(data)?;
    let scale = std * 6f64.sqrt() / PI;
    let mut params = GumbelParams::new(mean - EULER_GAMMA * scale, scale);
    params.n_samples = data.len();
    params.loglik = params.log_likelihood(data);
    Ok(params)
}

/// Maximum-likelihood Gumbel fit.
///
/// The scale solves `g(s) = s - mean(x) + sum x e^{-x/s} / sum e^{-x/s} = 0`
/// by damped Newton steps from the moment estimate; the location follows in
/// closed form as `-s log(mean(e^{-x/s}))`. Data are shifted by their minimum
/// first so the exponentials never overflow. Every operation is homogeneous,
/// so multiplying the data by a power of two scales the result exactly.
pub fn fit_gumbel(data: &[f64]) -> Result<GumbelParams> {
    let (_, std) = check_sample(data)?;
    let n = data.len() as f64;
    let shift = data.iter().copied().fold(f64::INFINITY, f64::min);
    let centered: Vec<f64> = data.iter().map(|x| x - shift).collect();
    let mean_c = centered.iter().sum::<f64>() / n;

    let moments = |scale: f64| {
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for &d in &centered {
            let w = (-d / scale).exp();
            s0 += w;
            s1 += d * w;
            s2 += d * d * w;
        }
        (s0, s1, s2)
    };

    let mut scale = std * 6f64.sqrt() / PI;
    let mut trace = vec![scale];
    let mut converged = false;
    for _ in 0..FIT_MAX_ITER {
        let (s0, s1, s2) = moments(scale);
        let m1 = s1 / s0;
        let g = scale - mean_c + m1;
        let dg = 1.0 + (s2 / s0 - m1 * m1) / (scale * scale);
        let mut step = g / dg;
        let mut next = scale - step;
        while !(next > 0.0) {
            step *= 0.5;
            next = scale - step;
        }
        trace.push(next);
        let done = (next - scale).abs() <= FIT_TOLERANCE * next;
        scale = next;
        if done {
            converged = true;
            break;
        }
    }
    if !converged || !scale.is_finite() {
        return Err(EvtError::FitFailure { trace });
    }
    let (s0, _, _) = moments(scale);
    let location = shift - scale * (s0 / n).ln();
    let mut params = GumbelParams::new(location, scale);
    params.n_samples = data.len();
    params.loglik = params.log_likelihood(data);
    if !params.loglik.is_finite() {
        return Err(EvtError::FitFailure { trace });
    }
    Ok(params)
}

/// `D_q^f = 1 / (scale (q-1))`.
pub fn dq_from_gumbel(params: &GumbelParams, q: usize) -> Result<f64> {
    if q < 2 {
        return Err(EvtError::InvalidArgument(format!("q = {q} < 2")));
    }
    if !(params.scale > 0.0) {
        return Err(EvtError::InvalidArgument("scale must be positive".into()));
    }
    Ok(1.0 / (params.scale * (q - 1) as f64))
}

/// `theta = exp(location D (q-1) - log n)` clamped to `(0, 1]`, assuming a
/// unit prefactor in the tail of `Y`.
pub fn theta_from_gumbel(
    params: &GumbelParams,
    q: usize,
    block_size: usize,
    dq: f64,
) -> Result<f64> {
    theta_from_gumbel_with_prefactor(params, q, block_size, dq, 1.0)
}

/// As [`theta_from_gumbel`] for a tail `P(Y > u) ~ prefactor e^{-u D (q-1)}`.
/// For the doubling map with the identity observable and `q = 2` the
/// prefactor is 2 (a sup-norm ball of radius `r` has Lebesgue measure `2r`).
pub fn theta_from_gumbel_with_prefactor(
    params: &GumbelParams,
    q: usize,
    block_size: usize,
    dq: f64,
    prefactor: f64,
) -> Result<f64> {
    if !(dq > 0.0) || !(prefactor > 0.0) || q < 2 || block_size == 0 {
        return Err(EvtError::InvalidArgument(
            "need dq > 0, prefactor > 0, q >= 2, block_size >= 1".into(),
        ));
    }
    let log_theta =
        params.location * dq * (q - 1) as f64 - (block_size as f64).ln() - prefactor.ln();
    Ok(log_theta.exp().clamp(f64::MIN_POSITIVE, 1.0))
}

/// Output of the `theta_K` estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EIEstimate {
    /// `p_hat[k]` estimates the probability that the next exceedance after
    /// an exceedance comes exactly `k + 1` steps later.
    pub p_hat: Vec<f64>,
    /// `1 - sum p_hat`, clamped to `[0, 1]`.
    pub theta_hat: f64,
    /// Unclamped `1 - sum p_hat`, accumulated in ascending `k`.
    pub theta_raw: f64,
    pub threshold_u: f64,
    pub exceedance_count: usize,
    pub q: usize,
}

/// Birkhoff-sum estimate of `p_0..p_{K-1}` and `theta_K` at the empirical
/// `quantile` of `values`. Exceedances are `Y_i > u`; indices closer than
/// `K + 1` to the end are left out so every `p_k` shares one denominator.
pub fn estimate_ei(values: &[f64], quantile: f64, k: usize, q: usize) -> Result<EIEstimate> {
    if k == 0 {
        return Err(EvtError::InvalidArgument("K must be at least 1".into()));
    }
    let u = matching::threshold_for_quantile(values, quantile)?;
    estimate_ei_at(values, u, k, q)
}

/// As [`estimate_ei`] with an explicit threshold.
pub fn estimate_ei_at(values: &[f64], u: f64, k: usize, q: usize) -> Result<EIEstimate> {
    if k == 0 {
        return Err(EvtError::InvalidArgument("K must be at least 1".into()));
    }
    let n = values.len();
    let mut counts = vec![0usize; k];
    let mut exceedances = 0usize;
    if n >= k + 2 {
        let last = n - k - 2;
        for i in 0..=last {
            if values[i] <= u {
                continue;
            }
            exceedances += 1;
            if let Some(gap) = values[i + 1..=i + k].iter().position(|&y| y > u) {
                counts[gap] += 1;
            }
        }
    }
    if exceedances == 0 {
        return Err(EvtError::InsufficientTail { threshold: u });
    }
    if exceedances < RECOMMENDED_EXCEEDANCES {
        log::warn!("theta estimate rests on only {exceedances} exceedances of u = {u}");
    }
    let p_hat: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / exceedances as f64)
        .collect();
    let theta_raw = 1.0 - p_hat.iter().fold(0.0, |acc, p| acc + p);
    Ok(EIEstimate {
        theta_hat: theta_raw.clamp(0.0, 1.0),
        theta_raw,
        p_hat,
        threshold_u: u,
        exceedance_count: exceedances,
        q,
    })
}

/// `H_q = log(1 - theta) / (1 - q)`.
pub fn hq_from_theta(theta: f64, q: usize) -> Result<f64> {
    if q < 2 {
        return Err(EvtError::InvalidArgument(format!("q = {q} < 2")));
    }
    if theta == 1.0 {
        return Err(EvtError::InfiniteH);
    }
    if !(0.0..1.0).contains(&theta) {
        return Err(EvtError::InvalidArgument(format!(
            "theta = {theta} outside [0,1)"
        )));
    }
    Ok((1.0 - theta).ln() / (1.0 - q as f64))
}

/// What a [`SpectrumResult`] row measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpectrumKind {
    /// `D_q^f` from the Gumbel scale.
    Dq,
    /// `theta_K` from exceedance patterns.
    Theta,
    /// `H_q` from `theta_K`.
    Hq,
    /// `theta` from the Gumbel location (unit prefactor).
    ThetaGumbel,
    /// `p_hat[k]` of the `theta_K` estimator.
    PHat(usize),
    ThetaAnalytic,
    DqAnalytic,
    /// Estimate minus oracle.
    ThetaDelta,
    DqDelta,
}

impl fmt::Display for SpectrumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpectrumKind::Dq => f.write_str("dq"),
            SpectrumKind::Theta => f.write_str("theta"),
            SpectrumKind::Hq => f.write_str("hq"),
            SpectrumKind::ThetaGumbel => f.write_str("theta_gumbel"),
            SpectrumKind::PHat(k) => write!(f, "p{k}"),
            SpectrumKind::ThetaAnalytic => f.write_str("theta_analytic"),
            SpectrumKind::DqAnalytic => f.write_str("dq_analytic"),
            SpectrumKind::ThetaDelta => f.write_str("theta_delta"),
            SpectrumKind::DqDelta => f.write_str("dq_delta"),
        }
    }
}

impl FromStr for SpectrumKind {
    type Err = EvtError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dq" => SpectrumKind::Dq,
            "theta" => SpectrumKind::Theta,
            "hq" => SpectrumKind::Hq,
            "theta_gumbel" => SpectrumKind::ThetaGumbel,
            "theta_analytic" => SpectrumKind::ThetaAnalytic,
            "dq_analytic" => SpectrumKind::DqAnalytic,
            "theta_delta" => SpectrumKind::ThetaDelta,
            "dq_delta" => SpectrumKind::DqDelta,
            other => match other.strip_prefix('p').and_then(|k| k.parse().ok()) {
                Some(k) => SpectrumKind::PHat(k),
                None => {
                    return Err(EvtError::InvalidArgument(format!(
                        "unknown result kind `{s}`"
                    )))
                }
            },
        })
    }
}

/// Identifiers attached to a result row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultMeta {
    pub system: String,
    pub observable: String,
    pub n_total: usize,
    pub block_size: usize,
    pub quantile: f64,
    pub k: usize,
    pub seed: u64,
}

/// Cross-run summary of one estimator at one `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub q: usize,
    pub estimate_mean: f64,
    /// Population standard deviation across runs.
    pub estimate_std: f64,
    pub run_count: usize,
    pub kind: SpectrumKind,
    pub metadata: ResultMeta,
}

pub fn aggregate_runs(
    estimates: &[f64],
    kind: SpectrumKind,
    q: usize,
    metadata: ResultMeta,
) -> Result<SpectrumResult> {
    if estimates.is_empty() {
        return Err(EvtError::InvalidArgument(
            "no estimates to aggregate".into(),
        ));
    }
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let var = estimates
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .sum::<f64>()
        / n;
    Ok(SpectrumResult {
        q,
        estimate_mean: mean,
        estimate_std: var.sqrt(),
        run_count: estimates.len(),
        kind,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn gumbel_sample(loc: f64, scale: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let g = GumbelParams::new(loc, scale);
        (0..n).map(|_| g.sample(&mut rng)).collect()
    }

    #[test]
    fn recovers_synthetic_parameters() {
        let data = gumbel_sample(3.0, 2.0, 100_000, 1);
        let fit = fit_gumbel(&data).unwrap();
        assert!((fit.location - 3.0).abs() / 3.0 < 0.02, "{fit:?}");
        assert!((fit.scale - 2.0).abs() / 2.0 < 0.02, "{fit:?}");
        assert_eq!(fit.n_samples, 100_000);
        let mom = fit_gumbel_moments(&data).unwrap();
        assert!(fit.loglik >= mom.loglik);
    }

    #[test]
    fn mle_is_a_stationary_point() {
        let data = gumbel_sample(-1.0, 0.4, 5000, 2);
        let fit = fit_gumbel(&data).unwrap();
        for (dl, ds) in [(1e-4, 0.0), (-1e-4, 0.0), (0.0, 1e-4), (0.0, -1e-4)] {
            let nudged = GumbelParams::new(fit.location + dl, fit.scale + ds);
            assert!(nudged.log_likelihood(&data) <= fit.loglik);
        }
    }

    #[test]
    fn degenerate_and_small_samples() {
        assert!(matches!(
            fit_gumbel(&[2.5; 100]),
            Err(EvtError::DegenerateSample)
        ));
        assert!(matches!(
            fit_gumbel(&[1.0, 2.0, 3.0]),
            Err(EvtError::TooFewSamples { needed: 50, got: 3 })
        ));
    }

    #[test]
    fn translation_equivariance() {
        let data = gumbel_sample(1.0, 0.7, 2000, 3);
        let shifted: Vec<f64> = data.iter().map(|x| x + 10.0).collect();
        let a = fit_gumbel(&data).unwrap();
        let b = fit_gumbel(&shifted).unwrap();
        assert!((b.location - a.location - 10.0).abs() < 1e-9);
        assert!((b.scale - a.scale).abs() < 1e-9);
    }

    #[test]
    fn scale_equivariance_is_exact() {
        let data = gumbel_sample(4.0, 0.8, 3000, 4);
        let doubled: Vec<f64> = data.iter().map(|x| 2.0 * x).collect();
        let a = fit_gumbel(&data).unwrap();
        let b = fit_gumbel(&doubled).unwrap();
        assert_eq!(b.scale, 2.0 * a.scale);
        assert_eq!(b.location, 2.0 * a.location);
        assert_eq!(
            dq_from_gumbel(&b, 2).unwrap(),
            dq_from_gumbel(&a, 2).unwrap() / 2.0
        );
    }

    #[test]
    fn parameter_algebra_examples() {
        let unit = GumbelParams::new(0.0, 1.0);
        assert_eq!(dq_from_gumbel(&unit, 2).unwrap(), 1.0);
        assert_eq!(
            dq_from_gumbel(&GumbelParams::new(0.0, 0.5), 3).unwrap(),
            1.0
        );
        assert!(dq_from_gumbel(&unit, 1).is_err());

        let (n, dq, q) = (50_000usize, 1.3, 3usize);
        let at =
            |theta: f64| GumbelParams::new((theta * n as f64).ln() / (dq * (q - 1) as f64), 1.0);
        assert!((theta_from_gumbel(&at(1.0), q, n, dq).unwrap() - 1.0).abs() < 1e-12);
        assert!((theta_from_gumbel(&at(0.5), q, n, dq).unwrap() - 0.5).abs() < 1e-12);
        // values above 1 are clamped
        assert_eq!(theta_from_gumbel(&at(3.0), q, n, dq).unwrap(), 1.0);
        let p = theta_from_gumbel_with_prefactor(&at(1.0), q, n, dq, 2.0).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        assert!(theta_from_gumbel(&unit, 2, n, 0.0).is_err());
    }

    #[test]
    fn ei_total_clustering() {
        let mut values = vec![0.0; 10];
        values.extend(vec![5.0; 990]);
        let est = estimate_ei_at(&values, 1.0, 5, 2).unwrap();
        assert_eq!(est.p_hat[0], 1.0);
        assert_eq!(est.theta_hat, 0.0);
    }

    #[test]
    fn ei_isolated_exceedances() {
        let k = 5;
        let mut values = vec![0.0; 1200];
        for i in (0..1200).step_by(k + 2) {
            values[i] = 3.0;
        }
        let est = estimate_ei_at(&values, 1.0, k, 2).unwrap();
        assert!(est.p_hat.iter().all(|&p| p == 0.0));
        assert_eq!(est.theta_hat, 1.0);
    }

    #[test]
    fn ei_counts_first_return_only() {
        // exceedances at 0, 2, 3: from 0 the first return is at lag 2, from 2 at lag 1
        let mut values = vec![0.0; 20];
        values[0] = 1.0;
        values[2] = 1.0;
        values[3] = 1.0;
        let est = estimate_ei_at(&values, 0.5, 3, 2).unwrap();
        assert_eq!(est.exceedance_count, 3);
        assert_eq!(est.p_hat, vec![1.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(
            est.theta_raw,
            1.0 - est.p_hat.iter().fold(0.0, |a, p| a + p)
        );
    }

    #[test]
    fn ei_without_exceedances_fails() {
        let values = vec![1.0; 1000];
        assert!(matches!(
            estimate_ei(&values, 0.99, 5, 2),
            Err(EvtError::InsufficientTail { .. })
        ));
        assert!(estimate_ei(&values, 0.99, 0, 2).is_err());
    }

    #[test]
    fn hq_examples() {
        assert_eq!(hq_from_theta(0.0, 4).unwrap(), 0.0);
        let h = hq_from_theta(1.0 - 2f64.powi(-1), 2).unwrap();
        assert!((h - 2f64.ln()).abs() < 1e-15);
        assert!((hq_from_theta(0.5, 3).unwrap() - 0.3466).abs() < 1e-4);
        assert!(matches!(hq_from_theta(1.0, 2), Err(EvtError::InfiniteH)));
    }

    #[test]
    fn aggregate_examples() {
        let meta = ResultMeta::default();
        let r = aggregate_runs(&[1.0, 1.0, 1.0], SpectrumKind::Dq, 2, meta.clone()).unwrap();
        assert_eq!(
            (r.estimate_mean, r.estimate_std, r.run_count),
            (1.0, 0.0, 3)
        );
        let r = aggregate_runs(&[0.0, 1.0], SpectrumKind::Theta, 2, meta.clone()).unwrap();
        assert_eq!((r.estimate_mean, r.estimate_std), (0.5, 0.5));
        assert!(aggregate_runs(&[], SpectrumKind::Theta, 2, meta).is_err());
    }

    #[test]
    fn kind_strings_round_trip() {
        for kind in [
            SpectrumKind::Dq,
            SpectrumKind::Theta,
            SpectrumKind::Hq,
            SpectrumKind::ThetaGumbel,
            SpectrumKind::PHat(3),
            SpectrumKind::ThetaAnalytic,
            SpectrumKind::DqAnalytic,
            SpectrumKind::ThetaDelta,
            SpectrumKind::DqDelta,
        ] {
            assert_eq!(kind.to_string().parse::<SpectrumKind>().unwrap(), kind);
        }
        assert!("bogus".parse::<SpectrumKind>().is_err());
    }
}
