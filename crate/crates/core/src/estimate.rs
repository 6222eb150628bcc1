//! Inference-latency estimation.
//!
//! Two estimators run side by side. A cheap self-weighting mean is updated
//! on every feedback event; periodically a three-parameter (shifted)
//! lognormal is fitted to the recent window by maximum likelihood and its
//! blended mean/median prediction is folded back into the running estimate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("latency values must be positive and finite (got {0})")]
    NonPositive(f64),
    #[error("need at least {need} samples to fit, have {have}")]
    TooFewSamples { need: usize, have: usize },
    #[error("samples are degenerate (all equal)")]
    Degenerate,
    #[error("invalid estimator config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, EstimateError>;

pub const MIN_FIT_SAMPLES: usize = 8;
const GRID_POINTS: usize = 256;
const UPPER_SHRINK: f64 = 1e-6;
const BISECT_RTOL: f64 = 1e-10;

fn check_positive(x: f64) -> Result<f64> {
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(EstimateError::NonPositive(x))
    }
}

/// Self-adaptive weighted mean of the old estimate and a new observation.
///
/// The weight on the new value is `2 t_old t_new / (t_old + t_new)^2`, which
/// shrinks as the two values move apart, so outliers move the estimate less
/// than an arithmetic mean would.
pub fn update_fast(t_old: f64, t_new: f64) -> Result<f64> {
    check_positive(t_old)?;
    check_positive(t_new)?;
    let s = t_old + t_new;
    let s2 = s * s;
    let w_old = (t_old * t_old + t_new * t_new) / s2;
    let w_new = 2.0 * t_old * t_new / s2;
    Ok(w_old * t_old + w_new * t_new)
}

/// Ring buffer of the most recent positive latencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyWindow {
    samples: VecDeque<f64>,
    capacity: usize,
}

impl LatencyWindow {
    pub fn new(capacity: usize) -> Self {
        LatencyWindow {
            samples: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, x: f64) -> Result<()> {
        check_positive(x)?;
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back(x);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.samples.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalFit {
    /// Location (minimum latency), seconds.
    pub gamma: f64,
    pub mu: f64,
    pub sigma: f64,
    /// False when no admissible root of the location equation was found and
    /// the fit fell back to the two-parameter model (`gamma = 0`).
    pub root_found: bool,
}

struct LogMoments {
    sum_l: f64,
    sum_l2: f64,
    sum_inv: f64,
    sum_l_inv: f64,
}

fn log_moments(xs: &[f64], gamma: f64) -> LogMoments {
    let mut m = LogMoments {
        sum_l: 0.0,
        sum_l2: 0.0,
        sum_inv: 0.0,
        sum_l_inv: 0.0,
    };
    for &x in xs {
        let d = x - gamma;
        let l = d.ln();
        let inv = 1.0 / d;
        m.sum_l += l;
        m.sum_l2 += l * l;
        m.sum_inv += inv;
        m.sum_l_inv += l * inv;
    }
    m
}

/// Left-hand side of the single-variable location equation obtained by
/// substituting the closed-form `mu(gamma)` and `sigma^2(gamma)` into the
/// gamma score equation. Its sign is opposite to the slope of the profile
/// log-likelihood.
pub fn gamma_equation(xs: &[f64], gamma: f64) -> f64 {
    let n = xs.len() as f64;
    let m = log_moments(xs, gamma);
    m.sum_inv * (m.sum_l - m.sum_l2 + m.sum_l * m.sum_l / n) - n * m.sum_l_inv
}

/// Closed-form `(mu, sigma)` for a fixed location.
pub fn conditional_mu_sigma(xs: &[f64], gamma: f64) -> (f64, f64) {
    let n = xs.len() as f64;
    let logs: Vec<f64> = xs.iter().map(|&x| (x - gamma).ln()).collect();
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|l| (l - mu) * (l - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

pub fn log_likelihood(xs: &[f64], gamma: f64, mu: f64, sigma: f64) -> f64 {
    if xs.iter().any(|&x| x <= gamma) || !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let n = xs.len() as f64;
    let mut sum_log = 0.0;
    let mut sum_sq = 0.0;
    for &x in xs {
        let l = (x - gamma).ln();
        sum_log += l;
        sum_sq += (l - mu) * (l - mu);
    }
    -n * ((2.0 * std::f64::consts::PI).sqrt() * sigma).ln() - sum_log - sum_sq / (2.0 * sigma * sigma)
}

/// Partial derivatives of the log-likelihood with respect to
/// `(mu, sigma, gamma)`.
pub fn score(xs: &[f64], gamma: f64, mu: f64, sigma: f64) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let s2 = sigma * sigma;
    let mut d_mu = 0.0;
    let mut sq = 0.0;
    let mut d_gamma = 0.0;
    for &x in xs {
        let d = x - gamma;
        let r = d.ln() - mu;
        d_mu += r;
        sq += r * r;
        d_gamma += 1.0 / d + r / (d * s2);
    }
    (d_mu / s2, -n / sigma + sq / (s2 * sigma), d_gamma)
}

fn profile_ll(xs: &[f64], gamma: f64) -> (f64, f64, f64) {
    let (mu, sigma) = conditional_mu_sigma(xs, gamma);
    (log_likelihood(xs, gamma, mu, sigma), mu, sigma)
}

fn bisect(xs: &[f64], mut lo: f64, mut hi: f64, mut g_lo: f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= BISECT_RTOL * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let g_mid = gamma_equation(xs, mid);
        if g_mid == 0.0 {
            return mid;
        }
        if (g_mid < 0.0) == (g_lo < 0.0) {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maximum-likelihood fit of a three-parameter lognormal.
///
/// The location equation is scanned on a 256-point grid over
/// `[0, min(x)(1 - 1e-6)]`. Every bracket where the equation crosses from
/// negative to positive (a local maximum of the profile likelihood) is
/// refined by bisection, and the root with the highest likelihood wins. If
/// there is no such root, or the best one is less likely than `gamma = 0`,
/// the two-parameter fit is returned instead.
pub fn fit_lognormal3(samples: &[f64]) -> Result<LognormalFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(EstimateError::TooFewSamples {
            need: MIN_FIT_SAMPLES,
            have: samples.len(),
        });
    }
    for &x in samples {
        check_positive(x)?;
    }
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(EstimateError::Degenerate);
    }

    let upper = min * (1.0 - UPPER_SHRINK);
    let step = upper / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|i| if i + 1 == GRID_POINTS { upper } else { i as f64 * step })
        .collect();
    let values: Vec<f64> = grid.iter().map(|&g| gamma_equation(samples, g)).collect();

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for i in 0..GRID_POINTS - 1 {
        let (g0, g1) = (values[i], values[i + 1]);
        if !(g0 < 0.0 && g1 >= 0.0) {
            continue;
        }
        let root = if g1 == 0.0 {
            grid[i + 1]
        } else {
            bisect(samples, grid[i], grid[i + 1], g0)
        };
        let (ll, mu, sigma) = profile_ll(samples, root);
        if sigma > 0.0 && best.is_none_or(|b| ll > b.0) {
            best = Some((ll, root, mu, sigma));
        }
    }

    let (ll0, mu0, sigma0) = profile_ll(samples, 0.0);
    match best {
        Some((ll, gamma, mu, sigma)) if ll >= ll0 => Ok(LognormalFit {
            gamma,
            mu,
            sigma,
            root_found: true,
        }),
        _ => Ok(LognormalFit {
            gamma: 0.0,
            mu: mu0,
            sigma: sigma0,
            root_found: false,
        }),
    }
}

/// Blend of the distribution mean and median: `w * E(X) + (1 - w) * Median(X)`.
pub fn predict(fit: &LognormalFit, blend_weight: f64) -> f64 {
    let mean = fit.gamma + (fit.mu + fit.sigma * fit.sigma / 2.0).exp();
    let median = fit.gamma + fit.mu.exp();
    blend_weight * mean + (1.0 - blend_weight) * median
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub window_capacity: usize,
    pub blend_weight: f64,
    /// Completed inferences between lognormal re-fits; 0 disables re-fits.
    pub refit_interval: usize,
    pub initial_t: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            window_capacity: 100,
            blend_weight: 0.5,
            refit_interval: 50,
            initial_t: 0.1,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_capacity < MIN_FIT_SAMPLES {
            return Err(EstimateError::Config(format!(
                "window_capacity {} < {MIN_FIT_SAMPLES}",
                self.window_capacity
            )));
        }
        if !(0.0..=1.0).contains(&self.blend_weight) {
            return Err(EstimateError::Config(format!(
                "blend_weight {} outside [0, 1]",
                self.blend_weight
            )));
        }
        if !(self.initial_t > 0.0 && self.initial_t.is_finite()) {
            return Err(EstimateError::Config(format!(
                "initial_t {} must be positive",
                self.initial_t
            )));
        }
        Ok(())
    }
}

/// Per-device estimator state: the running estimate plus the sample window.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyEstimator {
    cfg: EstimatorConfig,
    estimate: f64,
    window: LatencyWindow,
    since_refit: usize,
    last_fit: Option<LognormalFit>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub estimate: f64,
    /// Set when this observation triggered a successful re-fit.
    pub refit: Option<LognormalFit>,
}

impl LatencyEstimator {
    pub fn new(cfg: EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(LatencyEstimator {
            estimate: cfg.initial_t,
            window: LatencyWindow::new(cfg.window_capacity),
            since_refit: 0,
            last_fit: None,
            cfg,
        })
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    pub fn last_fit(&self) -> Option<&LognormalFit> {
        self.last_fit.as_ref()
    }

    pub fn window(&self) -> &LatencyWindow {
        &self.window
    }

    pub fn observe(&mut self, latency: f64) -> Result<Observation> {
        self.estimate = update_fast(self.estimate, latency)?;
        self.window.push(latency)?;
        self.since_refit += 1;
        let mut refit = None;
        if self.cfg.refit_interval > 0 && self.since_refit >= self.cfg.refit_interval {
            self.since_refit = 0;
            // an unfit window keeps the previous estimate
            if let Ok(fit) = fit_lognormal3(&self.window.to_vec()) {
                let target = predict(&fit, self.cfg.blend_weight);
                if target > 0.0 && target.is_finite() {
                    self.estimate = update_fast(self.estimate, target)?;
                }
                self.last_fit = Some(fit);
                refit = Some(fit);
            }
        }
        Ok(Observation {
            estimate: self.estimate,
            refit,
        })
    }
}
