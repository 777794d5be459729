//! Oscillation screening: Anderson-Darling normality test, Ljung-Box
//! autocorrelation test, and the either-rejects gate built from them.

use libm::erfc;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Significance level used by the data-generation gate.
pub const GATE_ALPHA: f64 = 1e-4;
/// Upper bound on the Ljung-Box lag count.
pub const DEFAULT_MAX_LAGS: usize = 20;

const MIN_AD_SAMPLES: usize = 8;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

impl TestResult {
    fn new(statistic: f64, p_value: f64, alpha: f64) -> Self {
        let p_value = p_value.clamp(0.0, 1.0);
        Self {
            statistic,
            p_value,
            reject: p_value < alpha,
        }
    }
}

fn mean_and_ss(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, ss)
}

fn check_finite(samples: &[f64]) -> Result<()> {
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("non-finite sample".into()));
    }
    Ok(())
}

/// `ln Phi(z)` and `ln(1 - Phi(z))` without cancellation in the tails.
fn log_normal_cdf_pair(z: f64) -> (f64, f64) {
    let lower = 0.5 * erfc(-z / SQRT_2);
    let upper = 0.5 * erfc(z / SQRT_2);
    (lower.ln(), upper.ln())
}

/// Upper-tail p-value of the small-sample corrected statistic `A2*`
/// (D'Agostino & Stephens piecewise exponential approximation).
pub fn anderson_darling_p_value(a2_star: f64) -> f64 {
    let a = a2_star;
    let p = if a >= 0.6 {
        // The quadratic term turns the exponent around near a = 153.5; the
        // tail is already ~1e-190 there.
        let a = a.min(153.0);
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    p.clamp(0.0, 1.0)
}

/// Raw `A2` against a normal with estimated mean and variance.
pub fn anderson_darling_statistic(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < MIN_AD_SAMPLES {
        return Err(Error::SampleSize {
            need: MIN_AD_SAMPLES,
            got: n,
        });
    }
    check_finite(samples)?;
    let (mean, ss) = mean_and_ss(samples);
    let sd = (ss / (n - 1) as f64).sqrt();
    if !(sd > 0.0) || sd <= 1e-12 * mean.abs() {
        return Err(Error::DegenerateSample("zero sample variance".into()));
    }
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let logs: Vec<(f64, f64)> = z.iter().map(|&v| log_normal_cdf_pair(v)).collect();
    let nf = n as f64;
    let s: f64 = (0..n)
        .map(|i| (2 * i + 1) as f64 * (logs[i].0 + logs[n - 1 - i].1))
        .sum();
    Ok(-nf - s / nf)
}

/// Anderson-Darling normality test with estimated parameters.
pub fn anderson_darling(samples: &[f64], alpha: f64) -> Result<TestResult> {
    let a2 = anderson_darling_statistic(samples)?;
    let n = samples.len() as f64;
    let a2_star = a2 * (1.0 + 0.75 / n + 2.25 / (n * n));
    Ok(TestResult::new(a2_star, anderson_darling_p_value(a2_star), alpha))
}

/// Sample autocorrelations `rho_1..=rho_lags`.
pub fn autocorrelations(samples: &[f64], lags: usize) -> Result<Vec<f64>> {
    check_finite(samples)?;
    let (mean, ss) = mean_and_ss(samples);
    if !(ss > 0.0) || ss.sqrt() <= 1e-12 * mean.abs() * (samples.len() as f64).sqrt() {
        return Err(Error::DegenerateSample("zero sample variance".into()));
    }
    let c: Vec<f64> = samples.iter().map(|x| x - mean).collect();
    Ok((1..=lags)
        .map(|k| c[k..].iter().zip(&c[..c.len() - k]).map(|(a, b)| a * b).sum::<f64>() / ss)
        .collect())
}

/// Ljung-Box portmanteau test over `lags` autocorrelations.
pub fn ljung_box(samples: &[f64], lags: usize, alpha: f64) -> Result<TestResult> {
    let n = samples.len();
    if lags == 0 || n <= lags {
        return Err(Error::SampleSize { need: lags + 1, got: n });
    }
    let rho = autocorrelations(samples, lags)?;
    let nf = n as f64;
    let q = nf * (nf + 2.0)
        * rho
            .iter()
            .enumerate()
            .map(|(i, r)| r * r / (nf - (i + 1) as f64))
            .sum::<f64>();
    Ok(TestResult::new(q, chi2_survival(q, lags as f64), alpha))
}

/// Default Ljung-Box lag count `min(max_lags, floor(n / 10))`, at least 1.
pub fn default_lags(n: usize, max_lags: usize) -> usize {
    max_lags.min(n / 10).max(1)
}

/// Survival function of the chi-squared distribution, `Q(k/2, x/2)`.
pub fn chi2_survival(x: f64, k: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x.is_infinite() {
        return 0.0;
    }
    statrs::function::gamma::gamma_ur(0.5 * k, 0.5 * x)
}

/// Configuration of the oscillation gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub alpha: f64,
    pub max_lags: usize,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            alpha: GATE_ALPHA,
            max_lags: DEFAULT_MAX_LAGS,
        }
    }
}

/// True when either test rejects its null. Degenerate (flat) input is
/// reported as non-oscillatory.
pub fn detect_oscillation(samples: &[f64], cfg: &GateConfig) -> bool {
    let lags = default_lags(samples.len(), cfg.max_lags);
    let ad = anderson_darling(samples, cfg.alpha);
    let lb = ljung_box(samples, lags, cfg.alpha);
    match (ad, lb) {
        (Ok(a), Ok(l)) => a.reject || l.reject,
        (Err(e), _) | (_, Err(e)) => {
            warn!("oscillation gate: treating segment as non-oscillatory ({e})");
            false
        }
    }
}
