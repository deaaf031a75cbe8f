use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, gamma_lr, ln_gamma};

use super::{zie_mle_batch, LandscapeError, Result, ZieParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum DistKind {
    Zie,
    #[serde(rename = "exp")]
    Exponential,
    #[serde(rename = "lognormal")]
    LogNormal,
    Gamma,
}

impl DistKind {
    pub const ALL: [DistKind; 4] = [
        DistKind::Exponential,
        DistKind::LogNormal,
        DistKind::Gamma,
        DistKind::Zie,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistKind::Zie => "zie",
            DistKind::Exponential => "exp",
            DistKind::LogNormal => "lognormal",
            DistKind::Gamma => "gamma",
        }
    }

    /// Single-letter suffix used in strategy names (`UE&NUB-Z`).
    pub fn letter(self) -> char {
        match self {
            DistKind::Zie => 'Z',
            DistKind::Exponential => 'E',
            DistKind::LogNormal => 'L',
            DistKind::Gamma => 'G',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.letter() == c)
    }
}

impl fmt::Display for DistKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "zie" | "z" => Ok(DistKind::Zie),
            "exp" | "exponential" | "e" => Ok(DistKind::Exponential),
            "lognormal" | "log-normal" | "l" => Ok(DistKind::LogNormal),
            "gamma" | "g" => Ok(DistKind::Gamma),
            other => Err(format!(
                "unknown distribution `{other}` (expected zie|exp|lognormal|gamma)"
            )),
        }
    }
}

/// A winning-price distribution: ZIE or one of the atom-free baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WinModel {
    Zie(ZieParams),
    #[serde(rename = "exp")]
    Exponential { rate: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { mu: f64, sigma: f64 },
    Gamma { shape: f64, rate: f64 },
}

impl WinModel {
    pub fn exponential(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid(DistKind::Exponential, format!("rate={rate}")));
        }
        Ok(WinModel::Exponential { rate })
    }

    pub fn log_normal(mu: f64, sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(DistKind::LogNormal, format!("mu={mu}, sigma={sigma}")));
        }
        Ok(WinModel::LogNormal { mu, sigma })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
            return Err(invalid(DistKind::Gamma, format!("shape={shape}, rate={rate}")));
        }
        Ok(WinModel::Gamma { shape, rate })
    }

    pub fn kind(&self) -> DistKind {
        match self {
            WinModel::Zie(_) => DistKind::Zie,
            WinModel::Exponential { .. } => DistKind::Exponential,
            WinModel::LogNormal { .. } => DistKind::LogNormal,
            WinModel::Gamma { .. } => DistKind::Gamma,
        }
    }

    /// `P(w <= x)`; zero for negative `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        match *self {
            WinModel::Zie(p) => p.win_prob(x),
            WinModel::Exponential { rate } => -(-rate * x).exp_m1(),
            WinModel::LogNormal { mu, sigma } => {
                if x == 0.0 {
                    0.0
                } else {
                    0.5 * erfc(-(x.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
                }
            }
            WinModel::Gamma { shape, rate } => {
                if x == 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, rate * x)
                }
            }
        }
    }

    /// Negative log-likelihood of one observed price. Atom-free kinds see a
    /// zero price as `zero_eps`.
    pub fn nll(&self, w: f64, zero_eps: f64) -> f64 {
        match *self {
            WinModel::Zie(p) => p.nll(w).unwrap_or(f64::INFINITY),
            WinModel::Exponential { rate } => {
                let w = w.max(zero_eps);
                -rate.ln() + rate * w
            }
            WinModel::LogNormal { mu, sigma } => {
                let y = w.max(zero_eps).ln();
                let z = (y - mu) / sigma;
                y + sigma.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * z * z
            }
            WinModel::Gamma { shape, rate } => {
                let w = w.max(zero_eps);
                -shape * rate.ln() + ln_gamma(shape) - (shape - 1.0) * w.ln() + rate * w
            }
        }
    }
}

fn invalid(kind: DistKind, detail: String) -> LandscapeError {
    LandscapeError::InvalidModel { kind, detail }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineFitConfig {
    /// Price substituted for exact zeros before fitting atom-free kinds.
    pub zero_eps: f64,
    pub sigma_floor: f64,
    pub gamma_tol: f64,
    pub gamma_max_iter: usize,
}

impl Default for BaselineFitConfig {
    fn default() -> Self {
        Self {
            zero_eps: 1e-6,
            sigma_floor: 1e-6,
            gamma_tol: 1e-9,
            gamma_max_iter: 100,
        }
    }
}

/// Batch maximum-likelihood fit of one distribution kind.
pub fn fit_baseline(kind: DistKind, samples: &[f64], cfg: &BaselineFitConfig) -> Result<WinModel> {
    if kind == DistKind::Zie {
        return zie_mle_batch(samples).map(WinModel::Zie);
    }
    if samples.is_empty() {
        return Err(LandscapeError::EmptySample);
    }
    if let Some(&w) = samples.iter().find(|w| **w < 0.0 || w.is_nan()) {
        return Err(LandscapeError::NegativePrice(w));
    }
    if !samples.iter().any(|&w| w > 0.0) {
        return Err(LandscapeError::DegeneratePositivePart);
    }
    let n = samples.len() as f64;
    let prices = samples.iter().map(|&w| w.max(cfg.zero_eps));
    match kind {
        DistKind::Exponential => {
            let mean = prices.sum::<f64>() / n;
            WinModel::exponential(1.0 / mean)
        }
        DistKind::LogNormal => {
            let logs: Vec<f64> = prices.map(f64::ln).collect();
            let mu = logs.iter().sum::<f64>() / n;
            let var = logs.iter().map(|y| (y - mu).powi(2)).sum::<f64>() / n;
            WinModel::log_normal(mu, var.sqrt().max(cfg.sigma_floor))
        }
        DistKind::Gamma => {
            let (sum, log_sum) = prices.fold((0.0, 0.0), |(s, l), w| (s + w, l + w.ln()));
            let mean = sum / n;
            let s = mean.ln() - log_sum / n;
            let shape = gamma_shape_mle(s, cfg)?;
            WinModel::gamma(shape, shape / mean)
        }
        DistKind::Zie => unreachable!(),
    }
}

/// Solves `ln k - digamma(k) = s` by Newton's method from Minka's
/// closed-form starting point.
fn gamma_shape_mle(s: f64, cfg: &BaselineFitConfig) -> Result<f64> {
    if !(s > 1e-14) || !s.is_finite() {
        return Err(invalid(
            DistKind::Gamma,
            format!("zero dispersion in sample (log-mean gap {s})"),
        ));
    }
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    for _ in 0..cfg.gamma_max_iter {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        if next <= 0.0 {
            next = k / 2.0;
        }
        let done = (next - k).abs() <= cfg.gamma_tol * k;
        k = next;
        if done {
            return Ok(k);
        }
    }
    log::warn!("gamma shape Newton did not reach tolerance; using k={k}");
    Ok(k)
}

/// Second derivative of `ln Gamma`, via upward recurrence and the asymptotic
/// series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    acc + inv
        + inv2 / 2.0
        + inv * inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 / 30.0)))
}
