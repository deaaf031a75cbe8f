//! Marginal cost per channel mechanism and marginal-cost alignment.
//!
//! With `V(eta)` and `C(eta)` the value and cost a channel buys at
//! multiplier `eta`, its marginal cost is `C'(eta) / V'(eta)`. Second-price
//! channels and shaded first-price channels both have `MC = eta`; a uniform
//! first-price channel pays its own bid, so `MC = eta + V / V'`. Fitting
//! `V = a eta^b` near the operating point gives `MC = eta (1 + 1/b)`, and
//! running that channel at `eta / (1 + 1/b)` equalizes all three.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponents below this are floored (with a warning) before alignment.
pub const MIN_EXPONENT: f64 = 1e-3;
/// Number of recent `(eta3, value)` observations used for the power-law fit.
pub const DEFAULT_FIT_WINDOW: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McaError {
    #[error("multiplier must be finite and positive, got {0}")]
    InvalidEta(f64),
    #[error("power-law fit needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("power-law points need positive eta and value, got ({eta}, {value})")]
    NonPositivePoint { eta: f64, value: f64 },
    #[error("power-law points need distinct etas")]
    IdenticalEtas,
    #[error("fitted exponent {0} is not positive: value does not grow with eta")]
    DegenerateExponent(f64),
    #[error("invalid power-law fit (a={a}, b={b})")]
    InvalidFit { a: f64, b: f64 },
}

pub type Result<T> = std::result::Result<T, McaError>;

fn check_eta(eta: f64) -> Result<f64> {
    if eta > 0.0 && eta.is_finite() {
        Ok(eta)
    } else {
        Err(McaError::InvalidEta(eta))
    }
}

/// `V(eta) = a eta^b`, fitted over `fit_window`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub fit_window: (f64, f64),
    /// RMS residual in log space.
    pub residual: f64,
}

impl PowerLawFit {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(McaError::InvalidFit { a, b });
        }
        Ok(Self {
            a,
            b,
            fit_window: (0.0, f64::INFINITY),
            residual: 0.0,
        })
    }

    pub fn value_at(&self, eta: f64) -> f64 {
        self.a * eta.powf(self.b)
    }

    fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite() {
            Ok(())
        } else {
            Err(McaError::InvalidFit {
                a: self.a,
                b: self.b,
            })
        }
    }
}

/// Least squares on `(ln eta, ln V)`.
///
/// A nonpositive slope is an error. A positive slope below
/// [`MIN_EXPONENT`] is floored with a warning, since alignment divides by it.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 2 {
        return Err(McaError::TooFewPoints(points.len()));
    }
    for &(eta, value) in points {
        if !(eta > 0.0 && value > 0.0 && eta.is_finite() && value.is_finite()) {
            return Err(McaError::NonPositivePoint { eta, value });
        }
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 {
        return Err(McaError::IdenticalEtas);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let mut b = sxy / sxx;
    let ln_a = my - b * mx;
    if b.abs() < 1e-12 || b < 0.0 {
        return Err(McaError::DegenerateExponent(b));
    }
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - ln_a - b * x).powi(2))
        .sum();
    if b < MIN_EXPONENT {
        log::warn!("power-law exponent {b:e} floored at {MIN_EXPONENT:e}");
        b = MIN_EXPONENT;
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(0.0, f64::max);
    Ok(PowerLawFit {
        a: ln_a.exp(),
        b,
        fit_window: (lo, hi),
        residual: (rss / n).sqrt(),
    })
}

/// Second-price marginal cost: the multiplier itself.
pub fn mc_spa(eta: f64) -> Result<f64> {
    check_eta(eta)
}

/// Uniform first-price marginal cost `eta + V / V' = eta (1 + 1/b)`.
pub fn mc_fpa_uniform(eta: f64, fit: &PowerLawFit) -> Result<f64> {
    check_eta(eta)?;
    fit.validate()?;
    Ok(eta * (1.0 + 1.0 / fit.b))
}

/// Shaded first-price marginal cost: the multiplier itself, because the
/// optimal shaded bid satisfies `C'(eta) = eta V'(eta)`.
pub fn mc_fpa_shaded(eta: f64) -> Result<f64> {
    check_eta(eta)
}

/// Uniform first-price multiplier whose marginal cost equals `eta`.
pub fn align_eta3(eta: f64, fit: &PowerLawFit) -> Result<f64> {
    check_eta(eta)?;
    fit.validate()?;
    Ok(eta / (1.0 + 1.0 / fit.b))
}

/// Multipliers in force for one control period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelEtas {
    /// Shared by second-price and shaded first-price channels.
    pub eta: f64,
    /// Uniform first-price channels.
    pub eta3: f64,
}

impl ChannelEtas {
    /// Both channels at the same multiplier (no alignment).
    pub fn uniform(eta: f64) -> Result<Self> {
        check_eta(eta)?;
        Ok(Self { eta, eta3: eta })
    }

    pub fn aligned(eta: f64, fit: &PowerLawFit) -> Result<Self> {
        Ok(Self {
            eta,
            eta3: align_eta3(eta, fit)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMethod {
    Analytic,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalCostEstimate {
    pub channel: String,
    pub mc: f64,
    pub method: McMethod,
    /// The eta perturbation for finite differences.
    pub delta: Option<f64>,
}

/// Rolling `(eta3, realized value)` history of a uniform first-price
/// channel, refitted each period to realign `eta3`.
#[derive(Debug, Clone, PartialEq)]
pub struct Eta3Aligner {
    window: usize,
    history: VecDeque<(f64, f64)>,
}

impl Default for Eta3Aligner {
    fn default() -> Self {
        Self::new(DEFAULT_FIT_WINDOW)
    }
}

impl Eta3Aligner {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(2),
            history: VecDeque::new(),
        }
    }

    pub fn observe(&mut self, eta3: f64, value: f64) {
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back((eta3, value));
    }

    pub fn history(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.history.iter()
    }

    /// Fit over the window, or `None` while it cannot be fitted (too few or
    /// identical etas, zero values, flat curve).
    pub fn fit(&self) -> Option<PowerLawFit> {
        let points: Vec<(f64, f64)> = self.history.iter().copied().collect();
        fit_power_law(&points).ok()
    }

    /// `eta3` aligned to `eta` under the current fit, falling back to
    /// `fallback` when no fit is available.
    pub fn align(&self, eta: f64, fallback: f64) -> f64 {
        self.fit()
            .and_then(|fit| align_eta3(eta, &fit).ok())
            .unwrap_or(fallback)
    }
}
