//! Winning-price landscapes.
//!
//! The winning price `w` of an impression is the minimum bid that wins it.
//! Organic traffic shows up as an atom at `w = 0`, which the zero-inflated
//! exponential (ZIE) family models directly: with probability `pi` the
//! impression is free, otherwise `w ~ Exponential(lambda)`.
//!
//! Besides the ZIE family this module carries the atom-free baselines
//! (exponential, log-normal, gamma), a linear per-impression parameter model
//! trained on the negative log-likelihood, and the BCE goodness-of-fit metric.

mod baseline;
mod metrics;
mod model;

pub use baseline::{fit_baseline, trigamma, BaselineFitConfig, DistKind, WinModel};
pub use metrics::{bce_bid_grid, eval_bce, eval_bce_with, BCE_GRID_POINTS, BCE_PROB_CLAMP};
pub use model::{LinearParamModel, TrainConfig, TrainReport, TrainingSample};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor and ceiling applied to every estimated zero-inflation mass so the
/// NLL stays finite on both branches.
pub const PI_CLAMP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandscapeError {
    #[error("invalid ZIE parameters: pi={pi}, lambda={lambda} (need 0 <= pi < 1, lambda > 0)")]
    InvalidParams { pi: f64, lambda: f64 },
    #[error("invalid {kind} parameters: {detail}")]
    InvalidModel { kind: DistKind, detail: String },
    #[error("price must be nonnegative, got {0}")]
    NegativePrice(f64),
    #[error("sample is empty")]
    EmptySample,
    #[error("sample has no positive prices; the exponential rate is undefined")]
    DegeneratePositivePart,
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("feature dimension mismatch: model expects {expected}, sample has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}: loss={loss} (learning rate {learning_rate} too high?)")]
    Diverged {
        epoch: usize,
        loss: f64,
        learning_rate: f64,
    },
    #[error("bid grid is empty")]
    EmptyGrid,
    #[error("malformed model file: {0}")]
    ModelFormat(String),
}

pub type Result<T> = std::result::Result<T, LandscapeError>;

/// Zero-inflated exponential landscape `F(x) = pi + (1 - pi)(1 - exp(-lambda x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawZie", into = "RawZie")]
pub struct ZieParams {
    pi: f64,
    lambda: f64,
}

#[derive(Serialize, Deserialize)]
struct RawZie {
    pi: f64,
    lambda: f64,
}

impl TryFrom<RawZie> for ZieParams {
    type Error = LandscapeError;
    fn try_from(raw: RawZie) -> Result<Self> {
        ZieParams::new(raw.pi, raw.lambda)
    }
}

impl From<ZieParams> for RawZie {
    fn from(p: ZieParams) -> Self {
        RawZie {
            pi: p.pi,
            lambda: p.lambda,
        }
    }
}

impl ZieParams {
    pub fn new(pi: f64, lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&pi) || !(lambda > 0.0) || !lambda.is_finite() {
            return Err(LandscapeError::InvalidParams { pi, lambda });
        }
        Ok(Self { pi, lambda })
    }

    /// Zero-inflation mass: the probability the impression is won at bid 0.
    pub fn pi(&self) -> f64 {
        self.pi
    }

    /// Exponential rate of the paid part, in 1/currency.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        if x < 0.0 || x.is_nan() {
            return Err(LandscapeError::NegativePrice(x));
        }
        Ok(self.win_prob(x))
    }

    /// `cdf` without the domain check. Callers guarantee `x >= 0`.
    #[inline]
    pub fn win_prob(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        1.0 - (1.0 - self.pi) * (-self.lambda * x).exp()
    }

    /// Density of the continuous part, `lambda (1 - pi) exp(-lambda x)` for `x > 0`.
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.lambda * (1.0 - self.pi) * (-self.lambda * x).exp()
    }

    /// `E[w; w <= b]`, the expected second-price payment of a bid `b`.
    pub fn partial_expectation(&self, b: f64) -> f64 {
        if b <= 0.0 {
            return 0.0;
        }
        let inv = 1.0 / self.lambda;
        (1.0 - self.pi) * (inv - (-self.lambda * b).exp() * (b + inv))
    }

    /// Per-sample negative log-likelihood.
    ///
    /// `pi = 0` with `w = 0` yields `+inf`: the sample is impossible under the
    /// model.
    pub fn nll(&self, w: f64) -> Result<f64> {
        if w < 0.0 || w.is_nan() {
            return Err(LandscapeError::NegativePrice(w));
        }
        Ok(if w == 0.0 {
            -self.pi.ln()
        } else {
            -(1.0 - self.pi).ln() - self.lambda.ln() + self.lambda * w
        })
    }

    pub fn mean(&self) -> f64 {
        (1.0 - self.pi) / self.lambda
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.random::<f64>() < self.pi {
            0.0
        } else {
            // 1 - U lies in (0, 1], so the log is finite.
            -(1.0 - rng.random::<f64>()).ln() / self.lambda
        }
    }
}

/// Closed-form maximum-likelihood estimate over a batch of winning prices.
///
/// `pi` is the zero fraction clamped to `[PI_CLAMP, 1 - PI_CLAMP]`, and
/// `lambda` is the reciprocal mean of the positive prices.
pub fn zie_mle_batch(samples: &[f64]) -> Result<ZieParams> {
    if samples.is_empty() {
        return Err(LandscapeError::EmptySample);
    }
    let mut zeros = 0usize;
    let mut positive_sum = 0.0;
    for &w in samples {
        if w < 0.0 || w.is_nan() {
            return Err(LandscapeError::NegativePrice(w));
        }
        if w == 0.0 {
            zeros += 1;
        } else {
            positive_sum += w;
        }
    }
    let positives = samples.len() - zeros;
    if positives == 0 {
        return Err(LandscapeError::DegeneratePositivePart);
    }
    let pi = (zeros as f64 / samples.len() as f64).clamp(PI_CLAMP, 1.0 - PI_CLAMP);
    let lambda = positives as f64 / positive_sum;
    ZieParams::new(pi, lambda)
}

/// Mean ZIE NLL over a batch.
pub fn mean_zie_nll(params: &ZieParams, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(LandscapeError::EmptySample);
    }
    let mut total = 0.0;
    for &w in samples {
        total += params.nll(w)?;
    }
    Ok(total / samples.len() as f64)
}
