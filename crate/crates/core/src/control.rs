//! Steering the multiplier `eta` toward campaign constraints.
//!
//! Streaming runs use a multiplicative PID step once per control period;
//! offline replays use [`bisect_eta`] to find the constraint-matched
//! multiplier directly.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shading::ONLINE_N_ITER;

pub const MAX_BISECTION_ITERS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("invalid campaign: {0}")]
    InvalidCampaign(String),
    #[error("invalid control config: {0}")]
    InvalidConfig(String),
    #[error(
        "target {target} not bracketed: eta {lo} -> {at_lo}, eta {hi} -> {at_hi}"
    )]
    Bracket {
        target: f64,
        lo: f64,
        hi: f64,
        at_lo: f64,
        at_hi: f64,
    },
    #[error("ROI band [{lo_band}, {hi_band}] unreachable: ROI spans [{roi_min}, {roi_max}] over the bracket")]
    InfeasibleRoi {
        lo_band: f64,
        hi_band: f64,
        roi_min: f64,
        roi_max: f64,
    },
    #[error("replay response is not monotone in eta near {eta}")]
    NonMonotone { eta: f64 },
    #[error("bisection stopped after {iterations} iterations at eta {eta} (measured {measured}, target {target})")]
    NoConvergence {
        eta: f64,
        measured: f64,
        target: f64,
        iterations: usize,
    },
    #[error("trace output: {0}")]
    Trace(String),
}

pub type Result<T> = std::result::Result<T, ControlError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "objective", rename_all = "snake_case")]
pub enum Objective {
    MaxReturn,
    TargetRoas { target_roi: f64, epsilon: f64 },
    TargetCpc { target_cpc: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub budget: f64,
    #[serde(flatten)]
    pub objective: Objective,
}

impl Campaign {
    pub fn max_return(budget: f64) -> Result<Self> {
        Self::new(budget, Objective::MaxReturn)
    }

    pub fn target_roas(budget: f64, target_roi: f64, epsilon: f64) -> Result<Self> {
        Self::new(
            budget,
            Objective::TargetRoas {
                target_roi,
                epsilon,
            },
        )
    }

    pub fn target_cpc(budget: f64, target_cpc: f64) -> Result<Self> {
        Self::new(budget, Objective::TargetCpc { target_cpc })
    }

    pub fn new(budget: f64, objective: Objective) -> Result<Self> {
        let c = Self { budget, objective };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return Err(ControlError::InvalidCampaign(format!(
                "budget must be positive, got {}",
                self.budget
            )));
        }
        match self.objective {
            Objective::MaxReturn => Ok(()),
            Objective::TargetRoas {
                target_roi,
                epsilon,
            } => {
                if !(target_roi > 0.0 && target_roi.is_finite()) || !(epsilon >= 0.0) {
                    Err(ControlError::InvalidCampaign(format!(
                        "target_roi {target_roi} and epsilon {epsilon} must be positive and nonnegative"
                    )))
                } else {
                    Ok(())
                }
            }
            Objective::TargetCpc { target_cpc } => {
                if target_cpc > 0.0 && target_cpc.is_finite() {
                    Ok(())
                } else {
                    Err(ControlError::InvalidCampaign(format!(
                        "target_cpc must be positive, got {target_cpc}"
                    )))
                }
            }
        }
    }

    /// ROI band half-width; unbounded unless the objective is TargetROAS.
    pub fn epsilon(&self) -> f64 {
        match self.objective {
            Objective::TargetRoas { epsilon, .. } => epsilon,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    /// Control periods per day, `M`.
    pub periods: usize,
    pub period_duration: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub eta_min: f64,
    pub eta_max: f64,
    /// Golden-section iterations for bids placed inside the loop.
    pub n_iter: usize,
    /// Anti-windup bound on the error integral.
    pub integral_limit: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            periods: 24,
            period_duration: 1.0,
            kp: 0.4,
            ki: 0.1,
            kd: 0.05,
            eta_min: 1e-3,
            eta_max: 1e3,
            n_iter: ONLINE_N_ITER,
            integral_limit: 5.0,
        }
    }
}

impl ControlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ControlError::InvalidConfig(msg));
        if self.periods == 0 {
            return bad("periods must be at least 1".into());
        }
        if !(self.eta_min > 0.0 && self.eta_min < self.eta_max && self.eta_max.is_finite()) {
            return bad(format!(
                "need 0 < eta_min < eta_max, got [{}, {}]",
                self.eta_min, self.eta_max
            ));
        }
        if ![self.kp, self.ki, self.kd, self.integral_limit, self.period_duration]
            .iter()
            .all(|g| g.is_finite())
        {
            return bad("gains must be finite".into());
        }
        if self.n_iter == 0 {
            return bad("n_iter must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub eta: f64,
    /// Completed periods.
    pub period_index: usize,
    pub spend_so_far: f64,
    pub value_so_far: f64,
    pub error_integral: f64,
    pub last_error: f64,
}

impl ControlState {
    pub fn new(eta: f64, config: &ControlConfig) -> Self {
        Self {
            eta: eta.clamp(config.eta_min, config.eta_max),
            period_index: 0,
            spend_so_far: 0.0,
            value_so_far: 0.0,
            error_integral: 0.0,
            last_error: 0.0,
        }
    }
}

/// Normalized control error after the state has absorbed the latest period.
/// Positive means "bid more".
///
/// MaxReturn compares the spend needed per remaining period with the spend
/// of the period just observed, in units of the even per-period budget.
/// TargetROAS and TargetCPC use the relative gap of the cumulative ratio.
fn control_error(state: &ControlState, period_spend: f64, campaign: &Campaign, config: &ControlConfig) -> f64 {
    match campaign.objective {
        Objective::MaxReturn => {
            let per_period = campaign.budget / config.periods as f64;
            let remaining_periods = config.periods.saturating_sub(state.period_index);
            if remaining_periods == 0 {
                return 0.0;
            }
            let required = (campaign.budget - state.spend_so_far) / remaining_periods as f64;
            (required - period_spend) / per_period
        }
        Objective::TargetRoas { target_roi, .. } => {
            if state.spend_so_far <= 0.0 {
                return 0.0;
            }
            let roi = state.value_so_far / state.spend_so_far;
            (roi - target_roi) / target_roi
        }
        Objective::TargetCpc { target_cpc } => {
            if state.value_so_far <= 0.0 {
                return 0.0;
            }
            let cpc = state.spend_so_far / state.value_so_far;
            (target_cpc - cpc) / target_cpc
        }
    }
}

/// One period of multiplicative PID control:
/// `eta <- clamp(eta * exp(kp e + ki sum(e) + kd (e - e_prev)))`.
pub fn pid_step(
    state: &ControlState,
    observed: (f64, f64),
    campaign: &Campaign,
    config: &ControlConfig,
) -> ControlState {
    let (spend, value) = observed;
    let mut next = *state;
    next.period_index += 1;
    next.spend_so_far += spend.max(0.0);
    next.value_so_far += value.max(0.0);
    let e = control_error(&next, spend, campaign, config);
    next.error_integral = (state.error_integral + e).clamp(-config.integral_limit, config.integral_limit);
    let u = config.kp * e + config.ki * next.error_integral + config.kd * (e - state.last_error);
    let raw = state.eta * u.exp();
    next.eta = raw.clamp(config.eta_min, config.eta_max);
    if next.eta != raw {
        log::debug!("eta {raw:e} clamped to {:e} in period {}", next.eta, next.period_index);
    }
    next.last_error = e;
    next
}

/// One row of the controller trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub period: usize,
    pub eta: f64,
    pub eta3: f64,
    pub spend: f64,
    pub value: f64,
    pub roi: f64,
    pub error: f64,
}

pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| ControlError::Trace(e.to_string()))?;
    }
    w.flush().map_err(|e| ControlError::Trace(e.to_string()))
}

/// What [`bisect_eta`] matches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BisectTarget {
    /// Total cost, matched to relative tolerance.
    Cost { target: f64 },
    /// ROI, matched to absolute tolerance. The result must also land in the
    /// `+-epsilon` band.
    Roi { target: f64, epsilon: f64 },
    /// Cost per unit value, matched to relative tolerance.
    Cpc { target: f64 },
}

impl BisectTarget {
    /// Bisection target implied by a campaign.
    pub fn for_campaign(campaign: &Campaign) -> Self {
        match campaign.objective {
            Objective::MaxReturn => Self::Cost {
                target: campaign.budget,
            },
            Objective::TargetRoas {
                target_roi,
                epsilon,
            } => Self::Roi {
                target: target_roi,
                epsilon,
            },
            Objective::TargetCpc { target_cpc } => Self::Cpc { target: target_cpc },
        }
    }

    /// The matched quantity at `(value, cost)`, oriented to increase with eta.
    fn measure(&self, value: f64, cost: f64) -> f64 {
        match self {
            Self::Cost { .. } => cost,
            // ROI falls as eta grows, so track its negation.
            Self::Roi { .. } => -roi(value, cost),
            Self::Cpc { .. } => {
                if value > 0.0 {
                    cost / value
                } else {
                    0.0
                }
            }
        }
    }

    fn oriented_target(&self) -> f64 {
        match *self {
            Self::Cost { target } | Self::Cpc { target } => target,
            Self::Roi { target, .. } => -target,
        }
    }

    fn within(&self, measured: f64, tol: f64) -> bool {
        match *self {
            Self::Cost { target } | Self::Cpc { target } => (measured - target).abs() <= tol * target,
            Self::Roi { target, .. } => (-measured - target).abs() <= tol,
        }
    }
}

/// `value / cost`, with a free win counted as unbounded ROI.
pub fn roi(value: f64, cost: f64) -> f64 {
    if cost > 0.0 {
        value / cost
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectOutcome {
    pub eta: f64,
    pub value: f64,
    pub cost: f64,
    pub iterations: usize,
}

/// Bisects `eta` on `bracket` until `replay(eta) = (value, cost)` meets the
/// target within `tol`.
///
/// Cost must be nondecreasing in `eta`; every evaluation is checked against
/// the bracket endpoints and a violation aborts with
/// [`ControlError::NonMonotone`].
pub fn bisect_eta(
    mut replay: impl FnMut(f64) -> (f64, f64),
    target: BisectTarget,
    bracket: (f64, f64),
    tol: f64,
) -> Result<BisectOutcome> {
    let (mut lo, mut hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(ControlError::InvalidConfig(format!("bad bracket [{lo}, {hi}]")));
    }
    let goal = target.oriented_target();
    let (v_lo, c_lo) = replay(lo);
    let (v_hi, c_hi) = replay(hi);
    let mut m_lo = target.measure(v_lo, c_lo);
    let mut m_hi = target.measure(v_hi, c_hi);

    if let BisectTarget::Roi { target: t, epsilon } = target {
        // Both endpoints on the same side of the band: nothing in between
        // can satisfy it either.
        let (roi_max, roi_min) = (-m_lo, -m_hi);
        if roi_max < t - epsilon || roi_min > t + epsilon {
            return Err(ControlError::InfeasibleRoi {
                lo_band: t - epsilon,
                hi_band: t + epsilon,
                roi_min,
                roi_max,
            });
        }
    }
    if m_lo > m_hi {
        return Err(ControlError::NonMonotone { eta: hi });
    }
    for (eta, m, v, c) in [(lo, m_lo, v_lo, c_lo), (hi, m_hi, v_hi, c_hi)] {
        if target.within(m, tol) {
            return Ok(BisectOutcome {
                eta,
                value: v,
                cost: c,
                iterations: 0,
            });
        }
    }
    if !(m_lo <= goal && goal <= m_hi) {
        let (at_lo, at_hi) = match target {
            BisectTarget::Roi { .. } => (-m_lo, -m_hi),
            _ => (m_lo, m_hi),
        };
        return Err(ControlError::Bracket {
            target: goal.abs(),
            lo,
            hi,
            at_lo,
            at_hi,
        });
    }

    // Realized replays round bids inside golden-section search, so allow
    // noise far below anything the tolerance can see.
    let slack = 1e-9 * (m_hi - m_lo);
    let mut last = (lo, m_lo);
    for iter in 1..=MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-12 * hi {
            // The response jumps over the target band: a single discrete
            // win separates the two sides.
            return Err(ControlError::NoConvergence {
                eta: last.0,
                measured: last.1.abs(),
                target: goal.abs(),
                iterations: iter - 1,
            });
        }
        let (v, c) = replay(mid);
        let m = target.measure(v, c);
        if m < m_lo - slack || m > m_hi + slack {
            return Err(ControlError::NonMonotone { eta: mid });
        }
        if target.within(m, tol) {
            return Ok(BisectOutcome {
                eta: mid,
                value: v,
                cost: c,
                iterations: iter,
            });
        }
        if m < goal {
            lo = mid;
            m_lo = m;
        } else {
            hi = mid;
            m_hi = m;
        }
        last = (mid, m);
    }
    Err(ControlError::NoConvergence {
        eta: last.0,
        measured: last.1.abs(),
        target: goal.abs(),
        iterations: MAX_BISECTION_ITERS,
    })
}
