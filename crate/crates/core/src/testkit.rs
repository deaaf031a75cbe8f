//! Brute-force oracles.
//!
//! Everything here is deliberately naive and independent of the optimized
//! paths it checks: grid search instead of golden-section search, full
//! enumeration instead of the dual rule, clairvoyant bidding instead of a
//! landscape model. Shipped in the library so tests and the acceptance
//! suite use the same oracles.

use rand::Rng;
use thiserror::Error;

use crate::landscape::{WinModel, ZieParams};
use crate::shading::dual_decision_rule;
use crate::simulate::Impression;

pub const MCKP_MAX_ITEMS: usize = 12;
pub const MCKP_MAX_CHOICES: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestkitError {
    #[error("instance too large for exhaustive search: {items} items x up to {choices} choices")]
    Oversize { items: usize, choices: usize },
    #[error("impression {0} has no null choice (0, 0)")]
    MissingNullChoice(usize),
    #[error("choice values and costs must be finite and nonnegative")]
    InvalidChoice,
}

/// Exhaustive argmax of `(V - x) F(x)` over `grid_points` evenly spaced bids
/// on `[0, V]`, endpoints included. Returns `(bid, surplus)`.
pub fn grid_optimal_bid(params: &ZieParams, value: f64, grid_points: usize) -> (f64, f64) {
    grid_optimal_bid_for(&WinModel::Zie(*params), value, grid_points)
}

pub fn grid_optimal_bid_for(model: &WinModel, value: f64, grid_points: usize) -> (f64, f64) {
    assert!(grid_points >= 2, "grid needs both endpoints");
    let mut best = (0.0, value * model.cdf(0.0));
    for k in 1..grid_points {
        let x = if k == grid_points - 1 {
            value
        } else {
            value * k as f64 / (grid_points - 1) as f64
        };
        let g = (value - x) * model.cdf(x);
        if g > best.1 {
            best = (x, g);
        }
    }
    best
}

/// True when the signs of consecutive differences never go `- ... +`,
/// i.e. the sequence rises (weakly) and then falls. Exact zeros are ignored.
pub fn is_unimodal_sequence(values: &[f64]) -> bool {
    let mut seen_fall = false;
    for pair in values.windows(2) {
        let d = pair[1] - pair[0];
        if d < 0.0 {
            seen_fall = true;
        } else if d > 0.0 && seen_fall {
            return false;
        }
    }
    true
}

/// Central finite-difference marginal cost of a replay `eta -> (cost, value)`.
/// `None` when the value does not move.
pub fn fd_marginal_cost(replay: impl Fn(f64) -> (f64, f64), eta: f64, delta: f64) -> Option<f64> {
    let (c_hi, v_hi) = replay(eta + delta);
    let (c_lo, v_lo) = replay(eta - delta);
    let dv = v_hi - v_lo;
    if dv.abs() < 1e-12 {
        None
    } else {
        Some((c_hi - c_lo) / dv)
    }
}

/// Clairvoyant surplus `sum_i max(0, eta v_i - w_i)`: the bidder that knows
/// every winning price and bids it exactly when profitable.
pub fn optimal_surplus_baseline(dataset: &[Impression], eta: f64) -> f64 {
    dataset
        .iter()
        .map(|imp| (eta * imp.value - imp.winning_price).max(0.0))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiBand {
    pub target: f64,
    pub epsilon: f64,
}

impl RoiBand {
    /// `|value / cost - target| <= epsilon`; a zero-cost plan is feasible
    /// only with zero value or an unbounded band.
    pub fn admits(&self, value: f64, cost: f64) -> bool {
        if cost > 0.0 {
            (value / cost - self.target).abs() <= self.epsilon
        } else {
            value == 0.0 || self.epsilon.is_infinite()
        }
    }
}

/// Multiple-choice knapsack: pick one `(expected value, expected cost)`
/// choice per impression under a budget and optional ROI band.
#[derive(Debug, Clone, PartialEq)]
pub struct MckpInstance {
    items: Vec<Vec<(f64, f64)>>,
    budget: f64,
    roi_band: Option<RoiBand>,
}

impl MckpInstance {
    pub fn new(
        items: Vec<Vec<(f64, f64)>>,
        budget: f64,
        roi_band: Option<RoiBand>,
    ) -> Result<Self, TestkitError> {
        for (i, choices) in items.iter().enumerate() {
            if !choices.contains(&(0.0, 0.0)) {
                return Err(TestkitError::MissingNullChoice(i));
            }
            if choices
                .iter()
                .any(|&(v, c)| !(v >= 0.0 && c >= 0.0 && v.is_finite() && c.is_finite()))
            {
                return Err(TestkitError::InvalidChoice);
            }
        }
        Ok(Self {
            items,
            budget,
            roi_band,
        })
    }

    pub fn items(&self) -> &[Vec<(f64, f64)>] {
        &self.items
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn roi_band(&self) -> Option<RoiBand> {
        self.roi_band
    }

    pub fn totals(&self, assignment: &[usize]) -> (f64, f64) {
        assignment
            .iter()
            .zip(&self.items)
            .fold((0.0, 0.0), |(v, c), (&k, choices)| (v + choices[k].0, c + choices[k].1))
    }

    pub fn is_feasible(&self, value: f64, cost: f64) -> bool {
        cost <= self.budget && self.roi_band.is_none_or(|band| band.admits(value, cost))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MckpSolution {
    pub assignment: Vec<usize>,
    pub total_value: f64,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MckpOutcome {
    Optimal(MckpSolution),
    Infeasible,
}

/// Enumerates every assignment (pruning once the budget is exceeded) and
/// returns the feasible maximizer. The first maximizer in lexicographic
/// order wins ties.
pub fn solve_mckp_exhaustive(instance: &MckpInstance) -> Result<MckpOutcome, TestkitError> {
    let items = instance.items();
    let widest = items.iter().map(Vec::len).max().unwrap_or(0);
    if items.len() > MCKP_MAX_ITEMS || widest > MCKP_MAX_CHOICES {
        return Err(TestkitError::Oversize {
            items: items.len(),
            choices: widest,
        });
    }
    let mut best: Option<MckpSolution> = None;
    let mut current = Vec::with_capacity(items.len());
    enumerate(instance, 0, 0.0, 0.0, &mut current, &mut best);
    Ok(best.map_or(MckpOutcome::Infeasible, MckpOutcome::Optimal))
}

fn enumerate(
    instance: &MckpInstance,
    depth: usize,
    value: f64,
    cost: f64,
    current: &mut Vec<usize>,
    best: &mut Option<MckpSolution>,
) {
    if cost > instance.budget() {
        return;
    }
    let items = instance.items();
    if depth == items.len() {
        if instance.is_feasible(value, cost) && best.as_ref().is_none_or(|b| value > b.total_value) {
            *best = Some(MckpSolution {
                assignment: current.clone(),
                total_value: value,
                total_cost: cost,
            });
        }
        return;
    }
    for (k, &(v, c)) in items[depth].iter().enumerate() {
        current.push(k);
        enumerate(instance, depth + 1, value + v, cost + c, current, best);
        current.pop();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSweepPoint {
    pub eta: f64,
    pub assignment: Vec<usize>,
    pub total_value: f64,
    pub total_cost: f64,
}

/// Applies the dual decision rule at each `eta` and keeps the feasible point
/// with the highest value.
pub fn dual_rule_sweep(instance: &MckpInstance, etas: &[f64]) -> Option<DualSweepPoint> {
    let mut best: Option<DualSweepPoint> = None;
    for &eta in etas {
        let assignment: Vec<usize> = instance
            .items()
            .iter()
            .map(|choices| dual_decision_rule(choices, eta).expect("items are nonempty"))
            .collect();
        let (value, cost) = instance.totals(&assignment);
        if instance.is_feasible(value, cost) && best.as_ref().is_none_or(|b| value > b.total_value) {
            best = Some(DualSweepPoint {
                eta,
                assignment,
                total_value: value,
                total_cost: cost,
            });
        }
    }
    best
}

/// Multipliers at which some item's dual choice can change: the ratios
/// `dc / dv` between pairs of its choices. Outside `[lo, hi]` the dual
/// assignment is constant, so that is the interval worth sweeping.
pub fn dual_breakpoint_range(instance: &MckpInstance) -> Option<(f64, f64)> {
    let mut range: Option<(f64, f64)> = None;
    for row in instance.items() {
        for a in row {
            for b in row {
                let (dv, dc) = (b.0 - a.0, b.1 - a.1);
                if dv > 0.0 && dc > 0.0 {
                    let r = dc / dv;
                    range = Some(range.map_or((r, r), |(lo, hi)| (lo.min(r), hi.max(r))));
                }
            }
        }
    }
    range
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Random first-price bidding instance: each impression gets a ZIE
/// landscape, a value, the null choice, and `choices - 1` bid levels whose
/// expected value and cost are `v F(b)` and `b F(b)`. The budget is half of
/// the most expensive plan.
pub fn random_fpa_mckp<R: Rng + ?Sized>(rng: &mut R, items: usize, choices: usize) -> MckpInstance {
    assert!(choices >= 2);
    let mut max_cost = 0.0;
    let rows: Vec<Vec<(f64, f64)>> = (0..items)
        .map(|_| {
            let p = ZieParams::new(rng.random_range(0.0..0.6), rng.random_range(0.3..3.0))
                .expect("valid by construction");
            let v = rng.random_range(0.5..2.0);
            let mut row = vec![(0.0, 0.0)];
            for k in 1..choices {
                let b = v * k as f64 / choices as f64;
                let f = p.win_prob(b);
                row.push((v * f, b * f));
            }
            max_cost += row.iter().map(|c| c.1).fold(0.0, f64::max);
            row
        })
        .collect();
    MckpInstance::new(rows, 0.5 * max_cost, None).expect("valid by construction")
}
