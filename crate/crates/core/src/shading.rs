//! Surplus-maximizing bids for non-uniform first-price channels.
//!
//! For a scaled value `V = eta * v` and win curve `F`, the expected surplus
//! of bidding `x` is `g(x) = (V - x) F(x)`. Under a ZIE landscape `g` is
//! strictly unimodal on `[0, V]`, so the maximizer is either `0` (when
//! `(1 - pi)(1 + lambda V) <= 1`) or the unique interior root of `g'`, which
//! golden-section search brackets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::landscape::{WinModel, ZieParams};

/// Iterations used offline and in tests.
pub const DEFAULT_N_ITER: usize = 40;
/// Iterations used by the streaming ("online") bidder.
pub const ONLINE_N_ITER: usize = 10;

/// Coarse grid used to localize the optimum of non-ZIE win curves, whose
/// surplus need not be unimodal.
const GENERIC_GRID_POINTS: usize = 64;

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShadingError {
    #[error("bid {bid} outside [0, {value}]")]
    BidOutOfRange { bid: f64, value: f64 },
    #[error("scaled value must be finite and nonnegative, got {0}")]
    InvalidValue(f64),
    #[error("eta must be finite and positive, got {0}")]
    InvalidEta(f64),
    #[error("golden-section search needs at least one iteration")]
    ZeroIterations,
    #[error("decision rule needs at least one choice")]
    NoChoices,
    #[error("{models} predictions for {values} values and {prices} prices")]
    LengthMismatch { models: usize, values: usize, prices: usize },
}

pub type Result<T> = std::result::Result<T, ShadingError>;

/// Impression value scaled into bid space, `V = eta * v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledValue {
    v: f64,
    eta: f64,
    scaled: f64,
}

impl ScaledValue {
    pub fn new(v: f64, eta: f64) -> Result<Self> {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(ShadingError::InvalidValue(v));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(ShadingError::InvalidEta(eta));
        }
        Ok(Self {
            v,
            eta,
            scaled: eta * v,
        })
    }

    pub fn value(&self) -> f64 {
        self.v
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn get(&self) -> f64 {
        self.scaled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidDecision {
    pub bid: f64,
    pub win_prob: f64,
    pub expected_surplus: f64,
    /// The zero-bid test passed, so the bid came from the interior search.
    pub interior: bool,
}

/// `g(x) = (V - x) F(x)` for `x` in `[0, V]`.
pub fn surplus(params: &ZieParams, value: f64, x: f64) -> Result<f64> {
    if !(0.0..=value).contains(&x) {
        return Err(ShadingError::BidOutOfRange { bid: x, value });
    }
    Ok(surplus_at(params, value, x))
}

#[inline]
fn surplus_at(params: &ZieParams, value: f64, x: f64) -> f64 {
    (value - x) * params.win_prob(x)
}

/// True iff `g'(0) > 0`, i.e. `(1 - pi)(1 + lambda V) > 1`; the optimum is
/// then interior. Equality falls on the zero-bid side.
pub fn zero_bid_test(params: &ZieParams, value: f64) -> bool {
    (1.0 - params.pi()) * (1.0 + params.lambda() * value) > 1.0
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
/// Returns the final bracket after `n_iter` reductions.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, n_iter: usize) -> (f64, f64) {
    let mut c = b - (b - a) * INV_PHI;
    let mut d = a + (b - a) * INV_PHI;
    for _ in 0..n_iter {
        if f(c) < f(d) {
            a = c;
        } else {
            b = d;
        }
        c = b - (b - a) * INV_PHI;
        d = a + (b - a) * INV_PHI;
    }
    (a, b)
}

/// Surplus-maximizing bid under a ZIE landscape.
pub fn optimal_bid(params: &ZieParams, value: f64, n_iter: usize) -> Result<BidDecision> {
    if !(value >= 0.0 && value.is_finite()) {
        return Err(ShadingError::InvalidValue(value));
    }
    if n_iter == 0 {
        return Err(ShadingError::ZeroIterations);
    }
    let interior = zero_bid_test(params, value);
    let bid = if interior {
        let (a, b) = golden_section_max(|x| surplus_at(params, value, x), 0.0, value, n_iter);
        0.5 * (a + b)
    } else {
        0.0
    };
    let win_prob = params.win_prob(bid);
    Ok(BidDecision {
        bid,
        win_prob,
        expected_surplus: (value - bid) * win_prob,
        interior,
    })
}

/// Surplus-maximizing bid for any win curve.
///
/// ZIE curves use [`optimal_bid`]. Other kinds are scanned on a coarse grid
/// and the best cell is refined by golden-section search; bid 0 wins only if
/// it is at least as good as every positive candidate.
pub fn optimal_bid_for_model(model: &WinModel, value: f64, n_iter: usize) -> Result<BidDecision> {
    if let WinModel::Zie(p) = model {
        return optimal_bid(p, value, n_iter);
    }
    if !(value >= 0.0 && value.is_finite()) {
        return Err(ShadingError::InvalidValue(value));
    }
    if n_iter == 0 {
        return Err(ShadingError::ZeroIterations);
    }
    let g = |x: f64| (value - x) * model.cdf(x);
    if value == 0.0 {
        return Ok(BidDecision {
            bid: 0.0,
            win_prob: model.cdf(0.0),
            expected_surplus: 0.0,
            interior: false,
        });
    }
    let step = value / (GENERIC_GRID_POINTS - 1) as f64;
    let mut best = (0usize, g(0.0));
    for k in 1..GENERIC_GRID_POINTS {
        let s = g(k as f64 * step);
        if s > best.1 {
            best = (k, s);
        }
    }
    let mut bid = best.0 as f64 * step;
    let mut best_surplus = best.1;
    if best.0 > 0 {
        let lo = (best.0 - 1) as f64 * step;
        let hi = ((best.0 + 1) as f64 * step).min(value);
        let (a, b) = golden_section_max(g, lo, hi, n_iter);
        let refined = 0.5 * (a + b);
        let s = g(refined);
        if s >= best_surplus {
            bid = refined;
            best_surplus = s;
        }
    }
    Ok(BidDecision {
        bid,
        win_prob: model.cdf(bid),
        expected_surplus: best_surplus,
        interior: bid > 0.0,
    })
}

/// Realized surplus of shading every impression against its predicted
/// landscape, over the clairvoyant optimum `sum max(0, eta * v - w)`.
///
/// An impression is won when the shaded bid reaches the true price `w`
/// and then yields `eta * v - bid`. `None` when the optimum is zero.
pub fn shaded_surplus_rate(
    predictions: &[WinModel],
    values: &[f64],
    prices: &[f64],
    eta: f64,
    n_iter: usize,
) -> Result<Option<f64>> {
    if predictions.len() != values.len() || values.len() != prices.len() {
        return Err(ShadingError::LengthMismatch {
            models: predictions.len(),
            values: values.len(),
            prices: prices.len(),
        });
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(ShadingError::InvalidEta(eta));
    }
    let mut achieved = 0.0;
    let mut optimum = 0.0;
    for ((model, &v), &w) in predictions.iter().zip(values).zip(prices) {
        let scaled = eta * v;
        let bid = optimal_bid_for_model(model, scaled, n_iter)?.bid;
        if bid >= w {
            achieved += scaled - bid;
        }
        optimum += (scaled - w).max(0.0);
    }
    Ok((optimum > 0.0).then(|| achieved / optimum))
}

/// Lagrangian decision rule: the choice maximizing `eta * value - cost`.
/// Ties go to the lower cost, then the lower index.
pub fn dual_decision_rule(choices: &[(f64, f64)], eta: f64) -> Result<usize> {
    if choices.is_empty() {
        return Err(ShadingError::NoChoices);
    }
    let mut best = 0;
    let mut best_score = eta * choices[0].0 - choices[0].1;
    for (k, &(value, cost)) in choices.iter().enumerate().skip(1) {
        let score = eta * value - cost;
        if score > best_score || (score == best_score && cost < choices[best].1) {
            best = k;
            best_score = score;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::grid_optimal_bid;
    use proptest::prelude::*;

    fn zie(pi: f64, lambda: f64) -> ZieParams {
        ZieParams::new(pi, lambda).unwrap()
    }

    #[test]
    fn surplus_rate_of_organic_log_is_one() {
        let organic = vec![WinModel::Zie(zie(0.95, 1.0)); 3];
        let rate = shaded_surplus_rate(&organic, &[1.0, 2.0, 0.5], &[0.0; 3], 1.0, DEFAULT_N_ITER).unwrap();
        assert_eq!(rate, Some(1.0));
        // A bid below every price wins nothing.
        let rate = shaded_surplus_rate(&organic[..1], &[1.0], &[0.5], 1.0, DEFAULT_N_ITER).unwrap();
        assert_eq!(rate, Some(0.0));
        assert_eq!(shaded_surplus_rate(&organic[..1], &[1.0], &[2.0], 1.0, 10).unwrap(), None);
        assert!(shaded_surplus_rate(&organic, &[1.0], &[0.0], 1.0, 10).is_err());
    }

    #[test]
    fn surplus_examples() {
        let p = zie(0.3, 2.0);
        assert_eq!(surplus(&p, 4.0, 4.0).unwrap(), 0.0);
        assert_eq!(surplus(&zie(0.5, 1.0), 2.0, 0.0).unwrap(), 1.0);
        let g = surplus(&zie(0.1, 0.5), 10.0, 2.834).unwrap();
        assert!((g - 5.602_405_866_165_452).abs() < 1e-12, "{g}");
        assert!(surplus(&p, 1.0, 1.5).is_err());
        assert!(surplus(&p, 1.0, -0.1).is_err());
    }

    #[test]
    fn zero_bid_test_examples() {
        assert!(!zero_bid_test(&zie(0.5, 1.0), 1.0));
        assert!(zero_bid_test(&zie(0.0, 1.0), 0.1));
        assert!(zero_bid_test(&zie(0.1, 0.5), 10.0));
        assert!(!zero_bid_test(&zie(0.0, 1.0), 0.0));
    }

    #[test]
    fn optimal_bid_examples() {
        for n_iter in [1, 10, 40] {
            let d = optimal_bid(&zie(0.5, 1.0), 1.0, n_iter).unwrap();
            assert_eq!(d.bid, 0.0);
            assert!(!d.interior);
            assert_eq!(d.expected_surplus, 0.5);
        }
        let d = optimal_bid(&zie(0.3, 1.0), 0.0, 40).unwrap();
        assert_eq!((d.bid, d.expected_surplus), (0.0, 0.0));

        // Root of h(x) = 0.9 (1 + 0.5 (10 - x)) - exp(0.5 x), found by
        // bisection to 1e-12.
        let d = optimal_bid(&zie(0.1, 0.5), 10.0, 40).unwrap();
        assert!((d.bid - 2.833_988_983_509_527_8).abs() < 1e-6, "{}", d.bid);
        assert!(d.interior);
        let (grid_bid, _) = grid_optimal_bid(&zie(0.1, 0.5), 10.0, 100_001);
        assert!((d.bid - grid_bid).abs() <= 1e-4 + 1e-9);
    }

    #[test]
    fn online_iterations_still_land_near_optimum() {
        let d = optimal_bid(&zie(0.1, 0.5), 10.0, ONLINE_N_ITER).unwrap();
        // Bracket width after 10 reductions is 10 * 0.618^10 ~ 0.081.
        assert!((d.bid - 2.834).abs() < 0.05);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(optimal_bid(&zie(0.1, 0.5), -1.0, 40).is_err());
        assert!(optimal_bid(&zie(0.1, 0.5), 1.0, 0).is_err());
        assert!(ScaledValue::new(-1.0, 1.0).is_err());
        assert!(ScaledValue::new(1.0, 0.0).is_err());
        assert_eq!(ScaledValue::new(2.0, 1.5).unwrap().get(), 3.0);
    }

    #[test]
    fn generic_bid_matches_zie_path_for_exponential() {
        let exp = WinModel::exponential(0.8).unwrap();
        let as_zie = zie(0.0, 0.8);
        let generic = optimal_bid_for_model(&exp, 3.0, 40).unwrap();
        let direct = optimal_bid(&as_zie, 3.0, 40).unwrap();
        assert!((generic.bid - direct.bid).abs() < 1e-6);
    }

    #[test]
    fn generic_bid_on_atom_free_curves_is_positive() {
        for model in [
            WinModel::exponential(1.0).unwrap(),
            WinModel::log_normal(-1.0, 2.0).unwrap(),
            WinModel::gamma(0.5, 1.0).unwrap(),
        ] {
            let d = optimal_bid_for_model(&model, 2.0, 40).unwrap();
            assert!(d.bid > 0.0 && d.bid < 2.0);
            let (grid_bid, grid_surplus) = crate::testkit::grid_optimal_bid_for(&model, 2.0, 20_001);
            assert!(d.expected_surplus >= grid_surplus - 1e-6, "{model:?} {grid_bid}");
        }
    }

    #[test]
    fn dual_rule_examples() {
        let choices = [(1.0, 0.5), (2.0, 3.0)];
        assert_eq!(dual_decision_rule(&choices, 1.0).unwrap(), 0);
        assert_eq!(dual_decision_rule(&choices, 2.0).unwrap(), 0);
        assert_eq!(dual_decision_rule(&choices, 10.0).unwrap(), 1);
        // Tie on score: lower cost wins.
        assert_eq!(dual_decision_rule(&[(2.0, 1.0), (1.0, 0.0)], 1.0).unwrap(), 1);
        // Full tie: lower index.
        assert_eq!(dual_decision_rule(&[(0.0, 0.0), (0.0, 0.0)], 1.0).unwrap(), 0);
        assert_eq!(dual_decision_rule(&[], 1.0), Err(ShadingError::NoChoices));
    }

    proptest! {
        #[test]
        fn agrees_with_grid_oracle(pi in 0.0..0.95f64, lambda in 0.01..10.0f64, value in 0.01..100.0f64) {
            let p = zie(pi, lambda);
            let d = optimal_bid(&p, value, DEFAULT_N_ITER).unwrap();
            let points = 100_001;
            let (grid_bid, grid_surplus) = grid_optimal_bid(&p, value, points);
            let step = value / (points - 1) as f64;
            prop_assert!((d.bid - grid_bid).abs() <= (1e-3 * value).max(step));
            prop_assert!(d.expected_surplus >= grid_surplus - 1e-6 * (grid_surplus.abs() + 1.0));
            prop_assert!(d.bid >= 0.0 && d.bid <= value);
        }

        #[test]
        fn bid_is_monotone_in_eta(pi in 0.0..0.95f64, lambda in 0.01..10.0f64, v in 0.01..10.0f64) {
            let p = zie(pi, lambda);
            let mut prev = 0.0;
            for k in 1..=40 {
                let eta = 0.1 * k as f64;
                let bid = optimal_bid(&p, eta * v, DEFAULT_N_ITER).unwrap().bid;
                // Bracket midpoints carry ~V * 0.618^40 of slack.
                prop_assert!(bid >= prev - 1e-7 * eta * v, "eta {} bid {} prev {}", eta, bid, prev);
                prev = prev.max(bid);
            }
        }

        #[test]
        fn bid_scales_with_price_units(pi in 0.0..0.95f64, lambda in 0.01..10.0f64, value in 0.01..50.0f64, c in 0.1..10.0f64) {
            let base = optimal_bid(&zie(pi, lambda), value, DEFAULT_N_ITER).unwrap();
            let scaled = optimal_bid(&zie(pi, lambda / c), c * value, DEFAULT_N_ITER).unwrap();
            prop_assert_eq!(base.interior, scaled.interior);
            prop_assert!((scaled.bid - c * base.bid).abs() <= 1e-6 * c * value);
        }

        #[test]
        fn zero_bid_iff_test_fails(pi in 0.0..0.95f64, lambda in 0.01..10.0f64, value in 0.0..100.0f64) {
            let p = zie(pi, lambda);
            let d = optimal_bid(&p, value, DEFAULT_N_ITER).unwrap();
            prop_assert_eq!(d.bid == 0.0, !zero_bid_test(&p, value));
        }
    }
}
