use super::baseline::WinModel;
use super::{LandscapeError, Result};

pub const BCE_GRID_POINTS: usize = 64;
/// Predicted win probabilities are clamped to `[c, 1 - c]` before the log.
pub const BCE_PROB_CLAMP: f64 = 1e-12;

/// `BCE_GRID_POINTS` evenly spaced bids from 0 to the 99th percentile of the
/// positive winning prices. Falls back to `[0, 1]` when no price is positive.
pub fn bce_bid_grid(prices: &[f64]) -> Vec<f64> {
    let mut positive: Vec<f64> = prices.iter().copied().filter(|&w| w > 0.0).collect();
    let top = if positive.is_empty() {
        1.0
    } else {
        positive.sort_by(f64::total_cmp);
        let idx = ((positive.len() - 1) as f64 * 0.99).round() as usize;
        positive[idx]
    };
    (0..BCE_GRID_POINTS)
        .map(|i| top * i as f64 / (BCE_GRID_POINTS - 1) as f64)
        .collect()
}

/// Mean binary cross-entropy of win/lose labels `[b >= w]` over every
/// (impression, grid bid) pair, with `cdf(i, b)` the predicted win
/// probability of impression `i` at bid `b`.
pub fn eval_bce_with(
    cdf: impl Fn(usize, f64) -> f64,
    prices: &[f64],
    bid_grid: &[f64],
) -> Result<f64> {
    if bid_grid.is_empty() {
        return Err(LandscapeError::EmptyGrid);
    }
    if prices.is_empty() {
        return Err(LandscapeError::EmptySample);
    }
    let mut total = 0.0;
    for (i, &w) in prices.iter().enumerate() {
        for &b in bid_grid {
            let p = cdf(i, b).clamp(BCE_PROB_CLAMP, 1.0 - BCE_PROB_CLAMP);
            total -= if b >= w { p.ln() } else { (1.0 - p).ln() };
        }
    }
    Ok(total / (prices.len() * bid_grid.len()) as f64)
}

/// [`eval_bce_with`] for per-impression model predictions.
pub fn eval_bce(predictions: &[WinModel], prices: &[f64], bid_grid: &[f64]) -> Result<f64> {
    if predictions.len() != prices.len() {
        return Err(LandscapeError::DimensionMismatch {
            expected: prices.len(),
            got: predictions.len(),
        });
    }
    eval_bce_with(|i, b| predictions[i].cdf(b), prices, bid_grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::ZieParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_oracle_scores_zero() {
        let prices = [0.0, 0.3, 1.2, 2.0];
        let grid = bce_bid_grid(&prices);
        let bce = eval_bce_with(|i, b| if b >= prices[i] { 1.0 } else { 0.0 }, &prices, &grid).unwrap();
        assert!(bce <= 1e-9, "{bce}");
    }

    #[test]
    fn coin_flip_scores_log_two() {
        let prices = [0.0, 0.3, 1.2, 2.0];
        let grid = bce_bid_grid(&prices);
        let bce = eval_bce_with(|_, _| 0.5, &prices, &grid).unwrap();
        assert!((bce - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn grid_shape() {
        let grid = bce_bid_grid(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(grid.len(), BCE_GRID_POINTS);
        assert_eq!(grid[0], 0.0);
        assert_eq!(*grid.last().unwrap(), 3.0);
        assert!(eval_bce_with(|_, _| 0.5, &[1.0], &[]).is_err());
    }

    #[test]
    fn zie_beats_exponential_on_zie_data() {
        let truth = ZieParams::new(0.4, 1.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prices: Vec<f64> = (0..20_000).map(|_| truth.sample(&mut rng)).collect();
        let cfg = Default::default();
        let grid = bce_bid_grid(&prices);
        let zie = crate::landscape::fit_baseline(crate::landscape::DistKind::Zie, &prices, &cfg).unwrap();
        let exp = crate::landscape::fit_baseline(crate::landscape::DistKind::Exponential, &prices, &cfg).unwrap();
        let bce_zie = eval_bce(&vec![zie; prices.len()], &prices, &grid).unwrap();
        let bce_exp = eval_bce(&vec![exp; prices.len()], &prices, &grid).unwrap();
        assert!(bce_zie < bce_exp, "{bce_zie} vs {bce_exp}");
    }
}
