use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    Accounting, AssignmentMode, ChannelSpec, Comparison, Impression, LandscapeSource, Replay, Result, SimError,
    Strategy,
};
use crate::control::Campaign;
use crate::datagen::{organicize, NoiseTransformConfig};
use crate::landscape::{zie_mle_batch, WinModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Grid values are campaign budgets.
    BudgetLevels,
    /// Grid values are the shaded channel's traffic share; the rest is split
    /// evenly among the other channels.
    ChannelProportions,
    /// Grid values are the relative sigma of the organic-noise transform.
    OrganicShare,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::BudgetLevels => "budget_levels",
            Self::ChannelProportions => "channel_proportions",
            Self::OrganicShare => "organic_share",
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "budget_levels" => Ok(Self::BudgetLevels),
            "channel_proportions" => Ok(Self::ChannelProportions),
            "organic_share" => Ok(Self::OrganicShare),
            other => Err(SimError::Config(format!("unknown sweep {other:?}"))),
        }
    }
}

/// Everything a sweep point varies from.
#[derive(Debug, Clone)]
pub struct SweepBase<'a> {
    pub dataset: &'a [Impression],
    pub channels: Vec<ChannelSpec>,
    pub assignment: AssignmentMode,
    pub landscapes: LandscapeSource<'a>,
    pub accounting: Accounting,
    pub n_iter: usize,
    pub campaign: Campaign,
    pub strategies: Vec<Strategy>,
    pub bracket: (f64, f64),
    pub tol: f64,
    /// Seed of the organic-noise transform.
    pub seed: u64,
}

/// One method at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub experiment: SweepKind,
    pub x: f64,
    pub strategy: Strategy,
    pub feasible: bool,
    pub eta: Option<f64>,
    pub eta3: Option<f64>,
    pub value: Option<f64>,
    pub cost: Option<f64>,
    pub roi: Option<f64>,
    pub surplus_rate: Option<f64>,
    pub delta_value_pct: Option<f64>,
}

fn rows_of(kind: SweepKind, x: f64, cmp: &Comparison) -> Vec<SweepRow> {
    cmp.rows
        .iter()
        .map(|r| {
            let rep = r.run.as_ref().map(|run| &run.report);
            SweepRow {
                experiment: kind,
                x,
                strategy: r.strategy,
                feasible: r.feasible,
                eta: rep.map(|p| p.etas.eta),
                eta3: rep.map(|p| p.etas.eta3),
                value: rep.map(|p| p.total.value),
                cost: rep.map(|p| p.total.cost),
                roi: rep.and_then(|p| p.total.roi),
                surplus_rate: rep.and_then(|p| p.total.surplus_rate),
                delta_value_pct: r.delta_value_pct,
            }
        })
        .collect()
}

/// Constraint-matched comparison of every strategy at every grid point.
/// All methods at a point share the same data, routing and seed.
pub fn sweep(kind: SweepKind, grid: &[f64], base: &SweepBase<'_>) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(SimError::Config("sweep grid is empty".into()));
    }
    let mut rows = Vec::new();
    for &x in grid {
        let cmp = match kind {
            SweepKind::BudgetLevels => {
                let campaign = Campaign::new(x, base.campaign.objective)?;
                replay_of(base, base.dataset, &base.channels, base.landscapes)?
                    .compare(&base.strategies, &campaign, base.bracket, base.tol)?
            }
            SweepKind::ChannelProportions => {
                let channels = reshare(&base.channels, x)?;
                replay_of(base, base.dataset, &channels, base.landscapes)?
                    .compare(&base.strategies, &base.campaign, base.bracket, base.tol)?
            }
            SweepKind::OrganicShare => {
                if base.accounting == Accounting::Expected {
                    return Err(SimError::Config(
                        "organic_share sweeps rewrite prices and need realized accounting".into(),
                    ));
                }
                let noisy = organicize(
                    base.dataset,
                    &NoiseTransformConfig {
                        relative_sigma: x,
                        seed: base.seed,
                    },
                )
                .map_err(|e| SimError::Config(e.to_string()))?;
                // Ground truth no longer describes the noisy prices; fall
                // back to one landscape fitted on the whole noisy log.
                let refit: Vec<WinModel>;
                let landscapes = match base.landscapes {
                    LandscapeSource::Truth => {
                        let prices: Vec<f64> = noisy.iter().map(|i| i.winning_price).collect();
                        refit = vec![WinModel::Zie(zie_mle_batch(&prices)?); noisy.len()];
                        LandscapeSource::Predicted(&refit)
                    }
                    other => other,
                };
                replay_of(base, &noisy, &base.channels, landscapes)?
                    .compare(&base.strategies, &base.campaign, base.bracket, base.tol)?
            }
        };
        rows.extend(rows_of(kind, x, &cmp));
    }
    Ok(rows)
}

fn replay_of<'a>(
    base: &SweepBase<'a>,
    dataset: &'a [Impression],
    channels: &[ChannelSpec],
    landscapes: LandscapeSource<'a>,
) -> Result<Replay<'a>> {
    Ok(Replay::new(dataset, channels, base.assignment, landscapes, base.accounting)?.with_n_iter(base.n_iter))
}

/// Gives the first shadable channel `share` and splits the rest evenly.
fn reshare(channels: &[ChannelSpec], share: f64) -> Result<Vec<ChannelSpec>> {
    let target = channels
        .iter()
        .position(ChannelSpec::is_shadable)
        .ok_or_else(|| SimError::Config("channel_proportions needs a non-uniform channel".into()))?;
    if channels.len() < 2 || !(0.0..=1.0).contains(&share) {
        return Err(SimError::Config(format!("cannot give share {share} to one of {} channels", channels.len())));
    }
    let rest = (1.0 - share) / (channels.len() - 1) as f64;
    Ok(channels
        .iter()
        .enumerate()
        .map(|(i, c)| ChannelSpec {
            traffic_share: if i == target { share } else { rest },
            ..c.clone()
        })
        .collect())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties). `None` for fewer
/// than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{DistKind, ZieParams};
    use crate::simulate::standard_channels;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize) -> Vec<Impression> {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        (0..n)
            .map(|i| {
                let p = ZieParams::new(rng.random_range(0.0..0.6), rng.random_range(0.5..3.0)).unwrap();
                let w = p.sample(&mut rng);
                Impression::new(format!("w{i}"), rng.random_range(0.2..2.0), w, vec![]).with_landscape(p)
            })
            .collect()
    }

    fn base(d: &[Impression]) -> SweepBase<'_> {
        SweepBase {
            dataset: d,
            channels: standard_channels([0.3, 0.3, 0.4]),
            assignment: AssignmentMode::Hash,
            landscapes: LandscapeSource::Truth,
            accounting: Accounting::Expected,
            n_iter: 40,
            campaign: Campaign::max_return(200.0).unwrap(),
            strategies: vec![Strategy::UeUb, Strategy::McaeNub(DistKind::Zie)],
            bracket: (0.01, 50.0),
            tol: 1e-3,
            seed: 5,
        }
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn one_point_sweep_equals_comparison() {
        let d = data(3000);
        let b = base(&d);
        let rows = sweep(SweepKind::BudgetLevels, &[200.0], &b).unwrap();
        let cmp = Replay::new(&d, &b.channels, b.assignment, b.landscapes, b.accounting)
            .unwrap()
            .compare(&b.strategies, &b.campaign, b.bracket, b.tol)
            .unwrap();
        assert_eq!(rows, rows_of(SweepKind::BudgetLevels, 200.0, &cmp));
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn reshare_and_organic() {
        let d = data(3000);
        let b = base(&d);
        let ch = reshare(&b.channels, 0.6).unwrap();
        assert_eq!(ch.iter().map(|c| c.traffic_share).collect::<Vec<_>>(), vec![0.2, 0.2, 0.6]);
        let rows = sweep(SweepKind::ChannelProportions, &[0.2, 0.6], &b).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(sweep(SweepKind::OrganicShare, &[0.7], &b).is_err());
        // Realized cost moves in whole-impression steps, so the band has to
        // be wider than one price.
        let realized = SweepBase {
            accounting: Accounting::Realized,
            tol: 1e-2,
            ..base(&d)
        };
        let rows = sweep(SweepKind::OrganicShare, &[0.0, 0.7], &realized).unwrap();
        assert!(rows.iter().all(|r| r.feasible));
        assert!(sweep(SweepKind::BudgetLevels, &[], &b).is_err());
    }
}
