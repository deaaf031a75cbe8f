use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    assign_channels, resolve_auction, AssignmentMode, BiddingMode, ChannelSpec, Impression, Mechanism, Result,
    SimError, Strategy, FD_REL_DELTA,
};
use crate::control::{bisect_eta, BisectOutcome, BisectTarget, Campaign, ControlError};
use crate::landscape::{WinModel, ZieParams};
use crate::mca::{align_eta3, fit_power_law, ChannelEtas, PowerLawFit};
use crate::shading::{optimal_bid_for_model, DEFAULT_N_ITER};

/// Multiples of the current `eta3` at which the uniform first-price value
/// curve is probed for the power-law fit.
pub const ALIGN_PROBES: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.25];
const MAX_ALIGN_ITERS: usize = 12;
const ALIGN_REL_TOL: f64 = 1e-4;
const MAX_ALIGN_ROUNDS: usize = 8;
const ALIGN_RATIO_TOL: f64 = 1e-3;

/// How outcomes are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Accounting {
    /// Against the logged winning price.
    Realized,
    /// In expectation under each impression's ground-truth landscape:
    /// value `v F(b)`, first-price cost `b F(b)`, second-price cost
    /// `E[w; w <= b]`.
    Expected,
}

/// Where shaded channels get their win curves.
#[derive(Debug, Clone, Copy)]
pub enum LandscapeSource<'a> {
    None,
    /// Each impression's ground-truth landscape.
    Truth,
    /// One prediction per impression, in dataset order.
    Predicted(&'a [WinModel]),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Totals {
    impressions: usize,
    won: f64,
    zero_bid_wins: f64,
    value: f64,
    cost: f64,
    surplus: f64,
    optimal_surplus: f64,
}

impl Totals {
    fn add(&mut self, other: &Totals) {
        self.impressions += other.impressions;
        self.won += other.won;
        self.zero_bid_wins += other.zero_bid_wins;
        self.value += other.value;
        self.cost += other.cost;
        self.surplus += other.surplus;
        self.optimal_surplus += other.optimal_surplus;
    }
}

#[derive(Debug, Clone, Copy)]
struct SlotEval {
    bid: f64,
    won: f64,
    zero_bid_win: f64,
    value: f64,
    cost: f64,
    surplus: f64,
    optimal: f64,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// `E[max(0, V - w)]` under a ZIE landscape.
pub fn clairvoyant_expected_surplus(p: &ZieParams, scaled_value: f64) -> f64 {
    if scaled_value <= 0.0 {
        return 0.0;
    }
    let l = p.lambda();
    let tail = scaled_value - (-(l * scaled_value)).exp_m1().abs() / l;
    p.pi() * scaled_value + (1.0 - p.pi()) * tail
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub channel: String,
    pub mechanism: Mechanism,
    pub bidding_mode: BiddingMode,
    pub multiplier: f64,
    pub impressions: usize,
    pub won: f64,
    pub zero_bid_wins: f64,
    pub value: f64,
    pub cost: f64,
    pub roi: Option<f64>,
    pub surplus: f64,
    pub optimal_surplus: f64,
    pub surplus_rate: Option<f64>,
    /// Finite-difference marginal cost in the channel's own multiplier.
    pub mc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalsReport {
    pub impressions: usize,
    pub won: f64,
    pub zero_bid_wins: f64,
    pub value: f64,
    pub cost: f64,
    pub roi: Option<f64>,
    pub surplus: f64,
    pub optimal_surplus: f64,
    pub surplus_rate: Option<f64>,
    /// Finite-difference marginal cost with every multiplier scaled together.
    pub mc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub strategy: Strategy,
    pub accounting: Accounting,
    pub etas: ChannelEtas,
    pub channels: Vec<ChannelReport>,
    pub total: TotalsReport,
}

/// One row of the per-impression outcome log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub id: String,
    pub channel: String,
    pub bid: f64,
    /// 0 or 1 under realized accounting, the win probability otherwise.
    pub won: f64,
    pub cost: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedRun {
    pub bisection: BisectOutcome,
    pub fit: Option<PowerLawFit>,
    pub report: ReplayReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub strategy: Strategy,
    pub feasible: bool,
    pub run: Option<MatchedRun>,
    /// Why the constraint could not be matched.
    pub error: Option<String>,
    /// Total value relative to the UE&UB row, in percent.
    pub delta_value_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub campaign: Campaign,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    /// Fills in each feasible row's value delta against the UE&UB row.
    pub fn new(campaign: Campaign, mut rows: Vec<CompareRow>) -> Self {
        let base = rows
            .iter()
            .find(|r| r.strategy == Strategy::UeUb)
            .and_then(|r| r.run.as_ref())
            .map(|r| r.report.total.value);
        for row in &mut rows {
            row.delta_value_pct = match (base, &row.run) {
                (Some(b), Some(run)) if b > 0.0 => Some(100.0 * (run.report.total.value - b) / b),
                _ => None,
            };
        }
        Self { campaign, rows }
    }

    pub fn all_feasible(&self) -> bool {
        self.rows.iter().all(|r| r.feasible)
    }

    pub fn row(&self, strategy: Strategy) -> Option<&CompareRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }
}

/// A dataset routed to channels, ready to replay under any strategy.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    dataset: &'a [Impression],
    channels: Vec<ChannelSpec>,
    slots: Vec<Vec<usize>>,
    landscapes: Option<Cow<'a, [WinModel]>>,
    accounting: Accounting,
    n_iter: usize,
}

impl<'a> Replay<'a> {
    pub fn new(
        dataset: &'a [Impression],
        channels: &[ChannelSpec],
        assignment: AssignmentMode,
        landscapes: LandscapeSource<'a>,
        accounting: Accounting,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(SimError::EmptyDataset);
        }
        for imp in dataset {
            imp.validate()?;
        }
        let slots = assign_channels(dataset, channels, assignment)?;
        let truth = || -> Result<Vec<WinModel>> {
            dataset
                .iter()
                .map(|imp| {
                    imp.landscape
                        .map(WinModel::Zie)
                        .ok_or_else(|| SimError::MissingTruth(imp.id.clone()))
                })
                .collect()
        };
        let landscapes = match landscapes {
            LandscapeSource::None => None,
            LandscapeSource::Truth => Some(Cow::Owned(truth()?)),
            LandscapeSource::Predicted(p) => {
                if p.len() != dataset.len() {
                    return Err(SimError::LandscapeCount {
                        expected: dataset.len(),
                        got: p.len(),
                    });
                }
                Some(Cow::Borrowed(p))
            }
        };
        if accounting == Accounting::Expected {
            if let Some(imp) = dataset.iter().find(|imp| imp.landscape.is_none()) {
                return Err(SimError::MissingTruth(imp.id.clone()));
            }
        }
        Ok(Self {
            dataset,
            channels: channels.to_vec(),
            slots,
            landscapes,
            accounting,
            n_iter: DEFAULT_N_ITER,
        })
    }

    /// Golden-section iterations for shaded bids.
    pub fn with_n_iter(mut self, n_iter: usize) -> Self {
        self.n_iter = n_iter.max(1);
        self
    }

    pub fn dataset(&self) -> &'a [Impression] {
        self.dataset
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    /// Impression indices routed to each channel.
    pub fn slots(&self) -> &[Vec<usize>] {
        &self.slots
    }

    pub fn accounting(&self) -> Accounting {
        self.accounting
    }

    /// Multiplier each channel bids with.
    pub fn multipliers(&self, strategy: Strategy, etas: &ChannelEtas) -> Vec<f64> {
        self.channels
            .iter()
            .map(|c| {
                if strategy.aligns() && c.is_fpa_uniform() {
                    etas.eta3
                } else {
                    etas.eta
                }
            })
            .collect()
    }

    fn shaded(&self, strategy: Strategy, c: usize) -> bool {
        strategy.shades() && self.channels[c].is_shadable()
    }

    fn check_landscapes(&self, strategy: Strategy) -> Result<()> {
        let needed = (0..self.channels.len()).any(|c| self.shaded(strategy, c) && !self.slots[c].is_empty());
        if needed && self.landscapes.is_none() {
            return Err(SimError::MissingLandscape(strategy.to_string()));
        }
        Ok(())
    }

    fn bid(&self, i: usize, multiplier: f64, shaded: bool) -> f64 {
        let scaled = self.dataset[i].value * multiplier;
        if !shaded {
            return scaled;
        }
        let model = &self.landscapes.as_ref().expect("checked by check_landscapes")[i];
        // A non-finite scaled value is the only failure mode; it cannot be
        // profitably bid on.
        optimal_bid_for_model(model, scaled, self.n_iter).map_or(0.0, |d| d.bid)
    }

    fn eval(&self, mechanism: Mechanism, i: usize, multiplier: f64, shaded: bool, surplus_eta: f64) -> SlotEval {
        let imp = &self.dataset[i];
        let bid = self.bid(i, multiplier, shaded);
        let scaled = surplus_eta * imp.value;
        match self.accounting {
            Accounting::Realized => {
                let out = resolve_auction(mechanism, bid, imp);
                let won = if out.won { 1.0 } else { 0.0 };
                SlotEval {
                    bid,
                    won,
                    zero_bid_win: if bid == 0.0 { won } else { 0.0 },
                    value: out.value_realized,
                    cost: out.cost,
                    surplus: won * (scaled - out.cost),
                    optimal: (scaled - imp.winning_price).max(0.0),
                }
            }
            Accounting::Expected => {
                let p = imp.landscape.expect("checked at construction");
                let f = p.win_prob(bid);
                let cost = match mechanism {
                    Mechanism::Fpa => bid * f,
                    Mechanism::Spa => p.partial_expectation(bid),
                };
                SlotEval {
                    bid,
                    won: f,
                    zero_bid_win: if bid == 0.0 { p.pi() } else { 0.0 },
                    value: imp.value * f,
                    cost,
                    surplus: scaled * f - cost,
                    optimal: clairvoyant_expected_surplus(&p, scaled),
                }
            }
        }
    }

    fn evals(&self, c: usize, indices: &[usize], multiplier: f64, shaded: bool, surplus_eta: f64) -> Vec<SlotEval> {
        let mechanism = self.channels[c].mechanism;
        indices
            .par_iter()
            .map(|&i| self.eval(mechanism, i, multiplier, shaded, surplus_eta))
            .collect()
    }

    /// Sums in `indices` order, so results do not depend on scheduling.
    fn totals(&self, c: usize, indices: &[usize], multiplier: f64, shaded: bool, surplus_eta: f64) -> Totals {
        let mut t = Totals::default();
        for e in self.evals(c, indices, multiplier, shaded, surplus_eta) {
            t.add(&Totals {
                impressions: 1,
                won: e.won,
                zero_bid_wins: e.zero_bid_win,
                value: e.value,
                cost: e.cost,
                surplus: e.surplus,
                optimal_surplus: e.optimal,
            });
        }
        t
    }

    /// Central difference of cost over value in one channel's multiplier.
    fn channel_mc(&self, c: usize, indices: &[usize], multiplier: f64, shaded: bool) -> Option<f64> {
        let delta = FD_REL_DELTA * multiplier;
        let hi = self.totals(c, indices, multiplier + delta, shaded, multiplier);
        let lo = self.totals(c, indices, multiplier - delta, shaded, multiplier);
        let dv = hi.value - lo.value;
        (dv.abs() >= 1e-12).then(|| (hi.cost - lo.cost) / dv)
    }

    /// Total `(value, cost)` of a strategy, without marginal costs.
    pub fn value_cost(&self, strategy: Strategy, etas: &ChannelEtas) -> Result<(f64, f64)> {
        self.check_landscapes(strategy)?;
        let mults = self.multipliers(strategy, etas);
        let mut t = Totals::default();
        for c in 0..self.channels.len() {
            t.add(&self.totals(c, &self.slots[c], mults[c], self.shaded(strategy, c), etas.eta));
        }
        Ok((t.value, t.cost))
    }

    /// Replays a strategy, including finite-difference marginal costs.
    ///
    /// Totals are summed channel by channel (in channel order), each
    /// channel over its impressions in dataset order; the outcome log uses
    /// the same order.
    pub fn run(&self, strategy: Strategy, etas: &ChannelEtas) -> Result<ReplayReport> {
        self.check_landscapes(strategy)?;
        let mults = self.multipliers(strategy, etas);
        let mut channels = Vec::with_capacity(self.channels.len());
        let mut total = Totals::default();
        let (mut hi, mut lo) = (Totals::default(), Totals::default());
        for (c, spec) in self.channels.iter().enumerate() {
            let indices = &self.slots[c];
            let shaded = self.shaded(strategy, c);
            let m = mults[c];
            let delta = FD_REL_DELTA * m;
            let t = self.totals(c, indices, m, shaded, etas.eta);
            let up = self.totals(c, indices, m + delta, shaded, etas.eta);
            let down = self.totals(c, indices, m - delta, shaded, etas.eta);
            let dv = up.value - down.value;
            let mc = (dv.abs() >= 1e-12).then(|| (up.cost - down.cost) / dv);
            total.add(&t);
            hi.add(&up);
            lo.add(&down);
            channels.push(ChannelReport {
                channel: spec.id.clone(),
                mechanism: spec.mechanism,
                bidding_mode: spec.bidding_mode,
                multiplier: m,
                impressions: t.impressions,
                won: t.won,
                zero_bid_wins: t.zero_bid_wins,
                value: t.value,
                cost: t.cost,
                roi: ratio(t.value, t.cost),
                surplus: t.surplus,
                optimal_surplus: t.optimal_surplus,
                surplus_rate: ratio(t.surplus, t.optimal_surplus),
                mc,
            });
        }
        let dv = hi.value - lo.value;
        Ok(ReplayReport {
            strategy,
            accounting: self.accounting,
            etas: *etas,
            channels,
            total: TotalsReport {
                impressions: total.impressions,
                won: total.won,
                zero_bid_wins: total.zero_bid_wins,
                value: total.value,
                cost: total.cost,
                roi: ratio(total.value, total.cost),
                surplus: total.surplus,
                optimal_surplus: total.optimal_surplus,
                surplus_rate: ratio(total.surplus, total.optimal_surplus),
                mc: (dv.abs() >= 1e-12).then(|| (hi.cost - lo.cost) / dv),
            },
        })
    }

    /// `(value, cost, uniform first-price value)` over dataset indices in
    /// `range`, for streaming control periods.
    pub(crate) fn period_totals(
        &self,
        strategy: Strategy,
        etas: &ChannelEtas,
        range: std::ops::Range<usize>,
    ) -> Result<(f64, f64, f64)> {
        self.check_landscapes(strategy)?;
        let mults = self.multipliers(strategy, etas);
        let (mut value, mut cost, mut uniform) = (0.0, 0.0, 0.0);
        for (c, spec) in self.channels.iter().enumerate() {
            let all = &self.slots[c];
            let a = all.partition_point(|&i| i < range.start);
            let b = all.partition_point(|&i| i < range.end);
            let t = self.totals(c, &all[a..b], mults[c], self.shaded(strategy, c), etas.eta);
            value += t.value;
            cost += t.cost;
            if spec.is_fpa_uniform() {
                uniform += t.value;
            }
        }
        Ok((value, cost, uniform))
    }

    /// Per-impression outcomes in report summation order.
    pub fn outcomes(&self, strategy: Strategy, etas: &ChannelEtas) -> Result<Vec<OutcomeRow>> {
        self.check_landscapes(strategy)?;
        let mults = self.multipliers(strategy, etas);
        let mut rows = Vec::new();
        for (c, spec) in self.channels.iter().enumerate() {
            let evals = self.evals(c, &self.slots[c], mults[c], self.shaded(strategy, c), etas.eta);
            rows.extend(self.slots[c].iter().zip(evals).map(|(&i, e)| OutcomeRow {
                id: self.dataset[i].id.clone(),
                channel: spec.id.clone(),
                bid: e.bid,
                won: e.won,
                cost: e.cost,
                value: e.value,
            }));
        }
        Ok(rows)
    }

    /// Marginal cost of one channel's own multiplier, by central difference
    /// with `delta = FD_REL_DELTA * multiplier`.
    pub fn estimate_channel_mc(&self, strategy: Strategy, etas: &ChannelEtas, channel: usize) -> Result<f64> {
        self.check_landscapes(strategy)?;
        let m = self.multipliers(strategy, etas)[channel];
        self.channel_mc(channel, &self.slots[channel], m, self.shaded(strategy, channel))
            .ok_or_else(|| SimError::UndefinedMc(self.channels[channel].id.clone()))
    }

    /// Value bought by the uniform first-price channels at `eta3`.
    fn uniform_fpa_value(&self, eta3: f64) -> f64 {
        (0..self.channels.len())
            .filter(|&c| self.channels[c].is_fpa_uniform())
            .map(|c| self.totals(c, &self.slots[c], eta3, false, eta3).value)
            .sum()
    }

    /// Solves `eta3 = eta / (1 + 1/b(eta3))`, refitting `V = a eta3^b` on
    /// probes around the current `eta3` until it stops moving. Without
    /// uniform first-price traffic (or a usable fit) `eta3 = eta`.
    pub fn align(&self, eta: f64) -> Result<(ChannelEtas, Option<PowerLawFit>)> {
        let active = self
            .channels
            .iter()
            .zip(&self.slots)
            .any(|(c, s)| c.is_fpa_uniform() && !s.is_empty());
        if !active {
            return Ok((ChannelEtas::uniform(eta)?, None));
        }
        let mut eta3 = 0.5 * eta;
        let mut fit = None;
        for _ in 0..MAX_ALIGN_ITERS {
            let points: Vec<(f64, f64)> = ALIGN_PROBES
                .iter()
                .map(|f| (eta3 * f, self.uniform_fpa_value(eta3 * f)))
                .collect();
            let f = match fit_power_law(&points) {
                Ok(f) => f,
                Err(e) => {
                    log::warn!("alignment at eta {eta}: {e}; keeping eta3 {eta3}");
                    break;
                }
            };
            let next = align_eta3(eta, &f)?;
            fit = Some(f);
            let done = (next - eta3).abs() <= ALIGN_REL_TOL * eta3;
            eta3 = next;
            if done {
                break;
            }
        }
        if fit.is_none() {
            eta3 = eta;
        }
        Ok((ChannelEtas { eta, eta3 }, fit))
    }

    /// Multipliers a strategy uses at shared multiplier `eta`.
    pub fn etas_for(&self, strategy: Strategy, eta: f64) -> Result<(ChannelEtas, Option<PowerLawFit>)> {
        if strategy.aligns() {
            self.align(eta)
        } else {
            Ok((ChannelEtas::uniform(eta)?, None))
        }
    }

    /// Bisects the shared multiplier until the campaign constraint holds,
    /// then replays at the matched point.
    ///
    /// Aligned strategies bisect with `eta3 / eta` held fixed (so the
    /// response stays monotone in `eta`), realign at the matched `eta`, and
    /// repeat until the ratio settles.
    pub fn match_constraint(
        &self,
        strategy: Strategy,
        campaign: &Campaign,
        bracket: (f64, f64),
        tol: f64,
    ) -> Result<MatchedRun> {
        self.check_landscapes(strategy)?;
        let target = BisectTarget::for_campaign(campaign);
        // b = 1 as the starting guess for aligned strategies.
        let mut ratio = if strategy.aligns() { 0.5 } else { 1.0 };
        let mut fit = None;
        for round in 0..MAX_ALIGN_ROUNDS {
            let mut failure: Option<SimError> = None;
            let bisection = bisect_eta(
                |eta| {
                    let etas = ChannelEtas {
                        eta,
                        eta3: ratio * eta,
                    };
                    self.value_cost(strategy, &etas).unwrap_or_else(|e| {
                        failure.get_or_insert(e);
                        (f64::NAN, f64::NAN)
                    })
                },
                target,
                bracket,
                tol,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            let bisection = bisection?;
            let settled = if strategy.aligns() {
                let (aligned, f) = self.align(bisection.eta)?;
                let next = aligned.eta3 / aligned.eta;
                let settled = (next - ratio).abs() <= ALIGN_RATIO_TOL * ratio;
                fit = f;
                if !settled {
                    log::debug!("alignment round {round}: eta3/eta {ratio} -> {next}");
                    ratio = next;
                }
                settled
            } else {
                true
            };
            if settled || round + 1 == MAX_ALIGN_ROUNDS {
                let etas = ChannelEtas {
                    eta: bisection.eta,
                    eta3: ratio * bisection.eta,
                };
                let report = self.run(strategy, &etas)?;
                return Ok(MatchedRun {
                    bisection,
                    fit,
                    report,
                });
            }
        }
        unreachable!("the last round always returns")
    }

    /// Constraint-matched run of one strategy. A strategy that cannot meet
    /// the constraint gives an infeasible row rather than an error.
    pub fn compare_row(
        &self,
        strategy: Strategy,
        campaign: &Campaign,
        bracket: (f64, f64),
        tol: f64,
    ) -> Result<CompareRow> {
        match self.match_constraint(strategy, campaign, bracket, tol) {
            Ok(run) => Ok(CompareRow {
                strategy,
                feasible: true,
                run: Some(run),
                error: None,
                delta_value_pct: None,
            }),
            Err(SimError::Control(
                e @ (ControlError::Bracket { .. } | ControlError::InfeasibleRoi { .. } | ControlError::NoConvergence { .. }),
            )) => Ok(CompareRow {
                strategy,
                feasible: false,
                run: None,
                error: Some(e.to_string()),
                delta_value_pct: None,
            }),
            Err(e) => Err(e),
        }
    }

    /// [`compare_row`](Self::compare_row) for every strategy, with value
    /// deltas against UE&UB.
    pub fn compare(
        &self,
        strategies: &[Strategy],
        campaign: &Campaign,
        bracket: (f64, f64),
        tol: f64,
    ) -> Result<Comparison> {
        let rows = strategies
            .iter()
            .map(|&s| self.compare_row(s, campaign, bracket, tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(Comparison::new(*campaign, rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::DistKind;
    use crate::simulate::standard_channels;
    use crate::testkit::fd_marginal_cost;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const Z: DistKind = DistKind::Zie;

    fn synthetic(n: usize, seed: u64) -> Vec<Impression> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let p = ZieParams::new(rng.random_range(0.0..0.6), rng.random_range(0.5..3.0)).unwrap();
                let w = p.sample(&mut rng);
                Impression::new(format!("i{i}"), rng.random_range(0.2..2.0), w, vec![]).with_landscape(p)
            })
            .collect()
    }

    fn single(channel: ChannelSpec) -> Vec<ChannelSpec> {
        vec![ChannelSpec { traffic_share: 1.0, ..channel }]
    }

    #[test]
    fn single_spa_channel_ignores_strategy() {
        let data = synthetic(2000, 1);
        let replay = Replay::new(
            &data,
            &single(ChannelSpec::spa("spa", 1.0)),
            AssignmentMode::Hash,
            LandscapeSource::Truth,
            Accounting::Realized,
        )
        .unwrap();
        let etas = ChannelEtas::uniform(0.9).unwrap();
        let ub = replay.run(Strategy::UeUb, &etas).unwrap();
        let mut mcae = replay.run(Strategy::McaeNub(Z), &replay.align(0.9).unwrap().0).unwrap();
        mcae.strategy = Strategy::UeUb;
        assert_eq!(ub, mcae);
    }

    #[test]
    fn all_organic_shaded_channel_wins_everything_for_free() {
        let data: Vec<Impression> = (0..500)
            .map(|i| {
                Impression::new(i.to_string(), 0.5 + (i % 7) as f64, 0.0, vec![])
                    .with_landscape(ZieParams::new(1.0 - 1e-6, 1.0).unwrap())
            })
            .collect();
        let replay = Replay::new(
            &data,
            &single(ChannelSpec::fpa_nonuniform("nu", 1.0)),
            AssignmentMode::Duplicate,
            LandscapeSource::Truth,
            Accounting::Realized,
        )
        .unwrap();
        let report = replay.run(Strategy::UeNub(Z), &ChannelEtas::uniform(1.0).unwrap()).unwrap();
        assert_eq!(report.total.cost, 0.0);
        assert_eq!(report.total.won, 500.0);
        assert_eq!(report.total.zero_bid_wins, 500.0);
        let sum_v: f64 = data.iter().map(|i| i.value).sum();
        assert_eq!(report.total.optimal_surplus, sum_v);
        assert_eq!(report.total.surplus_rate, Some(1.0));
    }

    #[test]
    fn conservation_against_outcome_log() {
        let data = synthetic(3000, 2);
        let channels = standard_channels([0.3, 0.3, 0.4]);
        let replay = Replay::new(&data, &channels, AssignmentMode::Hash, LandscapeSource::Truth, Accounting::Realized).unwrap();
        let strategy = Strategy::McaeNub(Z);
        let (etas, _) = replay.align(1.1).unwrap();
        let report = replay.run(strategy, &etas).unwrap();
        let log = replay.outcomes(strategy, &etas).unwrap();
        assert_eq!(log.len(), data.len());
        let (mut cost, mut value) = (0.0, 0.0);
        for ch in &channels {
            let (mut c, mut v) = (0.0, 0.0);
            for row in log.iter().filter(|r| r.channel == ch.id) {
                c += row.cost;
                v += row.value;
            }
            let rep = report.channels.iter().find(|r| r.channel == ch.id).unwrap();
            assert_eq!((rep.cost, rep.value), (c, v));
            cost += c;
            value += v;
        }
        assert_eq!((report.total.cost, report.total.value), (cost, value));
        let organic = log
            .iter()
            .zip(replay.slots().iter().flatten())
            .filter(|(r, &i)| r.bid == 0.0 && data[i].winning_price == 0.0)
            .count();
        assert_eq!(report.total.zero_bid_wins, organic as f64);
    }

    #[test]
    fn replay_is_deterministic() {
        let data = synthetic(2000, 3);
        let channels = standard_channels([0.3, 0.3, 0.4]);
        let replay = Replay::new(&data, &channels, AssignmentMode::Hash, LandscapeSource::Truth, Accounting::Realized).unwrap();
        let etas = ChannelEtas { eta: 1.2, eta3: 0.7 };
        let a = replay.run(Strategy::McaeNub(Z), &etas).unwrap();
        let b = replay.run(Strategy::McaeNub(Z), &etas).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn spa_costs_never_exceed_fpa() {
        let data = synthetic(2000, 4);
        let mk = |c: ChannelSpec| {
            Replay::new(&data, &single(c), AssignmentMode::Duplicate, LandscapeSource::None, Accounting::Realized).unwrap()
        };
        let etas = ChannelEtas::uniform(1.3).unwrap();
        let spa = mk(ChannelSpec::spa("s", 1.0)).run(Strategy::UeUb, &etas).unwrap();
        let fpa = mk(ChannelSpec::fpa_uniform("f", 1.0)).run(Strategy::UeUb, &etas).unwrap();
        assert!(spa.total.cost <= fpa.total.cost);
        assert_eq!(spa.total.value, fpa.total.value);
    }

    #[test]
    fn missing_landscape_is_a_config_error() {
        let data = synthetic(10, 5);
        let replay = Replay::new(
            &data,
            &standard_channels([0.3, 0.3, 0.4]),
            AssignmentMode::Duplicate,
            LandscapeSource::None,
            Accounting::Realized,
        )
        .unwrap();
        let etas = ChannelEtas::uniform(1.0).unwrap();
        assert!(matches!(replay.run(Strategy::UeNub(Z), &etas), Err(SimError::MissingLandscape(_))));
        assert!(replay.run(Strategy::UeUb, &etas).is_ok());
        let bare = vec![Impression::new("x", 1.0, 1.0, vec![])];
        assert!(matches!(
            Replay::new(&bare, &standard_channels([0.3, 0.3, 0.4]), AssignmentMode::Duplicate, LandscapeSource::Truth, Accounting::Realized),
            Err(SimError::MissingTruth(_))
        ));
    }

    #[test]
    fn expected_spa_mc_matches_eta() {
        let data = synthetic(5000, 6);
        let replay = Replay::new(
            &data,
            &single(ChannelSpec::spa("s", 1.0)),
            AssignmentMode::Duplicate,
            LandscapeSource::Truth,
            Accounting::Expected,
        )
        .unwrap();
        let etas = ChannelEtas::uniform(0.8).unwrap();
        let mc = replay.estimate_channel_mc(Strategy::UeUb, &etas, 0).unwrap();
        assert!((mc - 0.8).abs() < 0.8 * 1e-3, "{mc}");
        // Same quantity through the independent oracle.
        let oracle = fd_marginal_cost(
            |eta| {
                data.iter().fold((0.0, 0.0), |(c, v), imp| {
                    let p = imp.landscape.unwrap();
                    let b = eta * imp.value;
                    (c + p.partial_expectation(b), v + imp.value * p.win_prob(b))
                })
            },
            0.8,
            0.8e-3,
        )
        .unwrap();
        assert!((mc - oracle).abs() < 1e-6 * oracle);
    }

    #[test]
    fn expected_optimum_matches_quadrature() {
        let p = ZieParams::new(0.3, 1.5).unwrap();
        let v = 2.0;
        let n = 200_000;
        let h = v / n as f64;
        let integral: f64 = (0..n)
            .map(|k| {
                let w = (k as f64 + 0.5) * h;
                (v - w) * p.pdf(w) * h
            })
            .sum();
        let exact = clairvoyant_expected_surplus(&p, v);
        assert!((exact - (0.3 * v + integral)).abs() < 1e-8);
    }

    #[test]
    fn cost_match_by_bisection() {
        let data = synthetic(4000, 7);
        let replay = Replay::new(
            &data,
            &standard_channels([0.3, 0.3, 0.4]),
            AssignmentMode::Hash,
            LandscapeSource::Truth,
            Accounting::Expected,
        )
        .unwrap();
        let campaign = Campaign::max_return(500.0).unwrap();
        for s in [Strategy::UeUb, Strategy::UeNub(Z), Strategy::McaeNub(Z)] {
            let run = replay.match_constraint(s, &campaign, (0.01, 50.0), 1e-3).unwrap();
            assert!((run.report.total.cost - 500.0).abs() <= 0.5, "{s}: {}", run.report.total.cost);
        }
        let cmp = replay
            .compare(&[Strategy::UeUb, Strategy::McaeNub(Z)], &Campaign::max_return(1e9).unwrap(), (0.01, 50.0), 1e-3)
            .unwrap();
        assert!(!cmp.all_feasible());
    }

    #[test]
    fn alignment_equalizes_marginal_costs() {
        let data = synthetic(20_000, 8);
        let replay = Replay::new(
            &data,
            &standard_channels([0.3, 0.3, 0.4]),
            AssignmentMode::Hash,
            LandscapeSource::Truth,
            Accounting::Expected,
        )
        .unwrap();
        let (etas, fit) = replay.align(1.0).unwrap();
        assert!(fit.is_some());
        assert!(etas.eta3 < 1.0);
        let report = replay.run(Strategy::McaeNub(Z), &etas).unwrap();
        for ch in &report.channels {
            let mc = ch.mc.unwrap();
            assert!((mc - 1.0).abs() < 0.05, "{}: {mc}", ch.channel);
        }
    }
}
