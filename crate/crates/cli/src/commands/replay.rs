use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use hob::control::write_trace;
use hob::landscape::{DistKind, WinModel};
use hob::simulate::{
    run_streaming, spearman, sweep, CompareRow, Comparison, Impression, LandscapeSource, Replay, ReplayReport, Strategy,
    SweepBase, SweepKind, SweepRow,
};
use serde::{Deserialize, Serialize};

use crate::config::{LandscapeChoice, LoadedConfig};
use crate::error::{CliError, Result};
use crate::inputs::{load_dataset, load_model, predict_all};
use crate::output::{write_atomic, write_csv_rows, write_json};

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: hob::simulate::SimError| e.to_string())
}

/// A loaded config with its dataset and the model predictions it needs.
pub struct Workspace {
    pub loaded: LoadedConfig,
    pub data: Vec<Impression>,
    predictions: BTreeMap<DistKind, Vec<WinModel>>,
}

impl Workspace {
    pub fn open(config: &std::path::Path) -> Result<Self> {
        let loaded = LoadedConfig::load(config)?;
        let mut data = load_dataset(&loaded.dataset_path())?;
        let scale = loaded.config.replay.value_scale;
        if scale != 1.0 {
            for imp in &mut data {
                imp.value *= scale;
            }
        }
        let mut predictions = BTreeMap::new();
        if loaded.config.replay.landscape == LandscapeChoice::Model {
            for kind in loaded.config.model_kinds() {
                let path = loaded.model_path(kind).map_err(CliError::Usage)?;
                let model = load_model(&path)?;
                if model.kind() != kind {
                    return Err(CliError::Usage(format!(
                        "{} holds a {} model, not {kind}",
                        path.display(),
                        model.kind()
                    )));
                }
                predictions.insert(kind, predict_all(&model, &data)?);
            }
        }
        Ok(Self {
            loaded,
            data,
            predictions,
        })
    }

    fn source(&self, kind: Option<DistKind>) -> LandscapeSource<'_> {
        match (kind, self.loaded.config.replay.landscape) {
            (None, _) => LandscapeSource::None,
            (Some(_), LandscapeChoice::Truth) => LandscapeSource::Truth,
            (Some(k), LandscapeChoice::Model) => LandscapeSource::Predicted(&self.predictions[&k]),
        }
    }

    pub fn replay(&self, strategy: Strategy) -> Result<Replay<'_>> {
        let r = &self.loaded.config.replay;
        Ok(Replay::new(
            &self.data,
            &self.loaded.config.channels,
            r.assignment,
            self.source(strategy.dist_kind()),
            r.accounting,
        )?
        .with_n_iter(r.n_iter))
    }

    fn strategy_or_first(&self, s: Option<Strategy>) -> Strategy {
        s.unwrap_or(self.loaded.config.replay.strategies[0])
    }

    /// Strategies grouped by the landscape they shade against.
    fn groups(&self) -> Vec<(Option<DistKind>, Vec<Strategy>)> {
        let mut groups: Vec<(Option<DistKind>, Vec<Strategy>)> = Vec::new();
        for &s in &self.loaded.config.replay.strategies {
            let key = s.dist_kind();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, list)) => list.push(s),
                None => groups.push((key, vec![s])),
            }
        }
        // UE&UB never shades, so it can share any group's replay.
        if groups.len() > 1 {
            if let Some(i) = groups.iter().position(|(k, _)| k.is_none()) {
                let (_, plain) = groups.remove(i);
                groups[0].1.extend(plain);
            }
        }
        groups
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Defaults to the first strategy in the config.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Fixed multiplier; overrides `replay.eta`. Without either the run is
    /// matched to the campaign constraint.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Report path, default `<output_dir>/report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the per-impression outcome log as CSV.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let ws = Workspace::open(&args.config)?;
    let cfg = &ws.loaded.config;
    let strategy = ws.strategy_or_first(args.strategy);
    let replay = ws.replay(strategy)?;
    let report: ReplayReport = match args.eta.or(cfg.replay.eta) {
        Some(eta) => {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(CliError::Usage(format!("--eta must be positive, got {eta}")));
            }
            let (etas, _) = replay.etas_for(strategy, eta)?;
            replay.run(strategy, &etas)?
        }
        None => {
            let b = cfg.bisection;
            replay.match_constraint(strategy, &cfg.campaign, b.bracket, b.tol)?.report
        }
    };
    let out = args.out.clone().unwrap_or_else(|| ws.loaded.output_dir().join("report.json"));
    write_json(&out, &report)?;
    if let Some(path) = &args.outcomes {
        write_csv_rows(path, &replay.outcomes(strategy, &report.etas)?)?;
    }
    println!(
        "{strategy}: eta {:.6} value {:.4} cost {:.4} -> {}",
        report.etas.eta,
        report.total.value,
        report.total.cost,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Report path, default `<output_dir>/compare.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Table path, default `<output_dir>/compare.csv`.
    #[arg(long)]
    pub table: Option<PathBuf>,
}

/// One line of the comparison table: a strategy on one channel, or its
/// `total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub strategy: Strategy,
    pub channel: String,
    pub feasible: bool,
    pub multiplier: Option<f64>,
    pub value: Option<f64>,
    pub cost: Option<f64>,
    pub roi: Option<f64>,
    pub mc: Option<f64>,
    pub surplus_rate: Option<f64>,
    pub delta_value_pct: Option<f64>,
}

pub fn table_rows(cmp: &Comparison) -> Vec<TableRow> {
    let mut out = Vec::new();
    for row in &cmp.rows {
        let Some(run) = &row.run else {
            out.push(TableRow {
                strategy: row.strategy,
                channel: "total".into(),
                feasible: false,
                multiplier: None,
                value: None,
                cost: None,
                roi: None,
                mc: None,
                surplus_rate: None,
                delta_value_pct: None,
            });
            continue;
        };
        let rep = &run.report;
        for c in &rep.channels {
            out.push(TableRow {
                strategy: row.strategy,
                channel: c.channel.clone(),
                feasible: true,
                multiplier: Some(c.multiplier),
                value: Some(c.value),
                cost: Some(c.cost),
                roi: c.roi,
                mc: c.mc,
                surplus_rate: c.surplus_rate,
                delta_value_pct: None,
            });
        }
        out.push(TableRow {
            strategy: row.strategy,
            channel: "total".into(),
            feasible: true,
            multiplier: Some(rep.etas.eta),
            value: Some(rep.total.value),
            cost: Some(rep.total.cost),
            roi: rep.total.roi,
            mc: rep.total.mc,
            surplus_rate: rep.total.surplus_rate,
            delta_value_pct: row.delta_value_pct,
        });
    }
    out
}

fn cell(x: Option<f64>, digits: usize) -> String {
    x.map_or("-".into(), |v| format!("{v:.digits$}"))
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let ws = Workspace::open(&args.config)?;
    let cfg = &ws.loaded.config;
    let b = cfg.bisection;
    let mut rows: Vec<CompareRow> = Vec::new();
    for &s in &cfg.replay.strategies {
        rows.push(ws.replay(s)?.compare_row(s, &cfg.campaign, b.bracket, b.tol)?);
    }
    let cmp = Comparison::new(cfg.campaign, rows);
    let dir = ws.loaded.output_dir();
    let out = args.out.clone().unwrap_or_else(|| dir.join("compare.json"));
    let table = args.table.clone().unwrap_or_else(|| dir.join("compare.csv"));
    write_json(&out, &cmp)?;
    let lines = table_rows(&cmp);
    write_csv_rows(&table, &lines)?;

    println!(
        "{:<12} {:<8} {:>10} {:>12} {:>12} {:>8} {:>8} {:>9}",
        "strategy", "channel", "eta", "value", "cost", "roi", "mc", "delta"
    );
    for l in &lines {
        let delta = l.delta_value_pct.map_or(String::new(), |d| format!("{d:+.2}%"));
        println!(
            "{:<12} {:<8} {:>10} {:>12} {:>12} {:>8} {:>8} {:>9}",
            l.strategy.to_string(),
            l.channel,
            cell(l.multiplier, 4),
            cell(l.value, 2),
            cell(l.cost, 2),
            cell(l.roi, 3),
            cell(l.mc, 3),
            delta
        );
    }
    let infeasible: Vec<String> = cmp
        .rows
        .iter()
        .filter(|r| !r.feasible)
        .map(|r| format!("{}: {}", r.strategy, r.error.as_deref().unwrap_or("infeasible")))
        .collect();
    if infeasible.is_empty() {
        Ok(())
    } else {
        Err(CliError::Infeasible(infeasible.join("; ")))
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// budget_levels, channel_proportions or organic_share.
    #[arg(long)]
    pub experiment: String,
    /// Comma-separated grid: budgets, the shaded channel's share, or the
    /// relative price-noise sigma.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub grid: Vec<f64>,
    /// Seed of the organic-noise transform.
    #[arg(long)]
    pub seed: u64,
    /// Tidy CSV, default `<output_dir>/sweep-<experiment>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON, default `<output_dir>/sweep-<experiment>.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Rank correlation between the grid and one method's value uplift over a
/// baseline, across the feasible grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub method: Strategy,
    pub baseline: Strategy,
    pub points: usize,
    pub spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub experiment: SweepKind,
    pub seed: u64,
    pub grid: Vec<f64>,
    pub infeasible_rows: usize,
    pub trends: Vec<Trend>,
}

pub fn trends(rows: &[SweepRow], strategies: &[Strategy]) -> Vec<Trend> {
    let mut out = Vec::new();
    for &method in strategies.iter().filter(|s| s.aligns()) {
        let kind = method.dist_kind().expect("aligned strategies shade");
        let baseline = if strategies.contains(&Strategy::UeNub(kind)) {
            Strategy::UeNub(kind)
        } else {
            Strategy::UeUb
        };
        let mut xs = Vec::new();
        let mut uplift = Vec::new();
        for r in rows.iter().filter(|r| r.strategy == method) {
            let base = rows.iter().find(|b| b.strategy == baseline && b.x == r.x);
            if let (Some(v), Some(Some(bv))) = (r.value, base.map(|b| b.value)) {
                if bv > 0.0 {
                    xs.push(r.x);
                    uplift.push((v - bv) / bv);
                }
            }
        }
        out.push(Trend {
            method,
            baseline,
            points: xs.len(),
            spearman: spearman(&xs, &uplift),
        });
    }
    out
}

pub fn run_sweep(args: &SweepArgs) -> Result<()> {
    let kind: SweepKind = args.experiment.parse()?;
    let ws = Workspace::open(&args.config)?;
    let cfg = &ws.loaded.config;
    let order = &cfg.replay.strategies;
    let mut rows: Vec<SweepRow> = Vec::new();
    for (dist, strategies) in ws.groups() {
        let base = SweepBase {
            dataset: &ws.data,
            channels: cfg.channels.clone(),
            assignment: cfg.replay.assignment,
            landscapes: ws.source(dist),
            accounting: cfg.replay.accounting,
            n_iter: cfg.replay.n_iter,
            campaign: cfg.campaign,
            strategies,
            bracket: cfg.bisection.bracket,
            tol: cfg.bisection.tol,
            seed: args.seed,
        };
        rows.extend(sweep(kind, &args.grid, &base)?);
    }
    let grid_pos = |x: f64| args.grid.iter().position(|&g| g == x).unwrap_or(usize::MAX);
    let strat_pos = |s: Strategy| order.iter().position(|&o| o == s).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (grid_pos(r.x), strat_pos(r.strategy)));
    // Deltas against the UE&UB row at the same grid point, across groups.
    let bases: Vec<(f64, Option<f64>)> = rows
        .iter()
        .filter(|r| r.strategy == Strategy::UeUb)
        .map(|r| (r.x, r.value))
        .collect();
    for r in &mut rows {
        let base = bases.iter().find(|(x, _)| *x == r.x).and_then(|(_, v)| *v);
        r.delta_value_pct = match (base, r.value) {
            (Some(b), Some(v)) if b > 0.0 => Some(100.0 * (v - b) / b),
            _ => None,
        };
    }

    let summary = SweepSummary {
        experiment: kind,
        seed: args.seed,
        grid: args.grid.clone(),
        infeasible_rows: rows.iter().filter(|r| !r.feasible).count(),
        trends: trends(&rows, order),
    };
    let dir = ws.loaded.output_dir();
    let out = args.out.clone().unwrap_or_else(|| dir.join(format!("sweep-{kind}.csv")));
    let summary_path = args.summary.clone().unwrap_or_else(|| dir.join(format!("sweep-{kind}.json")));
    write_csv_rows(&out, &rows)?;
    write_json(&summary_path, &summary)?;
    for t in &summary.trends {
        println!(
            "{} vs {}: spearman {} over {} points",
            t.method,
            t.baseline,
            cell(t.spearman, 3),
            t.points
        );
    }
    println!("{} rows -> {}", rows.len(), out.display());
    if summary.infeasible_rows > 0 {
        return Err(CliError::Infeasible(format!(
            "{} sweep rows could not meet the constraint",
            summary.infeasible_rows
        )));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PaceArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    /// Starting multiplier.
    #[arg(long, default_value_t = 1.0)]
    pub eta0: f64,
    /// Controller trace CSV, default `<output_dir>/trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

pub fn pace(args: &PaceArgs) -> Result<()> {
    if !(args.eta0 > 0.0 && args.eta0.is_finite()) {
        return Err(CliError::Usage(format!("--eta0 must be positive, got {}", args.eta0)));
    }
    let ws = Workspace::open(&args.config)?;
    let cfg = &ws.loaded.config;
    let strategy = ws.strategy_or_first(args.strategy);
    let replay = ws.replay(strategy)?;
    let report = run_streaming(&replay, strategy, &cfg.campaign, &cfg.control, args.eta0)?;
    let path = args.trace.clone().unwrap_or_else(|| ws.loaded.output_dir().join("trace.csv"));
    write_atomic(&path, |w| Ok(write_trace(&report.trace, w)?))?;
    println!(
        "{strategy}: spent {:.4} of {:.4} over {} periods, value {:.4}, final eta {:.6}",
        report.spend,
        cfg.campaign.budget,
        report.trace.len(),
        report.value,
        report.final_state.eta
    );
    Ok(())
}
