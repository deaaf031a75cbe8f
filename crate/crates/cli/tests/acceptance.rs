//! Acceptance gate: one check per criterion, each printed as a single
//! `[PASS]` / `[FAIL]` line. Runs without the libtest harness so the lines
//! always reach the terminal; the process fails if any check fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hob::control::{bisect_eta, BisectTarget, Campaign, ControlConfig};
use hob::datagen::{generate, split_indices, GeneratorConfig};
use hob::landscape::{
    bce_bid_grid, eval_bce, zie_mle_batch, DistKind, LinearParamModel, TrainConfig, TrainingSample, ZieParams,
};
use hob::mca::{align_eta3, fit_power_law, mc_fpa_uniform, ChannelEtas};
use hob::shading::{optimal_bid, shaded_surplus_rate, surplus, zero_bid_test, DEFAULT_N_ITER, ONLINE_N_ITER};
use hob::simulate::{
    run_streaming, standard_channels, Accounting, AssignmentMode, ChannelSpec, Impression, LandscapeSource, Replay,
    Strategy,
};
use hob::testkit::{
    dual_breakpoint_range, dual_rule_sweep, fd_marginal_cost, grid_optimal_bid, is_unimodal_sequence, log_space, random_fpa_mckp,
    solve_mckp_exhaustive, MckpOutcome,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const Z: DistKind = DistKind::Zie;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(actual: f64, expected: f64, rel: f64) -> bool {
    (actual - expected).abs() <= rel * expected.abs()
}

/// Random landscape and value shared by the shading checks.
fn random_case(rng: &mut ChaCha8Rng) -> (ZieParams, f64) {
    // pi in [0, 0.95], lambda in [0.01, 10], V in (0, 100].
    let pi = rng.random_range(0.0..=0.95);
    let lambda = 10f64.powf(rng.random_range(-2.0..=1.0));
    let value = 100.0 * (1.0 - rng.random::<f64>());
    (ZieParams::new(pi, lambda).unwrap(), value)
}

fn golden_vs_grid() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = 100_000;
    let (mut bad, mut worst_bid, mut worst_gap) = (0, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (p, v) = random_case(&mut rng);
        let d = optimal_bid(&p, v, DEFAULT_N_ITER).unwrap();
        let (gb, gs) = grid_optimal_bid(&p, v, grid);
        let step = v / (grid - 1) as f64;
        let db = (d.bid - gb).abs();
        let gap = if gs > 0.0 { (gs - d.expected_surplus) / gs } else { 0.0 };
        worst_bid = worst_bid.max(db / (1e-3 * v).max(step));
        worst_gap = worst_gap.max(gap);
        if db > (1e-3 * v).max(step) || gap > 1e-6 {
            bad += 1;
        }
    }
    verdict(
        bad == 0,
        format!("1000 cases, {bad} outside; worst |dbid|/allowance {worst_bid:.3}, worst surplus gap {worst_gap:.2e}"),
    )
}

fn unimodality() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut multi, mut disagree, mut boundary) = (0, 0, 0);
    for _ in 0..1000 {
        let (p, v) = random_case(&mut rng);
        let g: Vec<f64> = (0..512)
            .map(|k| surplus(&p, v, (v * k as f64 / 511.0).min(v)).unwrap())
            .collect();
        if !is_unimodal_sequence(&g) {
            multi += 1;
        }
        let d = optimal_bid(&p, v, DEFAULT_N_ITER).unwrap();
        if (d.bid > 0.0) != zero_bid_test(&p, v) {
            // Right at (1 - pi)(1 + lambda V) = 1 the interior optimum sits
            // inside the final golden-section bracket.
            let margin = ((1.0 - p.pi()) * (1.0 + p.lambda() * v) - 1.0).abs();
            if margin < 1e-6 {
                boundary += 1;
            } else {
                disagree += 1;
            }
        }
    }
    verdict(
        multi == 0 && disagree == 0,
        format!("1000 grids: {multi} with + - + pattern; zero-bid test disagreements {disagree} (boundary {boundary})"),
    )
}

fn synthetic(n: usize, seed: u64) -> Vec<Impression> {
    generate(&GeneratorConfig {
        n_samples: n,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap()
}

fn shaded_mc(data: &[Impression]) -> Verdict {
    let replay = Replay::new(
        data,
        &[ChannelSpec::fpa_nonuniform("fpa_nu", 1.0)],
        AssignmentMode::Hash,
        LandscapeSource::Truth,
        Accounting::Expected,
    )
    .unwrap();
    let s = Strategy::UeNub(Z);
    let mut parts = Vec::new();
    let mut pass = true;
    for eta in [0.5, 1.0, 2.0] {
        let lib = replay.estimate_channel_mc(s, &ChannelEtas { eta, eta3: eta }, 0).unwrap();
        let oracle = fd_marginal_cost(
            |e| {
                let (v, c) = replay.value_cost(s, &ChannelEtas { eta: e, eta3: e }).unwrap();
                (c, v)
            },
            eta,
            1e-3 * eta,
        )
        .unwrap();
        pass &= within(lib, eta, 0.05) && within(oracle, eta, 0.05);
        parts.push(format!("eta {eta}: mc {lib:.4} (oracle {oracle:.4})"));
    }
    verdict(pass, format!("{} impressions; {}", data.len(), parts.join(", ")))
}

fn spa_and_uniform_mc(data: &[Impression]) -> Verdict {
    // Second price: expected accounting over ground-truth landscapes.
    let spa = Replay::new(
        data,
        &[ChannelSpec::spa("spa", 1.0)],
        AssignmentMode::Hash,
        LandscapeSource::None,
        Accounting::Expected,
    )
    .unwrap();
    let spa_mc = spa
        .run(Strategy::UeUb, &ChannelEtas { eta: 1.0, eta3: 1.0 })
        .unwrap()
        .channels[0]
        .mc
        .unwrap();

    // Uniform first price on V(eta) ~ eta^2: unit values and prices spread
    // so that #{w <= eta} grows quadratically.
    let n = 100_000;
    let top = 2.0;
    let curve: Vec<Impression> = (0..n)
        .map(|i| Impression::new(format!("p{i}"), 1.0, top * ((i as f64 + 0.5) / n as f64).sqrt(), vec![]))
        .collect();
    let fpa = Replay::new(
        &curve,
        &[ChannelSpec::fpa_uniform("fpa_u", 1.0)],
        AssignmentMode::Hash,
        LandscapeSource::None,
        Accounting::Realized,
    )
    .unwrap();
    let eta = 1.0;
    let fd = fpa.run(Strategy::UeUb, &ChannelEtas { eta, eta3: eta }).unwrap().channels[0].mc.unwrap();
    let points: Vec<(f64, f64)> = [0.8, 0.9, 1.0, 1.1, 1.25]
        .iter()
        .map(|&e| (e, fpa.value_cost(Strategy::UeUb, &ChannelEtas { eta: e, eta3: e }).unwrap().0))
        .collect();
    let fit = fit_power_law(&points).unwrap();
    let analytic = mc_fpa_uniform(eta, &fit).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let f = hob::mca::PowerLawFit::new(rng.random_range(0.1..10.0), rng.random_range(0.05..5.0)).unwrap();
        let e = rng.random_range(0.01..10.0);
        let back = mc_fpa_uniform(align_eta3(e, &f).unwrap(), &f).unwrap();
        worst = worst.max((back - e).abs() / e);
    }
    verdict(
        within(spa_mc, 1.0, 0.05) && within(fd, 1.5 * eta, 0.05) && within(analytic, 1.5 * eta, 0.05) && worst <= 1e-12,
        format!(
            "spa mc {spa_mc:.4} at eta 1; fpa+u fd mc {fd:.4}, fitted b {:.4} -> {analytic:.4} (want 1.5); align round trip worst rel {worst:.1e}",
            fit.b
        ),
    )
}

fn mle_and_gradient() -> Verdict {
    let truth = ZieParams::new(0.3, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples: Vec<f64> = (0..100_000).map(|_| truth.sample(&mut rng)).collect();
    let fit = zie_mle_batch(&samples).unwrap();
    let mle_ok = (fit.pi() - 0.3).abs() <= 0.01 && (fit.lambda() - 2.0).abs() <= 0.05;

    let dim = 3;
    let features: Vec<Vec<f64>> = (0..200).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let prices: Vec<f64> = (0..200).map(|_| truth.sample(&mut rng)).collect();
    let batch: Vec<TrainingSample<'_>> = features
        .iter()
        .zip(&prices)
        .map(|(x, &w)| TrainingSample { features: x, price: w })
        .collect();
    let mut worst = 0.0f64;
    for kind in DistKind::ALL {
        let mut model = LinearParamModel::init_from_prices(kind, dim, &prices, 1e-6);
        for head in model.heads_mut() {
            for w in head.iter_mut() {
                *w += rng.random_range(-0.3..0.3);
            }
        }
        let (_, grad) = model.loss_and_grad(&batch);
        let h = 1e-6;
        for (hi, head) in grad.iter().enumerate() {
            for (wi, &g) in head.iter().enumerate() {
                let mut plus = model.clone();
                plus.heads_mut()[hi][wi] += h;
                let mut minus = model.clone();
                minus.heads_mut()[hi][wi] -= h;
                let fd = (plus.loss_and_grad(&batch).0 - minus.loss_and_grad(&batch).0) / (2.0 * h);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
    }
    verdict(
        mle_ok && worst <= 1e-4,
        format!(
            "pi {:.4} lambda {:.4} from 1e5 samples; worst gradient rel error {worst:.1e} over 4 kinds",
            fit.pi(),
            fit.lambda()
        ),
    )
}

fn model_ordering() -> Verdict {
    let data = synthetic(100_000, 6);
    let (train_idx, test_idx) = split_indices(data.len(), 0.2, 6);
    let train: Vec<TrainingSample<'_>> = train_idx
        .iter()
        .map(|&i| TrainingSample { features: &data[i].features, price: data[i].winning_price })
        .collect();
    let prices: Vec<f64> = test_idx.iter().map(|&i| data[i].winning_price).collect();
    let values: Vec<f64> = test_idx.iter().map(|&i| data[i].value).collect();
    let grid = bce_bid_grid(&prices);
    let cfg = TrainConfig {
        seed: 6,
        ..TrainConfig::default()
    };
    let mut rows = Vec::new();
    for kind in DistKind::ALL {
        let (model, _) = LinearParamModel::train(kind, &train, &cfg).unwrap();
        let preds: Vec<_> = test_idx.iter().map(|&i| model.predict(&data[i].features).unwrap()).collect();
        let bce = eval_bce(&preds, &prices, &grid).unwrap();
        let rate = shaded_surplus_rate(&preds, &values, &prices, 1.0, DEFAULT_N_ITER).unwrap().unwrap();
        rows.push((kind, bce, rate));
    }
    let zie = rows.iter().find(|r| r.0 == Z).copied().unwrap();
    let exp = rows.iter().find(|r| r.0 == DistKind::Exponential).copied().unwrap();
    let others = rows.iter().filter(|r| r.0 != Z);
    let best = others.clone().all(|r| zie.1 < r.1 && zie.2 > r.2);
    let gap = 100.0 * (zie.2 - exp.2);
    let table: Vec<String> = rows
        .iter()
        .map(|(k, b, r)| format!("{k} bce {b:.4} sr {:.2}%", 100.0 * r))
        .collect();
    verdict(best && gap >= 10.0, format!("{}; zie - exp {gap:.2} pp", table.join(", ")))
}

fn matched_comparison(data: &[Impression]) -> Verdict {
    let replay = Replay::new(
        data,
        &standard_channels([0.3, 0.3, 0.4]),
        AssignmentMode::Hash,
        LandscapeSource::Truth,
        Accounting::Expected,
    )
    .unwrap();
    let target = replay.value_cost(Strategy::UeUb, &ChannelEtas { eta: 1.0, eta3: 1.0 }).unwrap().1;
    let campaign = Campaign::max_return(target).unwrap();
    let cmp = replay
        .compare(&[Strategy::UeUb, Strategy::McaeNub(Z)], &campaign, (1e-3, 1e3), 1e-3)
        .unwrap();
    let (Some(base), Some(mcae)) = (cmp.rows[0].run.as_ref(), cmp.rows[1].run.as_ref()) else {
        return verdict(false, format!("constraint not matched: {:?}", cmp.rows.iter().map(|r| &r.error).collect::<Vec<_>>()));
    };
    let matched = [base, mcae].iter().all(|r| within(r.report.total.cost, target, 0.01));
    let mcs: Vec<f64> = mcae.report.channels.iter().filter_map(|c| c.mc).collect();
    let (lo, hi) = mcs.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &m| (l.min(m), h.max(m)));
    let agree = mcs.len() == 3 && hi / lo - 1.0 <= 0.10;
    let uplift = 100.0 * (mcae.report.total.value / base.report.total.value - 1.0);
    verdict(
        matched && agree && mcae.report.total.value > base.report.total.value,
        format!(
            "target cost {target:.1}: UE&UB {:.1}/{:.1}, MCAE&NUB-Z {:.1}/{:.1} (value/cost, {uplift:+.2}%); aligned mc {}",
            base.report.total.value,
            base.report.total.cost,
            mcae.report.total.value,
            mcae.report.total.cost,
            mcs.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join("/")
        ),
    )
}

fn duality_gap() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut weak_violations, mut misses) = (f64::INFINITY, 0, 0);
    for _ in 0..50 {
        let inst = random_fpa_mckp(&mut rng, 10, 4);
        let MckpOutcome::Optimal(opt) = solve_mckp_exhaustive(&inst).unwrap() else {
            misses += 1;
            continue;
        };
        // 200 points spanning the multipliers where any choice can change.
        let Some((lo, hi)) = dual_breakpoint_range(&inst) else {
            misses += 1;
            continue;
        };
        let etas = log_space(0.99 * lo, 1.01 * hi, 200);
        for &eta in &etas {
            let point = dual_rule_sweep(&inst, &[eta]);
            if point.is_some_and(|p| p.total_value > opt.total_value) {
                weak_violations += 1;
            }
        }
        match dual_rule_sweep(&inst, &etas) {
            Some(p) if opt.total_value > 0.0 => worst = worst.min(p.total_value / opt.total_value),
            Some(_) => {}
            None => misses += 1,
        }
    }
    verdict(
        misses == 0 && weak_violations == 0 && worst >= 0.95,
        format!("50 instances: worst dual/optimum {:.2}%, weak duality violations {weak_violations}", 100.0 * worst),
    )
}

fn stationary_stream(n: usize) -> Vec<Impression> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    (0..n)
        .map(|i| {
            let p = ZieParams::new(rng.random_range(0.0..0.5), rng.random_range(0.5..2.0)).unwrap();
            let w = p.sample(&mut rng);
            Impression::new(format!("s{i}"), rng.random_range(0.1..2.0), w, vec![]).with_landscape(p)
        })
        .collect()
}

fn control() -> Verdict {
    let data = stationary_stream(160_000);
    let budget = 10_000.0;
    let campaign = Campaign::max_return(budget).unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    let realized = Replay::new(
        &data,
        &standard_channels([0.3, 0.3, 0.4]),
        AssignmentMode::Hash,
        LandscapeSource::Truth,
        Accounting::Realized,
    )
    .unwrap()
    .with_n_iter(ONLINE_N_ITER);
    for strategy in [Strategy::UeUb, Strategy::McaeNub(Z)] {
        let out = run_streaming(&realized, strategy, &campaign, &ControlConfig::default(), 1.0).unwrap();
        pass &= out.trace.len() == 24 && within(out.spend, budget, 0.02);
        parts.push(format!("{strategy} pid spend {:.1}", out.spend));
    }
    let expected = Replay::new(
        &data,
        &standard_channels([0.3, 0.3, 0.4]),
        AssignmentMode::Hash,
        LandscapeSource::Truth,
        Accounting::Expected,
    )
    .unwrap();
    for strategy in [Strategy::UeUb, Strategy::UeNub(Z)] {
        let run = bisect_eta(
            |eta| expected.value_cost(strategy, &ChannelEtas { eta, eta3: eta }).unwrap(),
            BisectTarget::Cost { target: budget },
            (1e-3, 1e3),
            1e-3,
        )
        .unwrap();
        pass &= within(run.cost, budget, 1e-3);
        parts.push(format!("{strategy} bisection cost {:.2}", run.cost));
    }
    verdict(pass, format!("budget {budget}: {}", parts.join(", ")))
}

fn pipeline(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let hob = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_hob"))
            .args(args)
            .current_dir(dir)
            .output()
            .map_err(|e| e.to_string())?;
        match out.status.code() {
            Some(0) => Ok(()),
            code => Err(format!("hob {args:?} exited {code:?}: {}", String::from_utf8_lossy(&out.stderr))),
        }
    };
    hob(&["datagen", "--n", "20000", "--dim", "8", "--seed", "10", "--out", "data.jsonl"])?;
    hob(&["fit", "--data", "data.jsonl", "--dist", "zie", "--epochs", "5", "--seed", "10", "--out-dir", "fit"])?;
    std::fs::write(
        dir.join("run.toml"),
        "[paths]\ndataset = \"data.jsonl\"\nmodels = { zie = \"fit/model-zie.txt\" }\noutput_dir = \"out\"\n\n\
         [campaign]\nbudget = 600\nobjective = \"max_return\"\n\n[bisection]\ntol = 0.01\n",
    )
    .map_err(|e| e.to_string())?;
    hob(&["compare", "--config", "run.toml"])?;
    ["data.jsonl", "fit/metrics.json", "fit/model-zie.txt", "out/compare.json", "out/compare.csv"]
        .iter()
        .map(|f| {
            std::fs::read(dir.join(f))
                .map(|b| (f.to_string(), b))
                .map_err(|e| format!("{f}: {e}"))
        })
        .collect()
}

fn determinism() -> Verdict {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (pipeline(a.path()), pipeline(b.path())) {
        (Ok(x), Ok(y)) => {
            let differing: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p.1 != q.1).map(|(p, _)| p.0.as_str()).collect();
            let bytes: usize = x.iter().map(|f| f.1.len()).sum();
            verdict(
                differing.is_empty(),
                format!("{} files ({bytes} bytes) compared; differing: {differing:?}", x.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => verdict(false, e),
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        // Keeps `cargo test -- --list` working without the libtest harness.
        return ExitCode::SUCCESS;
    }
    let data = synthetic(100_000, 3);
    type Check<'a> = (&'static str, &'static str, Option<Duration>, Box<dyn Fn() -> Verdict + 'a>);
    let checks: Vec<Check<'_>> = vec![
        ("AC1", "golden-section matches grid oracle", Some(Duration::from_secs(5)), Box::new(golden_vs_grid)),
        ("AC2", "surplus unimodality and zero-bid test", None, Box::new(unimodality)),
        ("AC3", "shaded first-price MC equals eta", Some(Duration::from_secs(30)), Box::new(|| shaded_mc(&data))),
        ("AC4", "second-price and uniform first-price MC", None, Box::new(|| spa_and_uniform_mc(&data))),
        ("AC5", "ZIE MLE recovery and model gradients", None, Box::new(mle_and_gradient)),
        ("AC6", "ZIE leads BCE and surplus rate", Some(Duration::from_secs(300)), Box::new(model_ordering)),
        ("AC7", "aligned multi-channel replay at matched cost", None, Box::new(|| matched_comparison(&data))),
        ("AC8", "dual rule against exhaustive MCKP", None, Box::new(duality_gap)),
        ("AC9", "PID pacing and cost bisection", None, Box::new(control)),
        ("AC10", "pipeline reports are byte-identical", None, Box::new(determinism)),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in &checks {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let in_time = budget.is_none_or(|b| took <= b);
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let limit = budget.map_or(String::new(), |b| format!(" (limit {}s)", b.as_secs()));
        println!(
            "[{}] {id} {name}: {} [{:.2}s{limit}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
