use std::path::PathBuf;

use clap::Args;
use hob::datagen::split_indices;
use hob::landscape::{bce_bid_grid, eval_bce, DistKind, TrainConfig, TrainingSample, LinearParamModel, BCE_GRID_POINTS};
use hob::shading::{shaded_surplus_rate, DEFAULT_N_ITER};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::inputs::{file_sha256, load_dataset, predict_all};
use crate::output::{write_atomic, write_json};

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// zie, exp, lognormal, gamma or all.
    #[arg(long, default_value = "all")]
    pub dist: String,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Mini-batch size; 0 trains full-batch.
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    /// Held-out fraction used for the metrics.
    #[arg(long, default_value_t = 0.2)]
    pub split: f64,
    #[arg(long)]
    pub seed: u64,
    /// Multiplier applied to values when scoring surplus.
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value = "fit")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub dist: DistKind,
    pub model_file: String,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: Option<usize>,
    pub train_nll: f64,
    pub test_nll: f64,
    pub bce: f64,
    pub surplus_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    pub dataset_sha256: String,
    pub seed: u64,
    pub split: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub eta: f64,
    pub bce_grid_points: usize,
    pub models: Vec<ModelMetrics>,
}

pub fn model_file_name(kind: DistKind) -> String {
    format!("model-{kind}.txt")
}

fn kinds(arg: &str) -> Result<Vec<DistKind>> {
    if arg.eq_ignore_ascii_case("all") {
        return Ok(DistKind::ALL.to_vec());
    }
    arg.split(',')
        .map(|s| s.trim().parse::<DistKind>().map_err(CliError::Usage))
        .collect()
}

pub fn run(args: &FitArgs) -> Result<()> {
    let kinds = kinds(&args.dist)?;
    if !(args.split > 0.0 && args.split < 1.0) {
        return Err(CliError::Usage(format!("--split must be in (0, 1), got {}", args.split)));
    }
    if !(args.lr > 0.0 && args.lr.is_finite()) {
        return Err(CliError::Usage(format!("--lr must be positive, got {}", args.lr)));
    }
    if !(args.eta > 0.0 && args.eta.is_finite()) {
        return Err(CliError::Usage(format!("--eta must be positive, got {}", args.eta)));
    }
    let data = load_dataset(&args.data)?;
    let (train_idx, test_idx) = split_indices(data.len(), args.split, args.seed);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(CliError::Usage(format!(
            "split {} of {} impressions leaves an empty side",
            args.split,
            data.len()
        )));
    }
    let sample = |i: &usize| TrainingSample {
        features: &data[*i].features,
        price: data[*i].winning_price,
    };
    let train: Vec<TrainingSample<'_>> = train_idx.iter().map(sample).collect();
    let test: Vec<TrainingSample<'_>> = test_idx.iter().map(sample).collect();
    let held_out: Vec<_> = test_idx.iter().map(|&i| data[i].clone()).collect();
    let prices: Vec<f64> = held_out.iter().map(|d| d.winning_price).collect();
    let values: Vec<f64> = held_out.iter().map(|d| d.value).collect();
    let grid = bce_bid_grid(&prices);
    let cfg = TrainConfig {
        learning_rate: args.lr,
        epochs: args.epochs,
        batch_size: (args.batch_size > 0).then_some(args.batch_size),
        seed: args.seed,
        ..TrainConfig::default()
    };

    let mut models = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let (model, report) = LinearParamModel::train(kind, &train, &cfg)?;
        let preds = predict_all(&model, &held_out)?;
        let metrics = ModelMetrics {
            dist: kind,
            model_file: model_file_name(kind),
            epochs: args.epochs,
            learning_rate: args.lr,
            batch_size: cfg.batch_size,
            train_nll: *report.losses.last().expect("losses hold the initial value"),
            test_nll: model.mean_nll(&test)?,
            bce: eval_bce(&preds, &prices, &grid)?,
            surplus_rate: shaded_surplus_rate(&preds, &values, &prices, args.eta, DEFAULT_N_ITER)
                .map_err(|e| CliError::Sim(e.into()))?,
        };
        log::info!("{kind}: {metrics:?}");
        let path = args.out_dir.join(&metrics.model_file);
        write_atomic(&path, |w| {
            use std::io::Write;
            w.write_all(model.to_text().as_bytes()).map_err(|e| CliError::io(&path, e))
        })?;
        models.push(metrics);
    }

    let metrics = FitMetrics {
        dataset_sha256: file_sha256(&args.data)?,
        seed: args.seed,
        split: args.split,
        n_train: train.len(),
        n_test: test.len(),
        eta: args.eta,
        bce_grid_points: BCE_GRID_POINTS,
        models,
    };
    write_json(&args.out_dir.join("metrics.json"), &metrics)?;
    println!("{:<10} {:>10} {:>10} {:>8} {:>8}", "dist", "train_nll", "test_nll", "bce", "surplus");
    for m in &metrics.models {
        let rate = m.surplus_rate.map_or("-".to_string(), |r| format!("{:.2}%", 100.0 * r));
        println!(
            "{:<10} {:>10.4} {:>10.4} {:>8.4} {:>8}",
            m.dist.name(),
            m.train_nll,
            m.test_nll,
            m.bce,
            rate
        );
    }
    Ok(())
}
