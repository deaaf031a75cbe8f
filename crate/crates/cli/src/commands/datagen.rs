use std::path::PathBuf;

use clap::{Args, ValueEnum};
use hob::datagen::{generate, organicize, zero_fraction, GeneratorConfig, Manifest, NoiseTransformConfig, ValueMode};

use crate::error::Result;
use crate::inputs::{load_dataset, save_dataset};
use crate::output::write_json;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ValueModeArg {
    Clamp,
    Abs,
}

#[derive(Debug, Args)]
pub struct DatagenArgs {
    /// Number of impressions.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Feature dimension.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long)]
    pub seed: u64,
    /// Std of the Gaussian noise on the zero-probability logit.
    #[arg(long, default_value_t = 0.3)]
    pub noise_theta: f64,
    /// Std of the Gaussian noise on the raw exponential rate.
    #[arg(long, default_value_t = 0.3)]
    pub noise_lambda: f64,
    /// How negative normal draws become values.
    #[arg(long, value_enum, default_value_t = ValueModeArg::Clamp)]
    pub value_mode: ValueModeArg,
    /// Output dataset; `.csv` writes CSV, anything else JSONL. The manifest
    /// goes next to it as `<out>.manifest.json`.
    #[arg(long, default_value = "data.jsonl")]
    pub out: PathBuf,
}

pub fn manifest_path(out: &std::path::Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn run(args: &DatagenArgs) -> Result<()> {
    let config = GeneratorConfig {
        n_samples: args.n as usize,
        feature_dim: args.dim as usize,
        seed: args.seed,
        noise_theta: args.noise_theta,
        noise_lambda: args.noise_lambda,
        value_mode: match args.value_mode {
            ValueModeArg::Clamp => ValueMode::Clamp,
            ValueModeArg::Abs => ValueMode::Abs,
        },
        ..GeneratorConfig::default()
    };
    let data = generate(&config)?;
    let manifest = Manifest::new(&config, &data);
    save_dataset(&args.out, &data)?;
    write_json(&manifest_path(&args.out), &manifest)?;
    println!(
        "wrote {} impressions to {} (zero fraction {:.4})",
        data.len(),
        args.out.display(),
        manifest.zero_fraction
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct OrganicizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Noise std as a fraction of each winning price.
    #[arg(long, default_value_t = 0.7)]
    pub sigma: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run_organicize(args: &OrganicizeArgs) -> Result<()> {
    let data = load_dataset(&args.data)?;
    let noisy = organicize(
        &data,
        &NoiseTransformConfig {
            relative_sigma: args.sigma,
            seed: args.seed,
        },
    )?;
    save_dataset(&args.out, &noisy)?;
    println!(
        "zero fraction {:.4} -> {:.4}",
        zero_fraction(&data),
        zero_fraction(&noisy)
    );
    Ok(())
}
