//! Synthetic impression logs and dataset I/O.
//!
//! Each sample draws features `x ~ N(0, I)` and a value `v ~ N(0, 1)` (made
//! nonnegative), projects `x` through a fixed random matrix `W*` to
//! `(theta_raw, lambda_raw)`, adds Gaussian noise, and draws the winning
//! price from `ZIE(sigmoid(theta), softplus(lambda_raw))`.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::landscape::{ZieParams, PI_CLAMP};
use crate::simulate::Impression;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {detail}")]
    Schema { line: usize, detail: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueMode {
    /// `max(v, 0)`.
    Clamp,
    /// `|v|`.
    Abs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_samples: usize,
    pub feature_dim: usize,
    pub seed: u64,
    pub noise_theta: f64,
    pub noise_lambda: f64,
    pub value_mode: ValueMode,
    /// Entries of `W*` are `N(0, (projection_scale^2) / feature_dim)`.
    pub projection_scale: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_samples: 100_000,
            feature_dim: 20,
            seed: 0,
            noise_theta: 0.3,
            noise_lambda: 0.3,
            value_mode: ValueMode::Clamp,
            projection_scale: 1.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1".into());
        }
        for (name, x) in [
            ("noise_theta", self.noise_theta),
            ("noise_lambda", self.noise_lambda),
            ("projection_scale", self.projection_scale),
        ] {
            if !(x >= 0.0 && x.is_finite()) {
                return bad(format!("{name} must be finite and nonnegative, got {x}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `W*` as `feature_dim` rows of `[theta, lambda]` weights, from stream 0 of
/// the seed.
pub fn projection(config: &GeneratorConfig) -> Vec<[f64; 2]> {
    let mut rng = stream_rng(config.seed, 0);
    let sd = config.projection_scale / (config.feature_dim as f64).sqrt();
    (0..config.feature_dim)
        .map(|_| [sd * normal(&mut rng), sd * normal(&mut rng)])
        .collect()
}

/// SHA-256 over the little-endian bytes of `W*` in row-major order.
pub fn projection_digest(w: &[[f64; 2]]) -> String {
    let mut h = Sha256::new();
    for row in w {
        for x in row {
            h.update(x.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

fn sample(config: &GeneratorConfig, w: &[[f64; 2]], i: usize) -> Impression {
    let mut rng = stream_rng(config.seed, i as u64 + 1);
    let features: Vec<f64> = (0..config.feature_dim).map(|_| normal(&mut rng)).collect();
    let raw_v = normal(&mut rng);
    let value = match config.value_mode {
        ValueMode::Clamp => raw_v.max(0.0),
        ValueMode::Abs => raw_v.abs(),
    };
    let (mut theta, mut lam) = (0.0, 0.0);
    for (x, row) in features.iter().zip(w) {
        theta += x * row[0];
        lam += x * row[1];
    }
    theta += config.noise_theta * normal(&mut rng);
    lam += config.noise_lambda * normal(&mut rng);
    let pi = sigmoid(theta).clamp(PI_CLAMP, 1.0 - PI_CLAMP);
    let lambda = softplus(lam).max(1e-12);
    let u: f64 = rng.random();
    let price = if u < pi {
        0.0
    } else {
        let e: f64 = Exp1.sample(&mut rng);
        e / lambda
    };
    let landscape = ZieParams::new(pi, lambda).expect("clamped into range");
    Impression::new(i.to_string(), value, price, features).with_landscape(landscape)
}

/// Sample `i` depends only on `(seed, i)`, so the output is independent of
/// thread scheduling.
pub fn generate(config: &GeneratorConfig) -> Result<Vec<Impression>> {
    config.validate()?;
    let w = projection(config);
    Ok((0..config.n_samples)
        .into_par_iter()
        .map(|i| sample(config, &w, i))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTransformConfig {
    pub relative_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseTransformConfig {
    fn default() -> Self {
        Self {
            relative_sigma: 0.7,
            seed: 0,
        }
    }
}

/// `w' = max(0, w + N(0, (relative_sigma w)^2))`, turning low-priced
/// impressions into organic (zero-price) ones. Ground-truth landscapes are
/// dropped since they no longer describe the prices.
pub fn organicize(dataset: &[Impression], config: &NoiseTransformConfig) -> Result<Vec<Impression>> {
    if !(config.relative_sigma >= 0.0 && config.relative_sigma.is_finite()) {
        return Err(DataError::InvalidConfig(format!(
            "relative_sigma must be finite and nonnegative, got {}",
            config.relative_sigma
        )));
    }
    Ok(dataset
        .par_iter()
        .enumerate()
        .map(|(i, imp)| {
            let mut out = imp.clone();
            out.landscape = None;
            if config.relative_sigma > 0.0 && imp.winning_price > 0.0 {
                let mut rng = stream_rng(config.seed, i as u64 + 1);
                let sd = config.relative_sigma * imp.winning_price;
                out.winning_price = (imp.winning_price + sd * normal(&mut rng)).max(0.0);
            }
            out
        })
        .collect())
}

/// Provenance sidecar written next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub seed: u64,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub config: GeneratorConfig,
    pub config_sha256: String,
    pub projection_sha256: String,
    pub zero_fraction: f64,
}

impl Manifest {
    pub fn new(config: &GeneratorConfig, dataset: &[Impression]) -> Self {
        Self {
            generator: "hob-datagen v1".into(),
            seed: config.seed,
            n_samples: dataset.len(),
            feature_dim: config.feature_dim,
            config: config.clone(),
            config_sha256: config.digest(),
            projection_sha256: projection_digest(&projection(config)),
            zero_fraction: zero_fraction(dataset),
        }
    }
}

pub fn zero_fraction(dataset: &[Impression]) -> f64 {
    if dataset.is_empty() {
        return 0.0;
    }
    dataset.iter().filter(|i| i.winning_price == 0.0).count() as f64 / dataset.len() as f64
}

pub fn write_jsonl<W: Write>(dataset: &[Impression], mut out: W) -> Result<()> {
    for imp in dataset {
        serde_json::to_writer(&mut out, imp)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one impression per line (blank lines skipped) and checks values,
/// prices and a consistent feature dimension.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Impression>> {
    let mut out: Vec<Impression> = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let imp: Impression = serde_json::from_str(&line).map_err(|e| DataError::Schema {
            line: n + 1,
            detail: e.to_string(),
        })?;
        check(&imp, out.first(), n + 1)?;
        out.push(imp);
    }
    Ok(out)
}

fn check(imp: &Impression, first: Option<&Impression>, line: usize) -> Result<()> {
    imp.validate().map_err(|e| DataError::Schema {
        line,
        detail: e.to_string(),
    })?;
    if let Some(f) = first {
        if f.features.len() != imp.features.len() {
            return Err(DataError::Schema {
                line,
                detail: format!("{} features, expected {}", imp.features.len(), f.features.len()),
            });
        }
    }
    Ok(())
}

/// CSV with header `id,channel,value,winning_price,f0,f1,...`. Ground-truth
/// landscapes are not stored.
pub fn write_csv<W: Write>(dataset: &[Impression], out: W) -> Result<()> {
    let dim = dataset.first().map_or(0, |i| i.features.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "channel".into(), "value".into(), "winning_price".into()];
    header.extend((0..dim).map(|k| format!("f{k}")));
    w.write_record(&header)?;
    for imp in dataset {
        let mut rec = vec![
            imp.id.clone(),
            imp.channel.clone().unwrap_or_default(),
            imp.value.to_string(),
            imp.winning_price.to_string(),
        ];
        rec.extend(imp.features.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the [`write_csv`] layout. `channel` is optional and may be empty;
/// feature columns are every `f<k>` column in header order.
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<Impression>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let schema = |detail: String| DataError::Schema { line: 1, detail };
    let id_col = col("id").ok_or_else(|| schema("missing column id".into()))?;
    let value_col = col("value").ok_or_else(|| schema("missing column value".into()))?;
    let price_col = col("winning_price").ok_or_else(|| schema("missing column winning_price".into()))?;
    let channel_col = col("channel");
    let feature_cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| h.len() > 1 && h.starts_with('f') && h[1..].chars().all(|c| c.is_ascii_digit()))
        .map(|(i, _)| i)
        .collect();
    let mut out: Vec<Impression> = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|e| DataError::Schema {
                    line,
                    detail: format!("column {}: {e}", &header[c]),
                })
        };
        let mut imp = Impression::new(
            rec.get(id_col).unwrap_or_default(),
            num(value_col)?,
            num(price_col)?,
            feature_cols.iter().map(|&c| num(c)).collect::<Result<_>>()?,
        );
        if let Some(ch) = channel_col.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
            imp.channel = Some(ch.to_string());
        }
        check(&imp, out.first(), line)?;
        out.push(imp);
    }
    Ok(out)
}

/// Deterministic train/held-out split: a seeded shuffle, with the last
/// `held_out` fraction of the shuffled indices held out. Both lists are
/// returned sorted.
pub fn split_indices(n: usize, held_out: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64) * held_out.clamp(0.0, 1.0)).round() as usize;
    let mut test = idx.split_off(n - n_test);
    idx.sort_unstable();
    test.sort_unstable();
    (idx, test)
}
