//! Linear per-impression landscape model.
//!
//! Each distribution kind is parameterised by at most two unconstrained
//! "heads", each an affine function of the impression features:
//!
//! | kind      | head 0          | head 1         |
//! |-----------|-----------------|----------------|
//! | zie       | logit of `pi`   | `ln lambda`    |
//! | exp       | `ln rate`       | -              |
//! | lognormal | `mu`            | `ln sigma`     |
//! | gamma     | `ln shape`      | `ln rate`      |
//!
//! Training is plain mini-batch gradient descent on the mean NLL.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::baseline::{fit_baseline, BaselineFitConfig, DistKind, WinModel};
use super::{LandscapeError, Result, ZieParams, PI_CLAMP};

const LOG_RATE_BOUND: f64 = 50.0;
const LOG_SHAPE_BOUND: f64 = 20.0;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy)]
pub struct TrainingSample<'a> {
    pub features: &'a [f64],
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Price substituted for zeros by the atom-free kinds.
    pub zero_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            epochs: 30,
            batch_size: Some(512),
            seed: 0,
            zero_eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training NLL; entry 0 is the initialization, entry `e` follows epoch `e`.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParamModel {
    kind: DistKind,
    dim: usize,
    zero_eps: f64,
    /// One weight vector per head, `dim` feature weights followed by the bias.
    heads: Vec<Vec<f64>>,
}

fn head_count(kind: DistKind) -> usize {
    match kind {
        DistKind::Exponential => 1,
        _ => 2,
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl LinearParamModel {
    pub fn zeros(kind: DistKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            zero_eps: TrainConfig::default().zero_eps,
            heads: vec![vec![0.0; dim + 1]; head_count(kind)],
        }
    }

    /// Zero feature weights with biases at the batch MLE of `prices`, or at
    /// neutral values when the batch MLE is undefined.
    pub fn init_from_prices(kind: DistKind, dim: usize, prices: &[f64], zero_eps: f64) -> Self {
        let mut model = Self::zeros(kind, dim);
        model.zero_eps = zero_eps;
        let cfg = BaselineFitConfig {
            zero_eps,
            ..Default::default()
        };
        let biases = match fit_baseline(kind, prices, &cfg) {
            Ok(WinModel::Zie(p)) => vec![logit(p.pi()), p.lambda().ln()],
            Ok(WinModel::Exponential { rate }) => vec![rate.ln()],
            Ok(WinModel::LogNormal { mu, sigma }) => vec![mu, sigma.ln()],
            Ok(WinModel::Gamma { shape, rate }) => vec![shape.ln(), rate.ln()],
            Err(_) => vec![0.0; head_count(kind)],
        };
        for (head, b) in model.heads.iter_mut().zip(biases) {
            head[dim] = b;
        }
        model
    }

    pub fn from_heads(kind: DistKind, dim: usize, heads: Vec<Vec<f64>>) -> Result<Self> {
        if heads.len() != head_count(kind) {
            return Err(LandscapeError::ModelFormat(format!(
                "{kind} needs {} weight vectors, got {}",
                head_count(kind),
                heads.len()
            )));
        }
        if let Some(h) = heads.iter().find(|h| h.len() != dim + 1) {
            return Err(LandscapeError::DimensionMismatch {
                expected: dim + 1,
                got: h.len(),
            });
        }
        Ok(Self {
            kind,
            dim,
            zero_eps: TrainConfig::default().zero_eps,
            heads,
        })
    }

    pub fn kind(&self) -> DistKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> &[Vec<f64>] {
        &self.heads
    }

    pub fn heads_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.heads
    }

    fn raw(&self, x: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (o, head) in out.iter_mut().zip(&self.heads) {
            let mut z = head[self.dim];
            for (w, xi) in head[..self.dim].iter().zip(x) {
                z += w * xi;
            }
            *o = z;
        }
        out
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(LandscapeError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<WinModel> {
        self.check_dim(x)?;
        let z = self.raw(x);
        Ok(match self.kind {
            DistKind::Zie => {
                let pi = sigmoid(z[0]).clamp(PI_CLAMP, 1.0 - PI_CLAMP);
                let lambda = z[1].clamp(-LOG_RATE_BOUND, LOG_RATE_BOUND).exp();
                WinModel::Zie(ZieParams::new(pi, lambda)?)
            }
            DistKind::Exponential => WinModel::Exponential {
                rate: z[0].clamp(-LOG_RATE_BOUND, LOG_RATE_BOUND).exp(),
            },
            DistKind::LogNormal => WinModel::LogNormal {
                mu: z[0],
                sigma: z[1].clamp(1e-6f64.ln(), LOG_SHAPE_BOUND).exp(),
            },
            DistKind::Gamma => WinModel::Gamma {
                shape: z[0].clamp(-LOG_SHAPE_BOUND, LOG_SHAPE_BOUND).exp(),
                rate: z[1].clamp(-LOG_RATE_BOUND, LOG_RATE_BOUND).exp(),
            },
        })
    }

    pub fn predict_zie(&self, x: &[f64]) -> Result<ZieParams> {
        match self.predict(x)? {
            WinModel::Zie(p) => Ok(p),
            other => Err(LandscapeError::InvalidModel {
                kind: other.kind(),
                detail: "model does not predict ZIE parameters".into(),
            }),
        }
    }

    /// NLL of one price and its gradient with respect to the raw head outputs.
    fn nll_and_head_grad(&self, z: [f64; 2], w: f64) -> (f64, [f64; 2]) {
        let eps = self.zero_eps;
        match self.kind {
            DistKind::Zie => {
                let s = sigmoid(z[0]);
                let pi = s.clamp(PI_CLAMP, 1.0 - PI_CLAMP);
                let pi_free = s == pi;
                let l = z[1].clamp(-LOG_RATE_BOUND, LOG_RATE_BOUND);
                let l_free = l == z[1];
                if w == 0.0 {
                    let g0 = if pi_free { -(1.0 - pi) } else { 0.0 };
                    (-pi.ln(), [g0, 0.0])
                } else {
                    let lambda = l.exp();
                    let g0 = if pi_free { pi } else { 0.0 };
                    let g1 = if l_free { lambda * w - 1.0 } else { 0.0 };
                    (-(1.0 - pi).ln() - l + lambda * w, [g0, g1])
                }
            }
            DistKind::Exponential => {
                let w = w.max(eps);
                let l = z[0].clamp(-LOG_RATE_BOUND, LOG_RATE_BOUND);
                let rate = l.exp();
                let g = if l == z[0] { rate * w - 1.0 } else { 0.0 };
                (-l + rate * w, [g, 0.0])
            }
            DistKind::LogNormal => {
                let y = w.max(eps).ln();
                let mu = z[0];
                let s = z[1].clamp(1e-6f64.ln(), LOG_SHAPE_BOUND);
                let sigma = s.exp();
                let r = (y - mu) / sigma;
                let gs = if s == z[1] { 1.0 - r * r } else { 0.0 };
                (y + s + LN_SQRT_2PI + 0.5 * r * r, [-r / sigma, gs])
            }
            DistKind::Gamma => {
                let w = w.max(eps);
                let y = w.ln();
                let a = z[0].clamp(-LOG_SHAPE_BOUND, LOG_SHAPE_BOUND);
                let c = z[1].clamp(-LOG_RATE_BOUND, LOG_RATE_BOUND);
                let k = a.exp();
                let rate = c.exp();
                let nll = -k * c + ln_gamma(k) - (k - 1.0) * y + rate * w;
                let ga = if a == z[0] { k * (digamma(k) - c - y) } else { 0.0 };
                let gc = if c == z[1] { rate * w - k } else { 0.0 };
                (nll, [ga, gc])
            }
        }
    }

    /// NLL of a single observation.
    pub fn sample_nll(&self, x: &[f64], w: f64) -> Result<f64> {
        self.check_dim(x)?;
        if w < 0.0 || w.is_nan() {
            return Err(LandscapeError::NegativePrice(w));
        }
        Ok(self.nll_and_head_grad(self.raw(x), w).0)
    }

    pub fn mean_nll(&self, data: &[TrainingSample<'_>]) -> Result<f64> {
        if data.is_empty() {
            return Err(LandscapeError::EmptyDataset);
        }
        let mut total = 0.0;
        for s in data {
            total += self.sample_nll(s.features, s.price)?;
        }
        Ok(total / data.len() as f64)
    }

    /// Mean NLL over `batch` and its gradient with respect to every weight,
    /// laid out like [`heads`](Self::heads).
    pub fn loss_and_grad(&self, batch: &[TrainingSample<'_>]) -> (f64, Vec<Vec<f64>>) {
        self.accumulate(batch.iter())
    }

    fn accumulate<'s, 'a: 's>(
        &self,
        batch: impl ExactSizeIterator<Item = &'s TrainingSample<'a>>,
    ) -> (f64, Vec<Vec<f64>>) {
        let n = batch.len().max(1) as f64;
        let mut grads = vec![vec![0.0; self.dim + 1]; self.heads.len()];
        let mut loss = 0.0;
        for s in batch {
            let (l, g) = self.nll_and_head_grad(self.raw(s.features), s.price);
            loss += l;
            for (grad, gh) in grads.iter_mut().zip(g) {
                if gh == 0.0 {
                    continue;
                }
                for (gj, xj) in grad[..self.dim].iter_mut().zip(s.features) {
                    *gj += gh * xj;
                }
                grad[self.dim] += gh;
            }
        }
        for grad in &mut grads {
            for g in grad.iter_mut() {
                *g /= n;
            }
        }
        (loss / n, grads)
    }

    /// Trains a fresh model of `kind`, initialized by [`init_from_prices`](Self::init_from_prices).
    pub fn train(
        kind: DistKind,
        data: &[TrainingSample<'_>],
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        let first = data.first().ok_or(LandscapeError::EmptyDataset)?;
        let prices: Vec<f64> = data.iter().map(|s| s.price).collect();
        let init = Self::init_from_prices(kind, first.features.len(), &prices, cfg.zero_eps);
        init.train_from(data, cfg)
    }

    /// Continues gradient descent from the current weights.
    pub fn train_from(
        mut self,
        data: &[TrainingSample<'_>],
        cfg: &TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        if data.is_empty() {
            return Err(LandscapeError::EmptyDataset);
        }
        for s in data {
            self.check_dim(s.features)?;
            if s.price < 0.0 || s.price.is_nan() {
                return Err(LandscapeError::NegativePrice(s.price));
            }
        }
        self.zero_eps = cfg.zero_eps;
        let mut losses = vec![self.mean_nll(data)?];
        let batch_size = cfg.batch_size.unwrap_or(data.len()).clamp(1, data.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut batch = Vec::with_capacity(batch_size);
        for epoch in 1..=cfg.epochs {
            if batch_size < data.len() {
                order.shuffle(&mut rng);
            }
            for chunk in order.chunks(batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| data[i]));
                let (_, grads) = self.accumulate(batch.iter());
                for (head, grad) in self.heads.iter_mut().zip(&grads) {
                    for (w, g) in head.iter_mut().zip(grad) {
                        *w -= cfg.learning_rate * g;
                    }
                }
            }
            let loss = self.mean_nll(data)?;
            if !loss.is_finite() || self.heads.iter().flatten().any(|w| !w.is_finite()) {
                return Err(LandscapeError::Diverged {
                    epoch,
                    loss,
                    learning_rate: cfg.learning_rate,
                });
            }
            log::debug!("{} epoch {epoch}: loss {loss:.6}", self.kind);
            losses.push(loss);
        }
        Ok((self, TrainReport { losses }))
    }

    pub const HEADER_MAGIC: &'static str = "hob-param-model";

    /// Versioned flat-text artifact; floats are written in shortest
    /// round-trip form so reading back is bit-exact.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} v1 dim={} kind={}\n", Self::HEADER_MAGIC, self.dim, self.kind);
        for head in &self.heads {
            let line: Vec<String> = head.iter().map(|w| format!("{w:e}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: String| LandscapeError::ModelFormat(msg);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(Self::HEADER_MAGIC) {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        if fields.next() != Some("v1") {
            return Err(bad(format!("unsupported version in `{header}`")));
        }
        let mut dim = None;
        let mut kind = None;
        for field in fields {
            match field.split_once('=') {
                Some(("dim", v)) => {
                    dim = Some(v.parse::<usize>().map_err(|e| bad(format!("dim: {e}")))?)
                }
                Some(("kind", v)) => kind = Some(v.parse::<DistKind>().map_err(bad)?),
                _ => return Err(bad(format!("unknown header field `{field}`"))),
            }
        }
        let dim = dim.ok_or_else(|| bad("missing dim".into()))?;
        let kind = kind.ok_or_else(|| bad("missing kind".into()))?;
        let heads = lines
            .map(|line| {
                line.split_whitespace()
                    .map(|t| t.parse::<f64>().map_err(|e| bad(format!("weight `{t}`: {e}"))))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_heads(kind, dim, heads)
    }
}
