//! Multi-channel auction replay.
//!
//! A logged impression stream is routed to channels (second-price, uniform
//! first-price, shaded first-price), each strategy bids on it, and the
//! outcomes are aggregated into a [`ReplayReport`].

mod replay;
mod stream;
mod sweep;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::ControlError;
use crate::landscape::{DistKind, LandscapeError, ZieParams};
use crate::mca::McaError;
use crate::shading::ShadingError;

pub use replay::{
    clairvoyant_expected_surplus, Accounting, ChannelReport, Comparison, CompareRow, LandscapeSource,
    MatchedRun, OutcomeRow, Replay, ReplayReport, TotalsReport, ALIGN_PROBES,
};
pub use stream::{run_streaming, StreamReport};
pub use sweep::{spearman, sweep, SweepBase, SweepKind, SweepRow};

/// Relative perturbation of a multiplier for finite-difference MC.
pub const FD_REL_DELTA: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid channel setup: {0}")]
    InvalidChannels(String),
    #[error("impression {id} is tagged with unknown channel {channel:?}")]
    UnknownChannel { id: String, channel: Option<String> },
    #[error("{0} needs a landscape model for shaded channels")]
    MissingLandscape(String),
    #[error("impression {0} has no ground-truth landscape (required by expected accounting)")]
    MissingTruth(String),
    #[error("{got} landscape predictions for {expected} impressions")]
    LandscapeCount { expected: usize, got: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("marginal cost undefined for channel {0}: value does not move with eta")]
    UndefinedMc(String),
    #[error("invalid impression {id}: {detail}")]
    InvalidImpression { id: String, detail: String },
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Shading(#[from] ShadingError),
    #[error(transparent)]
    Mca(#[from] McaError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
}

pub type Result<T> = std::result::Result<T, SimError>;

/// One logged auction opportunity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    pub value: f64,
    pub winning_price: f64,
    #[serde(default)]
    pub features: Vec<f64>,
    /// Ground-truth landscape, when the data is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<ZieParams>,
}

impl Impression {
    pub fn new(id: impl Into<String>, value: f64, winning_price: f64, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            channel: None,
            value,
            winning_price,
            features,
            landscape: None,
        }
    }

    pub fn with_channel(mut self, channel: impl Into<String>) -> Self {
        self.channel = Some(channel.into());
        self
    }

    pub fn with_landscape(mut self, landscape: ZieParams) -> Self {
        self.landscape = Some(landscape);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: &str| {
            Err(SimError::InvalidImpression {
                id: self.id.clone(),
                detail: detail.to_string(),
            })
        };
        if !(self.value >= 0.0 && self.value.is_finite()) {
            return bad("value must be finite and nonnegative");
        }
        if !(self.winning_price >= 0.0 && self.winning_price.is_finite()) {
            return bad("winning price must be finite and nonnegative");
        }
        if self.features.iter().any(|x| !x.is_finite()) {
            return bad("features must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Spa,
    Fpa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiddingMode {
    Uniform,
    Nonuniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub id: String,
    pub mechanism: Mechanism,
    pub bidding_mode: BiddingMode,
    pub traffic_share: f64,
}

impl ChannelSpec {
    pub fn spa(id: impl Into<String>, share: f64) -> Self {
        Self {
            id: id.into(),
            mechanism: Mechanism::Spa,
            bidding_mode: BiddingMode::Uniform,
            traffic_share: share,
        }
    }

    pub fn fpa_uniform(id: impl Into<String>, share: f64) -> Self {
        Self {
            id: id.into(),
            mechanism: Mechanism::Fpa,
            bidding_mode: BiddingMode::Uniform,
            traffic_share: share,
        }
    }

    pub fn fpa_nonuniform(id: impl Into<String>, share: f64) -> Self {
        Self {
            id: id.into(),
            mechanism: Mechanism::Fpa,
            bidding_mode: BiddingMode::Nonuniform,
            traffic_share: share,
        }
    }

    pub fn is_fpa_uniform(&self) -> bool {
        self.mechanism == Mechanism::Fpa && self.bidding_mode == BiddingMode::Uniform
    }

    pub fn is_shadable(&self) -> bool {
        self.bidding_mode == BiddingMode::Nonuniform
    }
}

/// The three channel types, with shares `[spa, fpa_u, fpa_nu]`.
pub fn standard_channels(shares: [f64; 3]) -> Vec<ChannelSpec> {
    vec![
        ChannelSpec::spa("spa", shares[0]),
        ChannelSpec::fpa_uniform("fpa_u", shares[1]),
        ChannelSpec::fpa_nonuniform("fpa_nu", shares[2]),
    ]
}

pub fn validate_channels(channels: &[ChannelSpec]) -> Result<()> {
    let bad = |msg: String| Err(SimError::InvalidChannels(msg));
    if channels.is_empty() {
        return bad("no channels".into());
    }
    let mut total = 0.0;
    for (i, c) in channels.iter().enumerate() {
        if !(0.0..=1.0).contains(&c.traffic_share) {
            return bad(format!("channel {} share {} outside [0, 1]", c.id, c.traffic_share));
        }
        if c.bidding_mode == BiddingMode::Nonuniform && c.mechanism != Mechanism::Fpa {
            return bad(format!("channel {}: non-uniform bidding needs a first-price auction", c.id));
        }
        if channels[..i].iter().any(|o| o.id == c.id) {
            return bad(format!("duplicate channel id {}", c.id));
        }
        total += c.traffic_share;
    }
    if (total - 1.0).abs() > 1e-9 {
        return bad(format!("traffic shares sum to {total}, not 1"));
    }
    Ok(())
}

/// How impressions reach channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentMode {
    /// Use each impression's `channel` tag.
    Tagged,
    /// Partition by a hash of the impression id against cumulative shares.
    Hash,
    /// Replay the whole log through every channel.
    Duplicate,
}

impl FromStr for AssignmentMode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tagged" => Ok(Self::Tagged),
            "hash" => Ok(Self::Hash),
            "duplicate" => Ok(Self::Duplicate),
            other => Err(SimError::InvalidChannels(format!("unknown assignment mode {other:?}"))),
        }
    }
}

/// Position of `id` in `[0, 1)`: the first 8 bytes of its SHA-256 digest.
pub fn hash_bucket(id: &str) -> f64 {
    let digest = Sha256::digest(id.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_be_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

/// Impression indices per channel, each list in dataset order.
pub fn assign_channels(
    dataset: &[Impression],
    channels: &[ChannelSpec],
    mode: AssignmentMode,
) -> Result<Vec<Vec<usize>>> {
    validate_channels(channels)?;
    let mut slots = vec![Vec::new(); channels.len()];
    match mode {
        AssignmentMode::Duplicate => {
            for list in &mut slots {
                list.extend(0..dataset.len());
            }
        }
        AssignmentMode::Tagged => {
            for (i, imp) in dataset.iter().enumerate() {
                let c = channels
                    .iter()
                    .position(|c| Some(&c.id) == imp.channel.as_ref())
                    .ok_or_else(|| SimError::UnknownChannel {
                        id: imp.id.clone(),
                        channel: imp.channel.clone(),
                    })?;
                slots[c].push(i);
            }
        }
        AssignmentMode::Hash => {
            let mut bounds = Vec::with_capacity(channels.len());
            let mut acc = 0.0;
            for c in channels {
                acc += c.traffic_share;
                bounds.push(acc);
            }
            for (i, imp) in dataset.iter().enumerate() {
                let u = hash_bucket(&imp.id);
                let c = bounds
                    .iter()
                    .position(|&b| u < b)
                    .unwrap_or_else(|| {
                        // Shares summing to 1 - 1e-9 leave a sliver at the top.
                        channels.iter().rposition(|c| c.traffic_share > 0.0).unwrap_or(0)
                    });
                slots[c].push(i);
            }
        }
    }
    Ok(slots)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    pub won: bool,
    pub cost: f64,
    pub value_realized: f64,
    pub bid: f64,
}

/// Ties win: bidding exactly the winning price (including 0 on an organic
/// impression) takes the slot. First price pays the bid, second price the
/// winning price.
pub fn resolve_auction(mechanism: Mechanism, bid: f64, impression: &Impression) -> AuctionOutcome {
    let won = bid >= impression.winning_price;
    let cost = match (won, mechanism) {
        (false, _) => 0.0,
        (true, Mechanism::Fpa) => bid,
        (true, Mechanism::Spa) => impression.winning_price,
    };
    AuctionOutcome {
        won,
        cost,
        value_realized: if won { impression.value } else { 0.0 },
        bid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Strategy {
    /// One multiplier, bid `eta * v` everywhere.
    UeUb,
    /// One multiplier, shaded bids on non-uniform first-price channels.
    UeNub(DistKind),
    /// Marginal-cost-aligned multipliers plus shading.
    McaeNub(DistKind),
}

impl Strategy {
    pub fn shades(&self) -> bool {
        !matches!(self, Self::UeUb)
    }

    pub fn aligns(&self) -> bool {
        matches!(self, Self::McaeNub(_))
    }

    pub fn dist_kind(&self) -> Option<DistKind> {
        match *self {
            Self::UeUb => None,
            Self::UeNub(k) | Self::McaeNub(k) => Some(k),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UeUb => write!(f, "UE&UB"),
            Self::UeNub(k) => write!(f, "UE&NUB-{}", k.letter()),
            Self::McaeNub(k) => write!(f, "MCAE&NUB-{}", k.letter()),
        }
    }
}

impl FromStr for Strategy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let unknown = || SimError::UnknownStrategy(s.to_string());
        let upper = s.trim().to_ascii_uppercase();
        if upper == "UE&UB" {
            return Ok(Self::UeUb);
        }
        let (head, letter) = upper.rsplit_once('-').ok_or_else(unknown)?;
        let mut chars = letter.chars();
        let kind = match (chars.next(), chars.next()) {
            (Some(c), None) => DistKind::from_letter(c).ok_or_else(unknown)?,
            _ => return Err(unknown()),
        };
        match head {
            "UE&NUB" => Ok(Self::UeNub(kind)),
            "MCAE&NUB" => Ok(Self::McaeNub(kind)),
            _ => Err(unknown()),
        }
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> Self {
        s.to_string()
    }
}

impl TryFrom<String> for Strategy {
    type Error = SimError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}
