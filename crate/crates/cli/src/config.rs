//! TOML run configuration shared by `simulate`, `compare`, `sweep` and `pace`.
//!
//! Relative paths are resolved against the directory holding the config
//! file. See `configs/example.toml` for a commented template.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hob::control::{Campaign, ControlConfig};
use hob::landscape::DistKind;
use hob::simulate::{standard_channels, validate_channels, Accounting, AssignmentMode, ChannelSpec, Strategy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub campaign: Campaign,
    #[serde(default)]
    pub replay: ReplaySettings,
    #[serde(default)]
    pub bisection: BisectionSettings,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default = "default_channels")]
    pub channels: Vec<ChannelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    /// Fitted model file per distribution name (`zie`, `exp`, ...).
    #[serde(default)]
    pub models: BTreeMap<String, PathBuf>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

/// Where shaded channels get their win curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandscapeChoice {
    /// The ground-truth landscape stored on each impression.
    Truth,
    /// Per-impression predictions of the fitted model for each strategy's kind.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySettings {
    pub strategies: Vec<Strategy>,
    pub assignment: AssignmentMode,
    pub accounting: Accounting,
    pub landscape: LandscapeChoice,
    pub n_iter: usize,
    /// Fixed multiplier for `simulate`; absent means constraint-matched.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Currency per unit of impression value.
    pub value_scale: f64,
}

impl Default for ReplaySettings {
    fn default() -> Self {
        Self {
            strategies: vec![
                Strategy::UeUb,
                Strategy::UeNub(DistKind::Zie),
                Strategy::McaeNub(DistKind::Zie),
            ],
            assignment: AssignmentMode::Hash,
            accounting: Accounting::Realized,
            landscape: LandscapeChoice::Model,
            n_iter: hob::shading::DEFAULT_N_ITER,
            eta: None,
            value_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BisectionSettings {
    pub bracket: (f64, f64),
    pub tol: f64,
}

impl Default for BisectionSettings {
    fn default() -> Self {
        Self {
            bracket: (1e-3, 1e3),
            tol: 1e-3,
        }
    }
}

fn default_channels() -> Vec<ChannelSpec> {
    standard_channels([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A parsed config plus the directory its relative paths hang off.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Kinds of fitted model the strategy list needs.
    pub fn model_kinds(&self) -> Vec<DistKind> {
        let mut kinds: Vec<DistKind> = self.replay.strategies.iter().filter_map(Strategy::dist_kind).collect();
        kinds.sort();
        kinds.dedup();
        kinds
    }

    fn validate(&self) -> std::result::Result<(), String> {
        self.campaign.validate().map_err(|e| e.to_string())?;
        self.control.validate().map_err(|e| e.to_string())?;
        validate_channels(&self.channels).map_err(|e| e.to_string())?;
        let r = &self.replay;
        if r.strategies.is_empty() {
            return Err("replay.strategies is empty".into());
        }
        if r.n_iter == 0 {
            return Err("replay.n_iter must be at least 1".into());
        }
        if !(r.value_scale > 0.0 && r.value_scale.is_finite()) {
            return Err(format!("replay.value_scale must be positive, got {}", r.value_scale));
        }
        if let Some(eta) = r.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(format!("replay.eta must be positive, got {eta}"));
            }
        }
        if r.landscape == LandscapeChoice::Truth {
            if let Some(s) = r.strategies.iter().find(|s| s.dist_kind().is_some_and(|k| k != DistKind::Zie)) {
                return Err(format!("{s} cannot use ground-truth landscapes, which are ZIE"));
            }
        }
        for name in self.paths.models.keys() {
            name.parse::<DistKind>()?;
        }
        let (lo, hi) = self.bisection.bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(format!("bisection.bracket [{lo}, {hi}] is not a positive interval"));
        }
        if !(self.bisection.tol > 0.0) {
            return Err("bisection.tol must be positive".into());
        }
        Ok(())
    }
}

impl LoadedConfig {
    /// Reads, validates and checks that every referenced input exists.
    pub fn load(path: &Path) -> Result<Self> {
        let bad = |detail: String| CliError::Config {
            path: path.to_path_buf(),
            detail,
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config = RunConfig::from_toml(&text).map_err(bad)?;
        config.validate().map_err(bad)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, base };
        let dataset = loaded.dataset_path();
        if !dataset.is_file() {
            return Err(bad(format!("dataset {} does not exist", dataset.display())));
        }
        if loaded.config.replay.landscape == LandscapeChoice::Model {
            for kind in loaded.config.model_kinds() {
                let model = loaded.model_path(kind).map_err(bad)?;
                if !model.is_file() {
                    return Err(bad(format!("{kind} model {} does not exist", model.display())));
                }
            }
        }
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.resolve(&self.config.paths.dataset)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.paths.output_dir)
    }

    pub fn model_path(&self, kind: DistKind) -> std::result::Result<PathBuf, String> {
        self.config
            .paths
            .models
            .iter()
            .find(|(name, _)| name.parse::<DistKind>().ok() == Some(kind))
            .map(|(_, p)| self.resolve(p))
            .ok_or_else(|| format!("paths.models has no `{kind}` entry"))
    }
}
