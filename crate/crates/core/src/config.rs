//! Run configuration: model, training, and signal settings in one file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::{preset, SignalConfig, SplitPlan};
use crate::error::{Error, Result};
use crate::metrics::Chance;
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Every setting a run depends on. Missing keys take the published
/// defaults of the four-class motor imagery recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub signal: SignalConfig,
    pub split: SplitPlan,
    /// Chance model for kappa (marginal).
    pub chance: Chance,
    /// Dataset directory.
    pub data: Option<PathBuf>,
    /// Output directory.
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_preset("bci2a").expect("built-in preset")
    }
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let p = preset(name)?;
        Ok(Self {
            model: p.model,
            train: TrainConfig { augment_r: p.augment_r, lr_max: p.lr_max, ..TrainConfig::default() },
            signal: p.signal,
            split: p.split,
            chance: Chance::Marginal,
            data: None,
            out: None,
        })
    }

    /// Reads TOML, or JSON when the extension is `.json`, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let cfg: RunConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let freqs = self.signal.freqs.freqs().map_err(|e| Error::Config(e.to_string()))?;
        if freqs.len() != self.model.freqs {
            return Err(Error::Config(format!(
                "frequency grid has {} bins but model.freqs = {}",
                freqs.len(),
                self.model.freqs
            )));
        }
        if !(self.signal.fs > 0.0) || freqs.last().is_some_and(|&f| f >= self.signal.fs / 2.0) {
            return Err(Error::Config(format!("frequency grid must stay below Nyquist ({} Hz)", self.signal.fs / 2.0)));
        }
        if self.train.augment_r > self.model.samples {
            return Err(Error::Config(format!(
                "augment_r = {} exceeds {} samples",
                self.train.augment_r, self.model.samples
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Component switches for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_transformer: bool,
    pub no_branch1: bool,
    pub no_b2_input1: bool,
    pub no_b2_input2: bool,
    pub no_augment: bool,
}

impl Ablation {
    /// Parses a comma-separated list such as `no-transformer,no-augment`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut a = Self::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let key = item.trim_start_matches("--").replace('_', "-");
            match key.as_str() {
                "no-transformer" => a.no_transformer = true,
                "no-branch1" => a.no_branch1 = true,
                "no-b2-input1" => a.no_b2_input1 = true,
                "no-b2-input2" => a.no_b2_input2 = true,
                "no-augment" => a.no_augment = true,
                _ => return Err(Error::Config(format!("unknown ablation flag {item:?}"))),
            }
        }
        Ok(a)
    }

    pub fn merge(self, other: Ablation) -> Ablation {
        Ablation {
            no_transformer: self.no_transformer || other.no_transformer,
            no_branch1: self.no_branch1 || other.no_branch1,
            no_b2_input1: self.no_b2_input1 || other.no_b2_input1,
            no_b2_input2: self.no_b2_input2 || other.no_b2_input2,
            no_augment: self.no_augment || other.no_augment,
        }
    }
}

/// Switches components off; at least one branch input must survive.
pub fn ablation_flags(cfg: &RunConfig, flags: Ablation) -> Result<RunConfig> {
    let mut out = cfg.clone();
    out.model.use_transformer &= !flags.no_transformer;
    out.model.use_branch1 &= !flags.no_branch1;
    out.model.use_branch2_in1 &= !flags.no_b2_input1;
    out.model.use_branch2_in2 &= !flags.no_b2_input2;
    if flags.no_augment {
        out.train.augment_r = 0;
    }
    if !(out.model.use_branch1 || out.model.use_branch2_in1 || out.model.use_branch2_in2) {
        return Err(Error::Config("ablation disables every branch input".into()));
    }
    Ok(out)
}
