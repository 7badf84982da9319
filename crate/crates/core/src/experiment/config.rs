//! Experiment configuration files and their canonical hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MtlbError, Result};
use crate::model::EncoderConfig;
use crate::search::{preset, to_configs};
use crate::tasks::{tasks_for, Category, TaskId};
use crate::train::TrainConfig;

/// Regime families a grid can request; the target category is filled in per cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegimeKind {
    #[serde(rename = "ST")]
    St,
    #[serde(rename = "MT")]
    Mt,
    #[serde(rename = "PRETRAIN-OMIT")]
    PretrainOmit,
    #[serde(rename = "FTD")]
    Ftd,
    #[serde(rename = "FTF")]
    Ftf,
}

impl RegimeKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ST" => Ok(Self::St),
            "MT" => Ok(Self::Mt),
            "PRETRAIN-OMIT" | "OMIT" => Ok(Self::PretrainOmit),
            "FTD" => Ok(Self::Ftd),
            "FTF" => Ok(Self::Ftf),
            o => Err(MtlbError::Config(format!("unknown regime {o:?}; expected ST, MT, PRETRAIN-OMIT, FTD or FTF"))),
        }
    }
}

fn default_categories() -> Vec<Category> {
    Category::REPORTED.to_vec()
}
fn default_regimes() -> Vec<RegimeKind> {
    vec![RegimeKind::St, RegimeKind::Mt, RegimeKind::Ftd, RegimeKind::Ftf]
}
fn default_fractions() -> Vec<f64> {
    vec![1.0]
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// A whole experiment. Paths are resolved relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output: PathBuf,
    #[serde(default)]
    pub master_seed: u64,
    /// Task categories that get a decoder.
    #[serde(default = "default_categories")]
    pub categories: Vec<Category>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<RegimeKind>,
    /// Training-set fractions in (0, 1]; 1.0 is the full-data setting.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    /// Share of female training patients removed, for imbalance cells.
    #[serde(default)]
    pub female_removal: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Named configuration from the search module; `encoder`/`train` override it.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

/// The fields that change results, serialized in a fixed order for hashing.
#[derive(Serialize)]
struct Canonical<'a> {
    categories: &'a [Category],
    encoder: &'a EncoderConfig,
    train: &'a TrainConfig,
    master_seed: u64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| MtlbError::Config(format!("config: {e}")))
    }

    /// Loads a config and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MtlbError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.dataset, &mut cfg.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Encoder and training settings after applying the preset and overrides.
    pub fn resolved(&self) -> Result<(EncoderConfig, TrainConfig)> {
        let base = match &self.preset {
            Some(name) => Some(to_configs(&preset(name)?)?),
            None => None,
        };
        let encoder = match (&self.encoder, &base) {
            (Some(e), _) => e.clone(),
            (None, Some((e, _))) => e.clone(),
            (None, None) => return Err(MtlbError::Config("config needs a preset or an [encoder] table".into())),
        };
        let train = match (&self.train, &base) {
            (Some(t), _) => t.clone(),
            (None, Some((_, t))) => t.clone(),
            (None, None) => return Err(MtlbError::Config("config needs a preset or a [train] table".into())),
        };
        encoder.validate()?;
        train.validate()?;
        Ok((encoder, train))
    }

    pub fn suite(&self) -> Vec<TaskId> {
        tasks_for(&self.categories)
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved()?;
        if self.categories.is_empty() || self.regimes.is_empty() || self.seeds.is_empty() {
            return Err(MtlbError::Config("categories, regimes and seeds must be non-empty".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(MtlbError::Config(format!("fraction {f} outside (0, 1]")));
        }
        if let Some(f) = self.female_removal.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(MtlbError::Config(format!("female removal {f} outside (0, 1]")));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything that affects results.
    /// Paths, seeds lists and the requested grid shape are left out so that
    /// extending a grid keeps earlier cells valid.
    pub fn hash(&self) -> Result<String> {
        let (encoder, train) = self.resolved()?;
        let json = serde_json::to_vec(&Canonical {
            categories: &self.categories,
            encoder: &encoder,
            train: &train,
            master_seed: self.master_seed,
        })
        .expect("canonical form serializes");
        Ok(hex::encode(Sha256::digest(&json)))
    }
}

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
