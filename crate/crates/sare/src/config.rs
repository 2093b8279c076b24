//! Experiment configuration files (JSON, unknown keys rejected).
//!
//! ```json
//! {
//!   "name": "fm+sare",
//!   "dataset": {"generate": {"situation_effect": 2.0, "seed": 0}},
//!   "backbone": {"kind": "fm", "situation_mode": "sare"},
//!   "dim": 32,
//!   "activations": 11,
//!   "train": {"lr_backbone": 0.003, "lr_sare": 0.003, "lambda_s": 1.0,
//!             "lambda_p": 1.0, "epochs": 30, "regime": "train_sare"},
//!   "seeds": [0, 1, 2, 3, 4],
//!   "output_dir": "runs/fm_sare"
//! }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use sare_core::data::GeneratorConfig;
use sare_core::model::{BackboneConfig, SituationMode};
use sare_core::numeric::Activation;
use sare_core::train::{Regime, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Directory holding the four dataset files.
    Dir(PathBuf),
    Generate(GeneratorConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [u32; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratios: [8, 1, 1],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitConfig,
    pub backbone: BackboneConfig,
    pub dim: usize,
    /// Bank size K; the first K functions of the standard bank.
    #[serde(default = "default_activations")]
    pub activations: usize,
    pub train: TrainConfig,
    #[serde(default = "default_eval_k")]
    pub eval_k: usize,
    pub seeds: Vec<u64>,
    /// Output directory of a `backbone_only` experiment whose checkpoints
    /// seed the frozen backbone of a `fix_sare` run.
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn default_activations() -> usize {
    Activation::ALL.len()
}

fn default_eval_k() -> usize {
    3
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.trim().is_empty() {
            return bad("name must not be empty".into());
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if self.activations == 0 || self.activations > Activation::ALL.len() {
            return bad(format!("activations must lie in 1..={}", Activation::ALL.len()));
        }
        if self.eval_k == 0 {
            return bad("eval_k must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.split.ratios.contains(&0) {
            return bad("split ratios must be positive".into());
        }
        if let DatasetSource::Generate(g) = &self.dataset {
            g.validate()?;
        }
        self.train.validate()?;
        let sare = self.backbone.situation_mode == SituationMode::Sare;
        match self.train.regime {
            Regime::BackboneOnly if sare => {
                return bad("regime backbone_only needs situation_mode concat or none".into())
            }
            Regime::TrainSare | Regime::FixSare if !sare => {
                return bad(format!("regime {:?} needs situation_mode sare", self.train.regime))
            }
            _ => {}
        }
        match (self.train.regime, &self.pretrained) {
            (Regime::FixSare, None) => return bad("regime fix_sare needs a pretrained experiment directory".into()),
            (Regime::TrainSare | Regime::BackboneOnly, Some(_)) => {
                return bad("pretrained is only used by regime fix_sare".into())
            }
            _ => {}
        }
        if !sare && !self.train.ablation.is_full() {
            return bad("ablation flags need situation_mode sare".into());
        }
        Ok(())
    }
}

/// A validated config plus the exact text it was read from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub raw: String,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let config: ExperimentConfig =
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, raw, base_dir })
    }

    /// Wraps an in-memory config; the echo is its pretty JSON form.
    pub fn from_config(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        config.validate()?;
        let raw = serde_json::to_string_pretty(&config).expect("config serializes") + "\n";
        Ok(Self {
            config,
            raw,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}
