use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use qrewrite::data::SyntheticConfig;
use qrewrite::{AeConfig, GuideConfig, MergeMode, RewriteConfig, TrainConfig};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    PaperScale,
}

impl Preset {
    pub fn guide(self) -> GuideConfig {
        match self {
            Preset::Desk => GuideConfig::desk(),
            Preset::PaperScale => GuideConfig::paper_scale(),
        }
    }

    pub fn autoencoder(self) -> AeConfig {
        match self {
            Preset::Desk => AeConfig::desk(),
            Preset::PaperScale => AeConfig::paper_scale(),
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper-scale" => Ok(Preset::PaperScale),
            _ => Err(format!("unknown preset `{s}` (expected desk or paper-scale)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision `{s}` (expected f32 or f64)")),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Synthetic corpus size and the share of paragraphs held out for dev.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n_paragraphs: usize,
    pub facts_min: usize,
    pub facts_max: usize,
    pub dev_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            n_paragraphs: s.n_paragraphs,
            facts_min: s.facts_min,
            facts_max: s.facts_max,
            dev_fraction: 0.1,
        }
    }
}

/// Effective configuration of one run. Every artifact directory gets a copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Training set; defaults to `<out_dir>/data/train.json`.
    pub dataset: Option<PathBuf>,
    /// Dev set; defaults to `<out_dir>/data/dev.json`.
    pub dev_dataset: Option<PathBuf>,
    /// Defaults to `<out_dir>/data/vocab.txt`.
    pub vocab: Option<PathBuf>,
    pub guide_checkpoint: Option<PathBuf>,
    pub ae_checkpoint: Option<PathBuf>,
    pub augmented: Option<PathBuf>,
    pub preset: Preset,
    pub precision: Precision,
    pub seed: u64,
    pub threads: usize,
    pub data: DataSection,
    pub guide_train: TrainConfig,
    pub ae_train: TrainConfig,
    pub rewrite: RewriteConfig,
    /// Answerable training tuples used as rewrite sources; `null` means all.
    pub rewrite_limit: Option<usize>,
    pub merge_mode: MergeMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("run"),
            dataset: None,
            dev_dataset: None,
            vocab: None,
            guide_checkpoint: None,
            ae_checkpoint: None,
            augmented: None,
            preset: Preset::Desk,
            precision: Precision::F32,
            seed: 7,
            threads: 1,
            data: DataSection::default(),
            guide_train: TrainConfig {
                epochs: 20,
                batch_size: 16,
                lr: 3e-3,
                ..TrainConfig::default()
            },
            ae_train: TrainConfig {
                epochs: 15,
                batch_size: 16,
                lr: 1e-3,
                ..TrainConfig::default()
            },
            rewrite: RewriteConfig::default(),
            rewrite_limit: Some(200),
            merge_mode: MergeMode::Both,
        }
    }
}

/// Per-stage seeds drawn from the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub data: u64,
    pub split: u64,
    pub guide: u64,
    pub ae: u64,
    pub rewrite: u64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Usage(format!("invalid config {}: {e}", path.display())).into())
    }

    pub fn stage_seeds(&self) -> StageSeeds {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        StageSeeds {
            data: self.seed,
            split: rng.next_u64(),
            guide: rng.next_u64(),
            ae: rng.next_u64(),
            rewrite: rng.next_u64(),
        }
    }

    /// The seed-dependent fields as each stage sees them.
    pub fn resolved(&self) -> Self {
        let seeds = self.stage_seeds();
        let mut c = self.clone();
        c.guide_train.seed = seeds.guide;
        c.ae_train.seed = seeds.ae;
        c.rewrite.seed = seeds.rewrite;
        c
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.stage_seeds().data,
            n_paragraphs: self.data.n_paragraphs,
            facts_min: self.data.facts_min,
            facts_max: self.data.facts_max,
        }
    }

    fn under(&self, sub: &str) -> PathBuf {
        self.out_dir.join(sub)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.under("data")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.under("models")
    }

    pub fn augment_dir(&self) -> PathBuf {
        self.under("augment")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.under("eval")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.data_dir().join("train.json"))
    }

    pub fn dev_path(&self) -> PathBuf {
        self.dev_dataset.clone().unwrap_or_else(|| self.data_dir().join("dev.json"))
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.vocab.clone().unwrap_or_else(|| self.data_dir().join("vocab.txt"))
    }

    pub fn guide_path(&self) -> PathBuf {
        self.guide_checkpoint.clone().unwrap_or_else(|| self.models_dir().join("guide.ckpt"))
    }

    pub fn ae_path(&self) -> PathBuf {
        self.ae_checkpoint.clone().unwrap_or_else(|| self.models_dir().join("ae.ckpt"))
    }

    pub fn augmented_path(&self) -> PathBuf {
        self.augmented.clone().unwrap_or_else(|| self.augment_dir().join("augmented.jsonl"))
    }

    pub fn merged_path(&self) -> PathBuf {
        self.augment_dir().join("merged.json")
    }

    /// Creates `dir` and writes the effective config into it.
    pub fn echo_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.json");
        let text = serde_json::to_string_pretty(&self.resolved())? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
