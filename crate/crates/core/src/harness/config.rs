use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::TokenOverlap;
use crate::model::{ModelConfig, VisualSource};
use crate::multiway::{ClsRow, FusionConfig};
use crate::optim::{AdamWConfig, ScheduleConfig};
use crate::vision::{FusionOp, VisualDims};

/// Model scale. `Paper` uses the full published widths; `Tiny` keeps every
/// ratio and stage but shrinks widths so training fits in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Paper,
    Tiny,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            _ => Err(Error::config(format!("unknown preset {s:?} (expected paper or tiny)"))),
        }
    }

    pub fn dims(self) -> PresetDims {
        match self {
            Preset::Paper => PresetDims {
                visual: VisualDims::paper(),
                text_width: 1024,
                layers: 6,
                heads: 6,
                expert_ffn_width: 3072,
                max_question_len: 26,
            },
            Preset::Tiny => PresetDims {
                visual: VisualDims::tiny(),
                text_width: 32,
                layers: 2,
                heads: 2,
                expert_ffn_width: 96,
                max_question_len: 12,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetDims {
    pub visual: VisualDims,
    pub text_width: usize,
    pub layers: usize,
    pub heads: usize,
    pub expert_ffn_width: usize,
    pub max_question_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    /// Linear warmup, then cosine decay to zero.
    #[default]
    Cosine,
}

/// Generated corpus used when no data file is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub n: usize,
    pub n_global: usize,
    pub n_local: usize,
    pub seed: u64,
}

/// Everything that defines a run. Serialized as JSON with these field names;
/// omitted fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub epochs: usize,
    /// Encoder layers; `None` takes the preset value.
    pub layers: Option<usize>,
    /// Attention heads; `None` takes the preset value.
    pub heads: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_eps: f64,
    pub adam_betas: (f64, f64),
    pub weight_decay: f64,
    pub scheduler: Scheduler,
    pub warmup_ratio: f64,
    pub drop_path_rate: f64,
    /// Must stay 0: the encoder has no dropout layers.
    pub dropout: f64,
    pub fusion: FusionOp,
    pub visual_source: VisualSource,
    pub freeze_extractors: bool,
    pub extractor_seed: u64,
    /// Initialization, batch order and drop path.
    pub seed: u64,
    /// Train/test split and folds. Kept apart from `seed` so that seed
    /// repeats are evaluated on the same held-out set.
    pub split_seed: u64,
    pub train_ratio: f64,
    /// Question tokens kept; `None` takes the preset value.
    pub max_question_len: Option<usize>,
    pub min_token_count: usize,
    pub cls_row: ClsRow,
    pub use_position_embeddings: bool,
    pub use_modality_type_embeddings: bool,
    pub token_overlap: TokenOverlap,
    pub data: Option<PathBuf>,
    pub synthetic: Option<SyntheticCorpus>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: Preset::Paper,
            epochs: 20,
            layers: None,
            heads: None,
            batch_size: 65,
            learning_rate: 3e-5,
            adam_eps: 1e-8,
            adam_betas: (0.9, 0.999),
            weight_decay: 0.01,
            scheduler: Scheduler::Cosine,
            warmup_ratio: 0.1,
            drop_path_rate: 0.3,
            dropout: 0.0,
            fusion: FusionOp::Concatenate,
            visual_source: VisualSource::Combined,
            freeze_extractors: true,
            extractor_seed: 0,
            seed: 0,
            split_seed: 0,
            train_ratio: 0.8,
            max_question_len: None,
            min_token_count: 1,
            cls_row: ClsRow::First,
            use_position_embeddings: true,
            use_modality_type_embeddings: true,
            token_overlap: TokenOverlap::Set,
            data: None,
            synthetic: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn tiny() -> Self {
        RunConfig {
            preset: Preset::Tiny,
            ..RunConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("run config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        // Relative data paths in a config file are relative to the file.
        if let (Some(d), Some(dir)) = (cfg.data.as_mut(), path.parent()) {
            if d.is_relative() {
                *d = dir.join(&*d);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let p = self.preset.dims();
        let cfg = ModelConfig {
            visual: p.visual,
            text_width: p.text_width,
            max_question_len: self.max_question_len.unwrap_or(p.max_question_len),
            fusion: FusionConfig {
                layers: self.layers.unwrap_or(p.layers),
                heads: self.heads.unwrap_or(p.heads),
                hidden: p.visual.hidden,
                expert_ffn_width: p.expert_ffn_width,
                drop_path_rate: self.drop_path_rate,
                use_position_embeddings: self.use_position_embeddings,
                use_modality_type_embeddings: self.use_modality_type_embeddings,
                cls_row: self.cls_row,
            },
            fusion_op: self.fusion,
            source: self.visual_source,
            train_extractors: !self.freeze_extractors,
            extractor_seed: self.extractor_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            betas: self.adam_betas,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
            exempt_norms_and_biases: true,
        }
    }

    pub fn schedule(&self, total_steps: u64) -> Result<ScheduleConfig> {
        ScheduleConfig::new(self.learning_rate, total_steps, self.warmup_ratio).map_err(as_config)
    }

    /// Rejects inconsistent settings before any work starts.
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {}", self.learning_rate)));
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err(Error::config(format!("betas {:?} outside [0, 1)", self.adam_betas)));
        }
        if self.adam_eps <= 0.0 || self.adam_eps.is_nan() {
            return Err(Error::config(format!("eps {} must be positive", self.adam_eps)));
        }
        if self.weight_decay < 0.0 || self.weight_decay.is_nan() {
            return Err(Error::config(format!("weight decay {}", self.weight_decay)));
        }
        if self.dropout != 0.0 {
            return Err(Error::config("dropout is not part of this model; set it to 0"));
        }
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(Error::config(format!("train ratio {} outside (0, 1]", self.train_ratio)));
        }
        if self.min_token_count == 0 {
            return Err(Error::config("min token count must be at least 1"));
        }
        if let Some(s) = &self.synthetic {
            if s.n == 0 || s.n_global < 2 || s.n_local < 2 {
                return Err(Error::config(format!("synthetic corpus {s:?}")));
            }
        }
        ScheduleConfig::new(self.learning_rate, 1, self.warmup_ratio).map_err(as_config)?;
        self.model_config()?;
        Ok(())
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::config(other.to_string()),
    }
}
