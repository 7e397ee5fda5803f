use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::AnswerVocab;
use crate::error::{Error, Result};
use crate::model::VqaModel;
use crate::optim::AdamWState;
use crate::tensor::Tensor;
use crate::text::Vocabulary;

use super::config::RunConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor,
}

/// Model weights, vocabularies, optimizer state and the config that built them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub answers: AnswerVocab,
    pub params: Vec<NamedTensor>,
    pub optimizer: AdamWState,
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, model: &VqaModel, optimizer: &AdamWState) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: config.clone(),
            vocab: model.vocab.clone(),
            answers: model.answers.clone(),
            params: model
                .store
                .iter()
                .map(|(_, p)| NamedTensor {
                    name: p.name.clone(),
                    trainable: p.trainable,
                    value: p.value().clone(),
                })
                .collect(),
            optimizer: optimizer.clone(),
        }
    }

    /// Rebuilds the model. Every stored tensor must match the parameter the
    /// config registers, by name, order and shape.
    pub fn restore(&self) -> Result<VqaModel> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.format_version
            )));
        }
        let mut model = VqaModel::new(
            self.config.model_config()?,
            self.vocab.clone(),
            self.answers.clone(),
            self.config.seed,
        )?;
        if model.store.len() != self.params.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, the config builds {}",
                self.params.len(),
                model.store.len()
            )));
        }
        let ids: Vec<_> = model.store.ids().collect();
        for (id, saved) in ids.into_iter().zip(&self.params) {
            let p = model.store.get(id);
            if p.name != saved.name || p.value().shape() != saved.value.shape() {
                return Err(Error::config(format!(
                    "checkpoint parameter {} {:?} does not fit {} {:?}",
                    saved.name,
                    saved.value.shape(),
                    p.name,
                    p.value().shape()
                )));
            }
            if p.trainable != saved.trainable {
                return Err(Error::config(format!("trainable flag of {} differs", saved.name)));
            }
            model.store.set_value(id, saved.value.clone())?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
