//! Self-describing JSON checkpoints.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParams};
use crate::corpus::{EmbeddingTable, Vocab};
use crate::numkit::Tensor;
use crate::train::{AdamState, TrainConfig};
use crate::{Error, Result};

pub const FORMAT: &str = "pthought-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Optimizer position, present when a checkpoint is meant to resume training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub train: TrainConfig,
    pub adam: AdamState,
    pub epochs_completed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub alpha: f64,
    pub seed: u64,
    pub max_seq_len: usize,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    pub tensors: Vec<NamedTensor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingState>,
}

impl Checkpoint {
    pub fn new(model: &Model, vocab: &Vocab, train: &TrainConfig) -> Self {
        let tensors = model
            .params
            .named()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            model: model.config.clone(),
            alpha: train.alpha,
            seed: train.seed,
            max_seq_len: train.max_seq_len,
            vocab_hash: vocab.digest(),
            vocab: vocab.tokens().to_vec(),
            tensors,
            training: None,
        }
    }

    pub fn with_training(mut self, state: TrainingState) -> Self {
        self.training = Some(state);
        self
    }

    pub fn write(&self, out: impl Write) -> Result<()> {
        let mut out = BufWriter::new(out);
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("checkpoint", e))?;
        out.flush().map_err(|e| Error::io("checkpoint", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(file)
    }

    pub fn read(input: impl Read) -> Result<Self> {
        let ckpt: Self = serde_json::from_reader(BufReader::new(input))?;
        if ckpt.format != FORMAT || ckpt.version != VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }

    /// Vocabulary, verified against the stored hash.
    pub fn vocab(&self) -> Result<Vocab> {
        let vocab = Vocab::from_tokens(self.vocab.clone())?;
        if vocab.digest() != self.vocab_hash {
            return Err(Error::InvalidInput(
                "checkpoint vocabulary does not match its hash".into(),
            ));
        }
        Ok(vocab)
    }

    /// Rebuilds the model, checking every tensor name and shape against the config.
    pub fn model(&self) -> Result<Model> {
        self.model.validate()?;
        let placeholder = EmbeddingTable::random(self.model.vocab_size, self.model.embed_dim, 0);
        let mut params = ModelParams::init(&self.model, placeholder.into_tensor(), 0);
        let slots = params.named_mut();
        if slots.len() != self.tensors.len() {
            return Err(Error::InvalidInput(format!(
                "checkpoint has {} tensors, model expects {}",
                self.tensors.len(),
                slots.len()
            )));
        }
        for ((name, slot), stored) in slots.into_iter().zip(&self.tensors) {
            if name != stored.name || slot.shape() != stored.shape.as_slice() {
                return Err(Error::InvalidInput(format!(
                    "checkpoint tensor {} {:?} does not match expected {} {:?}",
                    stored.name,
                    stored.shape,
                    name,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(stored.shape.clone(), stored.data.clone())?;
        }
        Ok(Model {
            config: self.model.clone(),
            params,
        })
    }
}
