//! The dual-decoder GRU sequence-to-sequence network.
//!
//! One encoder produces a sentence vector; the auto-decoder regenerates the
//! input and the paraphrase-decoder generates its paraphrase. Training
//! minimizes `l_auto + α · l_para` where α weights the paraphrase term.

pub mod checkpoint;
mod network;
mod params;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use network::{decoder_nll, encode, greedy_decode, gru_step, pair_loss, LossVars, Padded};
pub use params::{
    xavier_bound, xavier_init, Decoder, EncoderLayer, Gru, Linear, ModelParams, EMBEDDING_NAME,
};

use crate::corpus::{tokenize, EmbeddingTable, SentencePair, Vocab};
use crate::numkit::{Tape, Tensor};
use crate::{Error, Result};

pub(crate) const INIT_STREAM: u64 = 1;

/// Encoder layouts. Every layout yields a `2 · hidden_dim` sentence vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderVariant {
    #[serde(rename = "one-bi")]
    OneLayerBi,
    #[serde(rename = "two-forward")]
    TwoLayerForward,
    #[serde(rename = "two-bi")]
    TwoLayerBi,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 3] =
        [Self::OneLayerBi, Self::TwoLayerForward, Self::TwoLayerBi];

    pub fn layers(self) -> usize {
        match self {
            Self::OneLayerBi => 1,
            Self::TwoLayerForward | Self::TwoLayerBi => 2,
        }
    }

    pub fn bidirectional(self) -> bool {
        !matches!(self, Self::TwoLayerForward)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::OneLayerBi => "one-bi",
            Self::TwoLayerForward => "two-forward",
            Self::TwoLayerBi => "two-bi",
        }
    }
}

impl fmt::Display for EncoderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown encoder variant {s:?} (one-bi, two-forward, two-bi)"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: EncoderVariant,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// One vocabulary projection for both decoders instead of one each.
    #[serde(default)]
    pub shared_output: bool,
}

impl ModelConfig {
    pub fn sentence_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive with at least the 4 reserved tokens: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Fixed-width encoder output for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceVector(Vec<f64>);

impl SentenceVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for SentenceVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderKind {
    Auto,
    Paraphrase,
}

/// Loss values for one pair or batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub auto: f64,
    pub para: f64,
    pub total: f64,
}

/// Configuration plus weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if alpha <= 1.0 {
        log::warn!("alpha = {alpha} does not weight the paraphrase decoder above the auto-decoder; values above 1 are recommended");
    }
    Ok(())
}

impl Model {
    /// Xavier-initialized model around `embedding`.
    pub fn init(config: ModelConfig, embedding: EmbeddingTable, seed: u64) -> Result<Self> {
        config.validate()?;
        if embedding.vocab_size() != config.vocab_size || embedding.dim() != config.embed_dim {
            return Err(Error::Config(format!(
                "embedding table is {}×{}, config expects {}×{}",
                embedding.vocab_size(),
                embedding.dim(),
                config.vocab_size,
                config.embed_dim
            )));
        }
        let params = ModelParams::init(&config, embedding.into_tensor(), seed);
        Ok(Self { config, params })
    }

    /// Sentence vectors for a batch of id sequences.
    pub fn encode_batch(&self, seqs: &[&[usize]]) -> Result<Vec<SentenceVector>> {
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidInput(
                "cannot encode an empty token sequence".into(),
            ));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let batch = Padded::new(seqs, 0)?;
        let sv = encode(&mut tape, &vars, self.config.variant, &batch)?;
        let value = tape.value(sv);
        Ok((0..seqs.len())
            .map(|r| SentenceVector::new(value.row_slice(r).to_vec()))
            .collect())
    }

    pub fn encode(&self, ids: &[usize]) -> Result<SentenceVector> {
        Ok(self.encode_batch(&[ids])?.remove(0))
    }

    /// Mean per-step NLL of `target` for one decoder, given a sentence vector.
    pub fn decoder_nll(
        &self,
        kind: DecoderKind,
        sv: &SentenceVector,
        target: &[usize],
    ) -> Result<f64> {
        if target.is_empty() {
            return Err(Error::InvalidInput("empty decoder target".into()));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let sv = tape.leaf(Tensor::row(sv.values().to_vec())?);
        let batch = Padded::new(&[target], 0)?;
        let para = kind == DecoderKind::Paraphrase;
        let dec = if para { &vars.para } else { &vars.auto };
        let nll = decoder_nll(
            &mut tape,
            sv,
            &batch,
            dec,
            vars.output_for(para),
            vars.embedding,
        )?;
        Ok(tape.scalar(nll))
    }

    /// `l_auto + α · l_para` for one pair.
    pub fn loss(&self, pair: &SentencePair, alpha: f64) -> Result<LossParts> {
        self.batch_loss(&[pair], alpha)
    }

    /// Batch-mean loss without gradients.
    pub fn batch_loss(&self, pairs: &[&SentencePair], alpha: f64) -> Result<LossParts> {
        check_alpha(alpha)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let sources: Vec<&[usize]> = pairs.iter().map(|p| p.source.as_slice()).collect();
        let targets: Vec<&[usize]> = pairs.iter().map(|p| p.target.as_slice()).collect();
        let l = pair_loss(
            &mut tape,
            &vars,
            self.config.variant,
            &Padded::new(&sources, 0)?,
            &Padded::new(&targets, 0)?,
            alpha,
        )?;
        Ok(LossParts {
            auto: tape.scalar(l.auto),
            para: tape.scalar(l.para),
            total: tape.scalar(l.total),
        })
    }

    /// Greedy decoding from the encoding of `source`.
    pub fn greedy(
        &self,
        kind: DecoderKind,
        source: &[usize],
        max_len: usize,
    ) -> Result<Vec<usize>> {
        let sv = self.encode(source)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let sv = tape.leaf(Tensor::row(sv.into_inner())?);
        let para = kind == DecoderKind::Paraphrase;
        let dec = if para { &vars.para } else { &vars.auto };
        Ok(greedy_decode(
            &mut tape,
            sv,
            dec,
            vars.output_for(para),
            vars.embedding,
            max_len,
        )?)
    }
}

/// Anything that maps raw sentences to fixed-width vectors.
pub trait SentenceEncoder {
    fn width(&self) -> usize;
    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<SentenceVector>>;
}

/// Rows encoded per tape when embedding text.
const ENCODE_CHUNK: usize = 64;

/// A model bundled with its vocabulary for encoding raw text.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub model: Model,
    pub vocab: Vocab,
    pub max_seq_len: usize,
    /// Map unknown words to `<unk>` instead of failing.
    pub allow_unk: bool,
}

impl TextEncoder {
    pub fn from_checkpoint(ckpt: &checkpoint::Checkpoint, allow_unk: bool) -> Result<Self> {
        Ok(Self {
            model: ckpt.model()?,
            vocab: ckpt.vocab()?,
            max_seq_len: ckpt.max_seq_len,
            allow_unk,
        })
    }

    /// Token ids with trailing EOS, rejecting unknown words unless allowed.
    pub fn ids(&self, text: &str) -> Result<Vec<usize>> {
        let tokens = tokenize(text);
        if !self.allow_unk {
            if let Some(word) = tokens.iter().find(|t| self.vocab.id(t).is_none()) {
                return Err(Error::InvalidInput(format!(
                    "word {word:?} is not in the checkpoint vocabulary (pass --allow-unk to map it to <unk>)"
                )));
            }
        }
        Ok(self.vocab.encode(&tokens, self.max_seq_len))
    }
}

impl SentenceEncoder for TextEncoder {
    fn width(&self) -> usize {
        self.model.config.sentence_dim()
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<SentenceVector>> {
        let ids = texts
            .iter()
            .map(|t| self.ids(t))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(ids.len());
        for chunk in ids.chunks(ENCODE_CHUNK) {
            let seqs: Vec<&[usize]> = chunk.iter().map(Vec::as_slice).collect();
            out.extend(self.model.encode_batch(&seqs)?);
        }
        Ok(out)
    }
}

/// Bag-of-words baseline: the mean of a sentence's word vectors.
#[derive(Clone, Debug)]
pub struct MeanEmbeddingEncoder {
    pub table: EmbeddingTable,
    pub vocab: Vocab,
    pub allow_unk: bool,
}

impl SentenceEncoder for MeanEmbeddingEncoder {
    fn width(&self) -> usize {
        self.table.dim()
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<SentenceVector>> {
        texts
            .iter()
            .map(|text| {
                let tokens = tokenize(text);
                if tokens.is_empty() {
                    return Err(Error::InvalidInput(format!("no tokens in {text:?}")));
                }
                let mut sum = vec![0.0; self.table.dim()];
                for t in &tokens {
                    let id = match self.vocab.id(t) {
                        Some(id) => id,
                        None if self.allow_unk => crate::corpus::UNK,
                        None => {
                            return Err(Error::InvalidInput(format!(
                                "word {t:?} is not in the vocabulary"
                            )))
                        }
                    };
                    sum.iter_mut()
                        .zip(self.table.row(id))
                        .for_each(|(s, v)| *s += v);
                }
                let n = tokens.len() as f64;
                Ok(SentenceVector::new(
                    sum.into_iter().map(|s| s / n).collect(),
                ))
            })
            .collect()
    }
}
