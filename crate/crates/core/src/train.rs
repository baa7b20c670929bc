//! Mini-batch Adam training over ordered paraphrase pairs.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{SentencePair, DEFAULT_MAX_SEQ_LEN};
use crate::model::{check_alpha, pair_loss, LossParts, Model, Padded, EMBEDDING_NAME};
use crate::numkit::{Tape, Tensor};
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_seq_len: usize,
    pub unfreeze_embeddings: bool,
    /// Global gradient-norm clip; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 4,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            unfreeze_embeddings: false,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("adam epsilon must be positive");
        }
        if self.max_seq_len < 2 {
            return bad("max sequence length must leave room for one token and EOS");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip norm must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// One Adam update.
///
/// `grads[i] = None` leaves `params[i]` and its moments untouched (frozen
/// tensors). Every gradient is checked for finiteness before anything moves.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidInput(format!(
            "{} parameters but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::InvalidInput(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len()
        || state
            .m
            .iter()
            .zip(params.iter())
            .any(|(m, (_, p))| m.len() != p.len())
    {
        return Err(Error::InvalidInput(
            "optimizer state does not match parameters".into(),
        ));
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else {
            continue;
        };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = config.beta1 * *mi + (1.0 - config.beta1) * gi;
            *vi = config.beta2 * *vi + (1.0 - config.beta2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    pub auto: f64,
    pub para: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<TraceRecord>,
}

impl LossTrace {
    pub fn write_tsv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "step\tl_auto\tl_para\ttotal")?;
        for r in &self.records {
            writeln!(out, "{}\t{}\t{}\t{}", r.step, r.auto, r.para, r.total)?;
        }
        Ok(())
    }
}

/// Mean losses over one pass of the data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    pub mean: LossParts,
}

/// Owns a model while it trains.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: AdamState,
    pub trace: LossTrace,
    pub epochs_completed: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model,
            config,
            adam: AdamState::default(),
            trace: LossTrace::default(),
            epochs_completed: 0,
        })
    }

    /// Continues from saved optimizer state.
    pub fn resume(
        model: Model,
        config: TrainConfig,
        adam: AdamState,
        epochs_completed: usize,
    ) -> Result<Self> {
        let mut trainer = Self::new(model, config)?;
        trainer.adam = adam;
        trainer.epochs_completed = epochs_completed;
        Ok(trainer)
    }

    pub fn steps_completed(&self) -> u64 {
        self.adam.t
    }

    /// Forward, backward and one Adam update on `batch`.
    pub fn step(&mut self, batch: &[&SentencePair]) -> Result<LossParts> {
        self.step_padded(batch, 0)
    }

    fn step_padded(&mut self, batch: &[&SentencePair], min_steps: usize) -> Result<LossParts> {
        let step = self.adam.t + 1;
        let mut tape = Tape::new();
        let vars = self.model.params.bind(&mut tape);
        let sources: Vec<&[usize]> = batch.iter().map(|p| p.source.as_slice()).collect();
        let targets: Vec<&[usize]> = batch.iter().map(|p| p.target.as_slice()).collect();
        let loss = pair_loss(
            &mut tape,
            &vars,
            self.model.config.variant,
            &Padded::new(&sources, min_steps)?,
            &Padded::new(&targets, min_steps)?,
            self.config.alpha,
        )?;
        let parts = LossParts {
            auto: tape.scalar(loss.auto),
            para: tape.scalar(loss.para),
            total: tape.scalar(loss.total),
        };
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        let grads = tape.backward(loss.total)?;
        let unfreeze = self.config.unfreeze_embeddings;
        let mut grads: Vec<Option<Tensor>> = vars
            .named()
            .into_iter()
            .map(|(name, &v)| (unfreeze || name != EMBEDDING_NAME).then(|| grads.tensor(v)))
            .collect();
        if let Some(limit) = self.config.clip_norm {
            clip_global_norm(&mut grads, limit);
        }
        let mut params = self.model.params.named_mut();
        adam_step(&mut params, &grads, &mut self.adam, &self.config.adam()).map_err(
            |e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at step {step}")),
                other => other,
            },
        )?;
        self.trace.records.push(TraceRecord {
            step,
            auto: parts.auto,
            para: parts.para,
            total: parts.total,
        });
        Ok(parts)
    }

    /// Batches of pair indices for `epoch`, shuffled under the run seed.
    pub fn epoch_order(&self, pair_count: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(SHUFFLE_STREAM + epoch as u64);
        let mut order: Vec<usize> = (0..pair_count).collect();
        order.shuffle(&mut rng);
        order
            .chunks(self.config.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }

    /// One shuffled pass over `pairs`.
    pub fn run_epoch(&mut self, pairs: &[SentencePair]) -> Result<EpochSummary> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("no training pairs".into()));
        }
        let epoch = self.epochs_completed;
        let mut sum = LossParts {
            auto: 0.0,
            para: 0.0,
            total: 0.0,
        };
        let batches = self.epoch_order(pairs.len(), epoch);
        for idx in &batches {
            let batch: Vec<&SentencePair> = idx.iter().map(|&i| &pairs[i]).collect();
            let l = self.step(&batch)?;
            let w = idx.len() as f64;
            sum.auto += l.auto * w;
            sum.para += l.para * w;
            sum.total += l.total * w;
        }
        self.epochs_completed += 1;
        let n = pairs.len() as f64;
        Ok(EpochSummary {
            epoch,
            steps: batches.len(),
            mean: LossParts {
                auto: sum.auto / n,
                para: sum.para / n,
                total: sum.total / n,
            },
        })
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn train(
        &mut self,
        pairs: &[SentencePair],
        mut on_epoch: impl FnMut(&Trainer, &EpochSummary) -> Result<()>,
    ) -> Result<Vec<EpochSummary>> {
        let mut summaries = Vec::new();
        while self.epochs_completed < self.config.epochs {
            let summary = self.run_epoch(pairs)?;
            on_epoch(self, &summary)?;
            summaries.push(summary);
        }
        Ok(summaries)
    }

    /// Pair-weighted mean loss over `pairs` without updating anything.
    pub fn evaluate(&self, pairs: &[SentencePair]) -> Result<LossParts> {
        evaluate_loss(
            &self.model,
            pairs,
            self.config.alpha,
            self.config.batch_size,
        )
    }
}

pub fn evaluate_loss(
    model: &Model,
    pairs: &[SentencePair],
    alpha: f64,
    batch_size: usize,
) -> Result<LossParts> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput("no pairs to evaluate".into()));
    }
    let mut sum = [0.0; 3];
    for chunk in pairs.chunks(batch_size.max(1)) {
        let refs: Vec<&SentencePair> = chunk.iter().collect();
        let l = model.batch_loss(&refs, alpha)?;
        let w = chunk.len() as f64;
        sum[0] += l.auto * w;
        sum[1] += l.para * w;
        sum[2] += l.total * w;
    }
    let n = pairs.len() as f64;
    Ok(LossParts {
        auto: sum[0] / n,
        para: sum[1] / n,
        total: sum[2] / n,
    })
}

fn clip_global_norm(grads: &mut [Option<Tensor>], limit: f64) {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > limit {
        let scale = limit / norm;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Trains a fresh trainer for `config.epochs` and returns the model and trace.
pub fn train(
    pairs: &[SentencePair],
    model: Model,
    config: TrainConfig,
) -> Result<(Model, LossTrace)> {
    let mut trainer = Trainer::new(model, config)?;
    trainer.train(pairs, |_, _| Ok(()))?;
    Ok((trainer.model, trainer.trace))
}
