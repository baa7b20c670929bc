//! Tape-level forward pass: GRU recurrence, the three encoder layouts, and
//! teacher-forced decoder likelihoods over padded batches.

use super::params::{Decoder, Gru, Linear, ModelParams};
use super::EncoderVariant;
use crate::corpus::{EOS, PAD, SOS};
use crate::numkit::{NumError, Tape, Tensor, Var};

/// One GRU update for a `[batch, input]` input and `[batch, hidden]` state.
///
/// `z = σ(x·W_z + h·U_z + b_z)`, `r = σ(x·W_r + h·U_r + b_r)`,
/// `h̃ = tanh(x·W_h + (r⊙h)·U_h + b_h)`, `h' = (1 - z)⊙h + z⊙h̃`.
pub fn gru_step(tape: &mut Tape, cell: &Gru<Var>, x: Var, h: Var) -> Result<Var, NumError> {
    let rows = tape.value(x).shape()[0];
    let biases = TiledBias::new(tape, cell, rows)?;
    step_with(tape, cell, &biases, x, h)
}

struct TiledBias {
    z: Var,
    r: Var,
    h: Var,
}

impl TiledBias {
    fn new(tape: &mut Tape, cell: &Gru<Var>, rows: usize) -> Result<Self, NumError> {
        Ok(Self {
            z: tape.tile_rows(cell.b_z, rows)?,
            r: tape.tile_rows(cell.b_r, rows)?,
            h: tape.tile_rows(cell.b_h, rows)?,
        })
    }
}

fn gate(tape: &mut Tape, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var, NumError> {
    let xw = tape.matmul(x, w)?;
    let hu = tape.matmul(h, u)?;
    let s = tape.add(xw, hu)?;
    tape.add(s, b)
}

fn step_with(
    tape: &mut Tape,
    cell: &Gru<Var>,
    bias: &TiledBias,
    x: Var,
    h: Var,
) -> Result<Var, NumError> {
    let z_pre = gate(tape, x, cell.w_z, h, cell.u_z, bias.z)?;
    let z = tape.sigmoid(z_pre);
    let r_pre = gate(tape, x, cell.w_r, h, cell.u_r, bias.r)?;
    let r = tape.sigmoid(r_pre);
    let rh = tape.mul(r, h)?;
    let cand_pre = gate(tape, x, cell.w_h, rh, cell.u_h, bias.h)?;
    let cand = tape.tanh(cand_pre);
    // (1 - z)⊙h + z⊙h̃ written as h + z⊙(h̃ - h)
    let delta = tape.sub(cand, h)?;
    let moved = tape.mul(z, delta)?;
    tape.add(h, moved)
}

/// Right-padded id sequences stored time-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Padded {
    /// `steps × batch` ids, PAD past each sequence's end.
    pub ids: Vec<Vec<usize>>,
    pub lens: Vec<usize>,
}

impl Padded {
    /// Pads to the longest sequence, or to `min_steps` if that is longer.
    pub fn new(seqs: &[&[usize]], min_steps: usize) -> Result<Self, NumError> {
        if seqs.is_empty() || seqs.iter().any(|s| s.is_empty()) {
            return Err(NumError::Empty("padded batch"));
        }
        let steps = seqs
            .iter()
            .map(|s| s.len())
            .max()
            .unwrap_or(0)
            .max(min_steps);
        let ids = (0..steps)
            .map(|t| {
                seqs.iter()
                    .map(|s| s.get(t).copied().unwrap_or(PAD))
                    .collect()
            })
            .collect();
        Ok(Self {
            ids,
            lens: seqs.iter().map(|s| s.len()).collect(),
        })
    }

    pub fn batch(&self) -> usize {
        self.lens.len()
    }

    pub fn steps(&self) -> usize {
        self.ids.len()
    }

    /// `[batch, width]` 0/1 mask for step `t`, or `None` when every row is live.
    fn mask(&self, tape: &mut Tape, t: usize, width: usize) -> Option<Var> {
        if self.lens.iter().all(|&l| t < l) {
            return None;
        }
        let data = self
            .lens
            .iter()
            .flat_map(|&l| std::iter::repeat_n(if t < l { 1.0 } else { 0.0 }, width))
            .collect();
        let m = Tensor::new(vec![self.batch(), width], data).expect("mask shape");
        Some(tape.leaf(m))
    }
}

/// Runs one direction of one layer over per-step inputs, holding each row's
/// state fixed across its padding. Returns per-step outputs and the final state.
fn run_direction(
    tape: &mut Tape,
    cell: &Gru<Var>,
    inputs: &[Var],
    batch: &Padded,
    reverse: bool,
) -> Result<(Vec<Var>, Var), NumError> {
    let hidden = tape.value(cell.u_z).shape()[0];
    let rows = batch.batch();
    let bias = TiledBias::new(tape, cell, rows)?;
    let mut h = tape.leaf(Tensor::zeros(&[rows, hidden]));
    let mut outputs = vec![h; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for t in order {
        let next = step_with(tape, cell, &bias, inputs[t], h)?;
        h = match batch.mask(tape, t, hidden) {
            None => next,
            Some(m) => {
                let delta = tape.sub(next, h)?;
                let kept = tape.mul(m, delta)?;
                tape.add(h, kept)?
            }
        };
        outputs[t] = h;
    }
    Ok((outputs, h))
}

fn embed_steps(tape: &mut Tape, embedding: Var, batch: &Padded) -> Result<Vec<Var>, NumError> {
    batch
        .ids
        .iter()
        .map(|ids| tape.gather_rows(embedding, ids))
        .collect()
}

/// Sentence vectors `[batch, 2·hidden]` for a padded batch.
///
/// One-layer bi: final forward ‖ final backward. Two-layer forward: layer-1
/// final ‖ layer-2 final. Two-layer bi: layer-2 final forward ‖ layer-2 final
/// backward. Initial states are zero.
pub fn encode(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    variant: EncoderVariant,
    batch: &Padded,
) -> Result<Var, NumError> {
    let inputs = embed_steps(tape, params.embedding, batch)?;
    let layer = |i: usize| -> Result<_, NumError> {
        params
            .encoder
            .get(i)
            .ok_or(NumError::Empty("encoder layer"))
    };
    match variant {
        EncoderVariant::OneLayerBi => {
            let l0 = layer(0)?;
            let bwd = l0
                .backward
                .as_ref()
                .ok_or(NumError::Empty("backward cell"))?;
            let (_, f) = run_direction(tape, &l0.forward, &inputs, batch, false)?;
            let (_, b) = run_direction(tape, bwd, &inputs, batch, true)?;
            tape.concat(&[f, b], 1)
        }
        EncoderVariant::TwoLayerForward => {
            let (l0, l1) = (layer(0)?, layer(1)?);
            let (outs, f0) = run_direction(tape, &l0.forward, &inputs, batch, false)?;
            let (_, f1) = run_direction(tape, &l1.forward, &outs, batch, false)?;
            tape.concat(&[f0, f1], 1)
        }
        EncoderVariant::TwoLayerBi => {
            let (l0, l1) = (layer(0)?, layer(1)?);
            let b0 = l0
                .backward
                .as_ref()
                .ok_or(NumError::Empty("backward cell"))?;
            let b1 = l1
                .backward
                .as_ref()
                .ok_or(NumError::Empty("backward cell"))?;
            let (fo, _) = run_direction(tape, &l0.forward, &inputs, batch, false)?;
            let (bo, _) = run_direction(tape, b0, &inputs, batch, true)?;
            let mid = fo
                .iter()
                .zip(&bo)
                .map(|(&f, &b)| tape.concat(&[f, b], 1))
                .collect::<Result<Vec<_>, _>>()?;
            let (_, f1) = run_direction(tape, &l1.forward, &mid, batch, false)?;
            let (_, b1) = run_direction(tape, b1, &mid, batch, true)?;
            tape.concat(&[f1, b1], 1)
        }
    }
}

/// Initial decoder state from the sentence vector.
fn bridge(tape: &mut Tape, lin: &Linear<Var>, sv: Var) -> Result<Var, NumError> {
    affine(tape, lin, sv)
}

fn affine(tape: &mut Tape, lin: &Linear<Var>, x: Var) -> Result<Var, NumError> {
    let rows = tape.value(x).shape()[0];
    let xw = tape.matmul(x, lin.weight)?;
    let b = tape.tile_rows(lin.bias, rows)?;
    tape.add(xw, b)
}

/// Teacher-forced negative log-likelihood of `targets` given sentence vectors.
///
/// Each row's NLL is averaged over its own steps (PAD steps excluded), then the
/// rows are averaged, so the value does not depend on how a row was padded.
pub fn decoder_nll(
    tape: &mut Tape,
    sv: Var,
    targets: &Padded,
    decoder: &Decoder<Var>,
    output: &Linear<Var>,
    embedding: Var,
) -> Result<Var, NumError> {
    let rows = targets.batch();
    if tape.value(sv).shape()[0] != rows {
        return Err(NumError::ShapeMismatch {
            op: "decoder_nll",
            left: tape.value(sv).shape().to_vec(),
            right: vec![rows],
        });
    }
    let vocab = tape.value(output.weight).shape()[1];
    let bias = TiledBias::new(tape, &decoder.cell, rows)?;
    let mut h = bridge(tape, &decoder.bridge, sv)?;
    let mut total: Option<Var> = None;
    for t in 0..targets.steps() {
        let prev: Vec<usize> = if t == 0 {
            vec![SOS; rows]
        } else {
            targets.ids[t - 1].clone()
        };
        let x = tape.gather_rows(embedding, &prev)?;
        h = step_with(tape, &decoder.cell, &bias, x, h)?;
        let logits = affine(tape, output, h)?;
        let logp = tape.log_softmax(logits, 1)?;

        let mut weights = vec![0.0; rows * vocab];
        for (b, (&gold, &len)) in targets.ids[t].iter().zip(&targets.lens).enumerate() {
            if t < len {
                if gold >= vocab {
                    return Err(NumError::Index {
                        index: gold,
                        rows: vocab,
                    });
                }
                weights[b * vocab + gold] = 1.0 / (len * rows) as f64;
            }
        }
        let w = tape.leaf(Tensor::new(vec![rows, vocab], weights)?);
        let picked = tape.mul(logp, w)?;
        let step_sum = tape.sum(picked);
        total = Some(match total {
            None => step_sum,
            Some(acc) => tape.add(acc, step_sum)?,
        });
    }
    let total = total.ok_or(NumError::Empty("decoder targets"))?;
    Ok(tape.scale(total, -1.0))
}

/// Loss components recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub auto: Var,
    pub para: Var,
    pub total: Var,
}

/// `l_auto(s → s) + α · l_para(s → p)` from a single encoding of the sources.
pub fn pair_loss(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    variant: EncoderVariant,
    sources: &Padded,
    paraphrases: &Padded,
    alpha: f64,
) -> Result<LossVars, NumError> {
    let sv = encode(tape, params, variant, sources)?;
    let auto = decoder_nll(
        tape,
        sv,
        sources,
        &params.auto,
        params.output_for(false),
        params.embedding,
    )?;
    let para = decoder_nll(
        tape,
        sv,
        paraphrases,
        &params.para,
        params.output_for(true),
        params.embedding,
    )?;
    let weighted = tape.scale(para, alpha);
    let total = tape.add(auto, weighted)?;
    Ok(LossVars { auto, para, total })
}

/// Greedy argmax decoding from one sentence vector, stopping after EOS or
/// `max_len` tokens. The returned ids include the EOS when one was produced.
pub fn greedy_decode(
    tape: &mut Tape,
    sv: Var,
    decoder: &Decoder<Var>,
    output: &Linear<Var>,
    embedding: Var,
    max_len: usize,
) -> Result<Vec<usize>, NumError> {
    let bias = TiledBias::new(tape, &decoder.cell, 1)?;
    let mut h = bridge(tape, &decoder.bridge, sv)?;
    let mut prev = SOS;
    let mut out = Vec::new();
    while out.len() < max_len {
        let x = tape.gather_rows(embedding, &[prev])?;
        h = step_with(tape, &decoder.cell, &bias, x, h)?;
        let logits = affine(tape, output, h)?;
        let scores = tape.value(logits).data();
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        out.push(best);
        if best == EOS {
            break;
        }
        prev = best;
    }
    Ok(out)
}
