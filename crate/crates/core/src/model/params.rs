use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncoderVariant, ModelConfig};
use crate::numkit::{Tape, Tensor, Var};

/// Draws a `fan_in × fan_out` matrix from Uniform(-a, a), `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init(fan_in: usize, fan_out: usize, seed: u64) -> Tensor {
    xavier_with(&mut ChaCha8Rng::seed_from_u64(seed), fan_in, fan_out)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn xavier_with(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let a = xavier_bound(fan_in, fan_out);
    let dist = Uniform::new(-a, a);
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("xavier shape")
}

/// GRU cell weights in row-vector form: `z = σ(x·W_z + h·U_z + b_z)` and so on.
#[derive(Clone, Debug, PartialEq)]
pub struct Gru<T> {
    pub w_z: T,
    pub w_r: T,
    pub w_h: T,
    pub u_z: T,
    pub u_r: T,
    pub u_h: T,
    pub b_z: T,
    pub b_r: T,
    pub b_h: T,
}

impl<T> Gru<T> {
    pub fn map<'a, U>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T) -> U) -> Gru<U> {
        Gru {
            w_z: f(&format!("{path}.w_z"), &self.w_z),
            w_r: f(&format!("{path}.w_r"), &self.w_r),
            w_h: f(&format!("{path}.w_h"), &self.w_h),
            u_z: f(&format!("{path}.u_z"), &self.u_z),
            u_r: f(&format!("{path}.u_r"), &self.u_r),
            u_h: f(&format!("{path}.u_h"), &self.u_h),
            b_z: f(&format!("{path}.b_z"), &self.b_z),
            b_r: f(&format!("{path}.b_r"), &self.b_r),
            b_h: f(&format!("{path}.b_h"), &self.b_h),
        }
    }

    pub fn for_each_mut<'a>(&'a mut self, path: &str, f: &mut dyn FnMut(&str, &'a mut T)) {
        f(&format!("{path}.w_z"), &mut self.w_z);
        f(&format!("{path}.w_r"), &mut self.w_r);
        f(&format!("{path}.w_h"), &mut self.w_h);
        f(&format!("{path}.u_z"), &mut self.u_z);
        f(&format!("{path}.u_r"), &mut self.u_r);
        f(&format!("{path}.u_h"), &mut self.u_h);
        f(&format!("{path}.b_z"), &mut self.b_z);
        f(&format!("{path}.b_r"), &mut self.b_r);
        f(&format!("{path}.b_h"), &mut self.b_h);
    }
}

impl Gru<Tensor> {
    /// Xavier weights, zero biases.
    pub fn init(rng: &mut ChaCha8Rng, input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_z: xavier_with(rng, input_dim, hidden_dim),
            w_r: xavier_with(rng, input_dim, hidden_dim),
            w_h: xavier_with(rng, input_dim, hidden_dim),
            u_z: xavier_with(rng, hidden_dim, hidden_dim),
            u_r: xavier_with(rng, hidden_dim, hidden_dim),
            u_h: xavier_with(rng, hidden_dim, hidden_dim),
            b_z: Tensor::zeros(&[1, hidden_dim]),
            b_r: Tensor::zeros(&[1, hidden_dim]),
            b_h: Tensor::zeros(&[1, hidden_dim]),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = Tensor::zeros(&[input_dim, hidden_dim]);
        let u = Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = Tensor::zeros(&[1, hidden_dim]);
        Self {
            w_z: w.clone(),
            w_r: w.clone(),
            w_h: w,
            u_z: u.clone(),
            u_r: u.clone(),
            u_h: u,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape) -> Gru<Var> {
        self.map("", &mut |_, t| tape.leaf(t.clone()))
    }
}

/// Affine map `x·weight + bias` with a `1 × out` bias row.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

impl<T> Linear<T> {
    pub fn map<'a, U>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T) -> U) -> Linear<U> {
        Linear {
            weight: f(&format!("{path}.weight"), &self.weight),
            bias: f(&format!("{path}.bias"), &self.bias),
        }
    }

    pub fn for_each_mut<'a>(&'a mut self, path: &str, f: &mut dyn FnMut(&str, &'a mut T)) {
        f(&format!("{path}.weight"), &mut self.weight);
        f(&format!("{path}.bias"), &mut self.bias);
    }
}

impl Linear<Tensor> {
    pub fn init(rng: &mut ChaCha8Rng, input_dim: usize, output_dim: usize) -> Self {
        Self {
            weight: xavier_with(rng, input_dim, output_dim),
            bias: Tensor::zeros(&[1, output_dim]),
        }
    }
}

/// One encoder layer: a forward cell and, for bidirectional variants, a backward cell.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub forward: Gru<T>,
    pub backward: Option<Gru<T>>,
}

/// A decoder: the bridge from the sentence vector to the initial hidden state,
/// the recurrent cell, and (unless shared) the vocabulary projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub bridge: Linear<T>,
    pub cell: Gru<T>,
    pub output: Option<Linear<T>>,
}

impl<T> Decoder<T> {
    fn map<'a, U>(&'a self, path: &str, f: &mut dyn FnMut(&str, &'a T) -> U) -> Decoder<U> {
        Decoder {
            bridge: self.bridge.map(&format!("{path}.bridge"), f),
            cell: self.cell.map(&format!("{path}.cell"), f),
            output: self
                .output
                .as_ref()
                .map(|o| o.map(&format!("{path}.output"), f)),
        }
    }

    fn for_each_mut<'a>(&'a mut self, path: &str, f: &mut dyn FnMut(&str, &'a mut T)) {
        self.bridge.for_each_mut(&format!("{path}.bridge"), f);
        self.cell.for_each_mut(&format!("{path}.cell"), f);
        if let Some(o) = self.output.as_mut() {
            o.for_each_mut(&format!("{path}.output"), f);
        }
    }
}

/// Every trainable tensor of the model. `T = Tensor` for storage and `T = Var`
/// once bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub embedding: T,
    pub encoder: Vec<EncoderLayer<T>>,
    /// Auto-decoder (regenerates the input sentence).
    pub auto: Decoder<T>,
    /// Paraphrase-decoder.
    pub para: Decoder<T>,
    /// Vocabulary projection used by both decoders when sharing is enabled.
    pub shared_output: Option<Linear<T>>,
}

pub const EMBEDDING_NAME: &str = "embedding";

impl<T> ModelParams<T> {
    /// Applies `f` to every tensor in canonical order, with its dotted name.
    pub fn map<'a, U>(&'a self, f: &mut dyn FnMut(&str, &'a T) -> U) -> ModelParams<U> {
        let embedding = f(EMBEDDING_NAME, &self.embedding);
        let encoder = self
            .encoder
            .iter()
            .enumerate()
            .map(|(i, layer)| EncoderLayer {
                forward: layer.forward.map(&format!("encoder.{i}.forward"), f),
                backward: layer
                    .backward
                    .as_ref()
                    .map(|b| b.map(&format!("encoder.{i}.backward"), f)),
            })
            .collect();
        ModelParams {
            embedding,
            encoder,
            auto: self.auto.map("auto", f),
            para: self.para.map("para", f),
            shared_output: self.shared_output.as_ref().map(|o| o.map("output", f)),
        }
    }

    pub fn for_each_mut<'a>(&'a mut self, f: &mut dyn FnMut(&str, &'a mut T)) {
        f(EMBEDDING_NAME, &mut self.embedding);
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            layer
                .forward
                .for_each_mut(&format!("encoder.{i}.forward"), f);
            if let Some(b) = layer.backward.as_mut() {
                b.for_each_mut(&format!("encoder.{i}.backward"), f);
            }
        }
        self.auto.for_each_mut("auto", f);
        self.para.for_each_mut("para", f);
        if let Some(o) = self.shared_output.as_mut() {
            o.for_each_mut("output", f);
        }
    }

    /// `(name, tensor)` in canonical order.
    pub fn named(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        self.map(&mut |name, t| out.push((name.to_string(), t)));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut T)> {
        let mut out = Vec::new();
        self.for_each_mut(&mut |name, t| out.push((name.to_string(), t)));
        out
    }

    /// Output projection for the auto (`para = false`) or paraphrase decoder.
    pub fn output_for(&self, para: bool) -> &Linear<T> {
        let dec = if para { &self.para } else { &self.auto };
        dec.output
            .as_ref()
            .or(self.shared_output.as_ref())
            .expect("either per-decoder or shared output projection")
    }
}

impl ModelParams<Tensor> {
    /// Xavier-initialized weights around a given embedding table.
    pub fn init(config: &ModelConfig, embedding: Tensor, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(super::INIT_STREAM);
        let (e, h, v) = (config.embed_dim, config.hidden_dim, config.vocab_size);

        let bi = config.variant.bidirectional();
        let mut encoder = Vec::new();
        for layer in 0..config.variant.layers() {
            let input = match (layer, config.variant) {
                (0, _) => e,
                (_, EncoderVariant::TwoLayerBi) => 2 * h,
                _ => h,
            };
            let forward = Gru::init(&mut rng, input, h);
            let backward = bi.then(|| Gru::init(&mut rng, input, h));
            encoder.push(EncoderLayer { forward, backward });
        }

        let decoder = |rng: &mut ChaCha8Rng| Decoder {
            bridge: Linear::init(rng, 2 * h, h),
            cell: Gru::init(rng, e, h),
            output: (!config.shared_output).then(|| Linear::init(rng, h, v)),
        };
        let auto = decoder(&mut rng);
        let para = decoder(&mut rng);
        let shared_output = config.shared_output.then(|| Linear::init(&mut rng, h, v));

        Self {
            embedding,
            encoder,
            auto,
            para,
            shared_output,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelParams<Var> {
        self.map(&mut |_, t| tape.leaf(t.clone()))
    }

    pub fn parameter_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}
