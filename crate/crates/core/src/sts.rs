//! Semantic-textual-similarity head.
//!
//! Pair features `[u⊙v ; |u−v|]` feed a softmax classifier over five score
//! bins. Gold scores become sparse two-bin distributions whose expectation is
//! the score, and predictions are read back as the expected bin value.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;

use crate::metrics::pearson;
use crate::model::{xavier_init, SentenceEncoder, SentenceVector};
use crate::numkit::{Tape, Tensor};
use crate::train::{adam_step, AdamConfig, AdamState};
use crate::{Error, Result};

pub const BINS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "dev" => Ok(Self::Dev),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split {other:?} (train, dev, test)")),
        }
    }
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Dev => "dev",
            Self::Test => "test",
        }
    }
}

/// A scored sentence pair; `score` lies in `[0, 5]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StsRecord {
    pub split: Split,
    pub score: f64,
    pub sentence_1: String,
    pub sentence_2: String,
}

const HEADER: &str = "split\tscore\tsentence_1\tsentence_2";

/// Parses `split \t score \t sentence_1 \t sentence_2` lines. An exact header
/// line is allowed first; anything else malformed fails with its line number.
pub fn read_sts(input: impl Read, source_name: &str) -> Result<Vec<StsRecord>> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() || (lineno == 1 && line == HEADER) {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [split, score, s1, s2] = fields[..] else {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        };
        let split = split
            .parse()
            .map_err(|e: String| Error::parse(source_name, lineno, e))?;
        let score: f64 = score
            .parse()
            .map_err(|e| Error::parse(source_name, lineno, format!("bad score {score:?}: {e}")))?;
        if !(0.0..=5.0).contains(&score) {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("score {score} outside [0, 5]"),
            ));
        }
        records.push(StsRecord {
            split,
            score,
            sentence_1: s1.to_string(),
            sentence_2: s2.to_string(),
        });
    }
    Ok(records)
}

pub fn load_sts(path: &Path) -> Result<Vec<StsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_sts(file, &path.display().to_string())
}

/// Probability vector over score bins 1..=5.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetDistribution(pub [f64; BINS]);

impl TargetDistribution {
    /// `Σ_i i · d_i`
    pub fn expectation(&self) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(i, d)| (i + 1) as f64 * d)
            .sum()
    }
}

/// Spreads a score over its two neighbouring integer bins.
///
/// With `f = ⌊y⌋`: bin `f` gets `f − y + 1` and bin `f + 1` gets `y − f`, so
/// the expectation equals `y`. Scores below 1 are clamped to bin 1.
pub fn target_transform(y: f64) -> Result<TargetDistribution> {
    if !(0.0..=5.0).contains(&y) {
        return Err(Error::InvalidInput(format!(
            "similarity score {y} outside [0, 5]"
        )));
    }
    let y = y.max(1.0);
    let floor = y.floor();
    let mut d = [0.0; BINS];
    let low = floor as usize;
    if low == BINS {
        d[BINS - 1] = 1.0;
    } else {
        d[low - 1] = floor - y + 1.0;
        d[low] = y - floor;
    }
    Ok(TargetDistribution(d))
}

/// `[u ⊙ v ; |u − v|]`
pub fn features(u: &SentenceVector, v: &SentenceVector) -> Result<Vec<f64>> {
    if u.width() != v.width() {
        return Err(Error::InvalidInput(format!(
            "feature inputs differ in width: {} vs {}",
            u.width(),
            v.width()
        )));
    }
    let (a, b) = (u.values(), v.values());
    let mut out: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    out.extend(a.iter().zip(b).map(|(x, y)| (x - y).abs()));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Squared-weight penalty; zero disables it.
    pub l2: f64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.05,
            seed: 0,
            l2: 0.0,
        }
    }
}

/// Softmax classifier over the five bins.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutModel {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ReadoutModel {
    pub fn init(feature_dim: usize, seed: u64) -> Self {
        Self {
            weight: xavier_init(feature_dim, BINS, seed),
            bias: Tensor::zeros(&[1, BINS]),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Bin probabilities for one feature vector.
    pub fn predict_distribution(&self, x: &[f64]) -> Result<[f64; BINS]> {
        if x.len() != self.feature_dim() {
            return Err(Error::InvalidInput(format!(
                "feature width {} does not match readout width {}",
                x.len(),
                self.feature_dim()
            )));
        }
        let mut logits = [0.0; BINS];
        logits.copy_from_slice(self.bias.data());
        for (xi, row) in x.iter().zip(self.weight.data().chunks(BINS)) {
            for (l, w) in logits.iter_mut().zip(row) {
                *l += xi * w;
            }
        }
        Ok(softmax(logits))
    }
}

fn softmax(logits: [f64; BINS]) -> [f64; BINS] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = logits.map(|l| (l - max).exp());
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Expected bin value `r · p`, always within `[1, 5]`.
pub fn expected_score(p: &[f64; BINS]) -> f64 {
    let s: f64 = p.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum();
    s.clamp(1.0, 5.0)
}

pub fn predict_score(model: &ReadoutModel, x: &[f64]) -> Result<f64> {
    Ok(expected_score(&model.predict_distribution(x)?))
}

/// Fitted readout plus the full-batch loss before each update.
#[derive(Clone, Debug)]
pub struct ReadoutFit {
    pub model: ReadoutModel,
    pub losses: Vec<f64>,
}

/// Minimizes mean cross-entropy `−Σ d_i log p̂_i` with full-batch Adam.
pub fn fit_readout(
    features: &[Vec<f64>],
    targets: &[TargetDistribution],
    config: &ReadoutConfig,
) -> Result<ReadoutFit> {
    if features.is_empty() || features.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "readout needs equal, non-zero counts of features ({}) and targets ({})",
            features.len(),
            targets.len()
        )));
    }
    let dim = features[0].len();
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidInput(
            "readout features must share one non-zero width".into(),
        ));
    }
    let n = features.len();
    let x = Tensor::new(vec![n, dim], features.concat())?;
    let d = Tensor::new(vec![n, BINS], targets.iter().flat_map(|t| t.0).collect())?;

    let mut model = ReadoutModel::init(dim, config.seed);
    let mut state = AdamState::default();
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let dv = tape.leaf(d.clone());
        let w = tape.leaf(model.weight.clone());
        let b = tape.leaf(model.bias.clone());
        let xw = tape.matmul(xv, w)?;
        let bt = tape.tile_rows(b, n)?;
        let logits = tape.add(xw, bt)?;
        let logp = tape.log_softmax(logits, 1)?;
        let weighted = tape.mul(logp, dv)?;
        let total = tape.sum(weighted);
        let mut loss = tape.scale(total, -1.0 / n as f64);
        if config.l2 > 0.0 {
            let sq = tape.mul(w, w)?;
            let sq = tape.sum(sq);
            let penalty = tape.scale(sq, config.l2);
            loss = tape.add(loss, penalty)?;
        }
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "readout loss at step {}",
                step + 1
            )));
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        let g = [Some(grads.tensor(w)), Some(grads.tensor(b))];
        let mut params = [
            ("readout.weight".to_string(), &mut model.weight),
            ("readout.bias".to_string(), &mut model.bias),
        ];
        adam_step(&mut params, &g, &mut state, &adam)?;
    }
    Ok(ReadoutFit { model, losses })
}

/// Mean cross-entropy of `model` on a labelled set.
pub fn cross_entropy(
    model: &ReadoutModel,
    features: &[Vec<f64>],
    targets: &[TargetDistribution],
) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in features.iter().zip(targets) {
        let p = model.predict_distribution(x)?;
        total -=
            t.0.iter()
                .zip(&p)
                .filter(|(d, _)| **d > 0.0)
                .map(|(d, q)| d * q.ln())
                .sum::<f64>();
    }
    Ok(total / features.len() as f64)
}

/// Features and targets for a set of records.
pub fn prepare(
    records: &[&StsRecord],
    encoder: &dyn SentenceEncoder,
) -> Result<(Vec<Vec<f64>>, Vec<TargetDistribution>)> {
    let left: Vec<&str> = records.iter().map(|r| r.sentence_1.as_str()).collect();
    let right: Vec<&str> = records.iter().map(|r| r.sentence_2.as_str()).collect();
    let u = encoder.encode_texts(&left)?;
    let v = encoder.encode_texts(&right)?;
    let feats = u
        .iter()
        .zip(&v)
        .map(|(a, b)| features(a, b))
        .collect::<Result<Vec<_>>>()?;
    let targets = records
        .iter()
        .map(|r| target_transform(r.score))
        .collect::<Result<Vec<_>>>()?;
    Ok((feats, targets))
}

/// Predicted scores for records.
pub fn predict_records(
    records: &[&StsRecord],
    encoder: &dyn SentenceEncoder,
    model: &ReadoutModel,
) -> Result<Vec<f64>> {
    let (feats, _) = prepare(records, encoder)?;
    feats.iter().map(|f| predict_score(model, f)).collect()
}

/// Pearson correlation between predicted and gold scores.
pub fn evaluate(
    records: &[&StsRecord],
    encoder: &dyn SentenceEncoder,
    model: &ReadoutModel,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records to evaluate".into()));
    }
    let predicted = predict_records(records, encoder, model)?;
    let gold: Vec<f64> = records.iter().map(|r| r.score).collect();
    pearson(&predicted, &gold)
}

/// Encoder backed by a fixed sentence-to-vector table.
#[derive(Clone, Debug, Default)]
pub struct LookupEncoder {
    width: usize,
    table: HashMap<String, SentenceVector>,
}

impl LookupEncoder {
    pub fn new(entries: impl IntoIterator<Item = (String, SentenceVector)>) -> Result<Self> {
        let table: HashMap<_, _> = entries.into_iter().collect();
        let width = table.values().next().map_or(0, SentenceVector::width);
        if width == 0 || table.values().any(|v| v.width() != width) {
            return Err(Error::InvalidInput(
                "lookup vectors must share one non-zero width".into(),
            ));
        }
        Ok(Self { width, table })
    }
}

impl SentenceEncoder for LookupEncoder {
    fn width(&self) -> usize {
        self.width
    }

    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<SentenceVector>> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(*t)
                    .cloned()
                    .ok_or_else(|| Error::InvalidInput(format!("no vector for sentence {t:?}")))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StsReport {
    pub train_size: usize,
    pub dev: Option<(usize, f64)>,
    pub test: (usize, f64),
}

/// Fits on the train split and scores dev (when present) and test.
pub fn run_benchmark(
    records: &[StsRecord],
    encoder: &dyn SentenceEncoder,
    config: &ReadoutConfig,
) -> Result<StsReport> {
    let pick = |s: Split| {
        records
            .iter()
            .filter(move |r| r.split == s)
            .collect::<Vec<_>>()
    };
    let (train, dev, test) = (pick(Split::Train), pick(Split::Dev), pick(Split::Test));
    for (name, split) in [("train", &train), ("test", &test)] {
        if split.is_empty() {
            return Err(Error::InvalidInput(format!("STS data has no {name} split")));
        }
    }
    let (feats, targets) = prepare(&train, encoder)?;
    let fit = fit_readout(&feats, &targets, config)?;
    let dev = if dev.is_empty() {
        None
    } else {
        Some((dev.len(), evaluate(&dev, encoder, &fit.model)?))
    };
    Ok(StsReport {
        train_size: train.len(),
        dev,
        test: (test.len(), evaluate(&test, encoder, &fit.model)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn transform_examples() {
        assert!(close(
            &target_transform(3.7).unwrap().0,
            &[0.0, 0.0, 0.3, 0.7, 0.0]
        ));
        assert_eq!(target_transform(5.0).unwrap().0, [0.0, 0.0, 0.0, 0.0, 1.0]);
        let two = target_transform(2.0).unwrap();
        assert_eq!(two.0, [0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(two.expectation(), 2.0);
    }

    #[test]
    fn scores_below_one_clamp_to_the_first_bin() {
        assert_eq!(target_transform(0.0).unwrap().0, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(target_transform(0.6).unwrap().0, [1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(target_transform(-0.1).is_err());
        assert!(target_transform(5.01).is_err());
    }

    #[test]
    fn feature_examples() {
        let u = SentenceVector::new(vec![1.0, 2.0]);
        let v = SentenceVector::new(vec![3.0, -1.0]);
        assert_eq!(features(&u, &v).unwrap(), vec![3.0, -2.0, 2.0, 3.0]);
        assert_eq!(features(&v, &u).unwrap(), features(&u, &v).unwrap());
        assert_eq!(&features(&u, &u).unwrap()[2..], &[0.0, 0.0]);
        assert!(features(&u, &SentenceVector::new(vec![1.0])).is_err());
    }

    #[test]
    fn score_readout_examples() {
        assert!((expected_score(&[0.2; 5]) - 3.0).abs() < 1e-12);
        assert_eq!(expected_score(&[0.0, 0.0, 0.0, 0.0, 1.0]), 5.0);
        assert!((expected_score(&[0.0, 0.0, 0.3, 0.7, 0.0]) - 3.7).abs() < 1e-12);

        let zero = ReadoutModel {
            weight: Tensor::zeros(&[3, BINS]),
            bias: Tensor::zeros(&[1, BINS]),
        };
        assert!((predict_score(&zero, &[1.0, -4.0, 9.0]).unwrap() - 3.0).abs() < 1e-12);
        assert!(predict_score(&zero, &[1.0]).is_err());
    }

    #[test]
    fn separable_examples_fit() {
        let feats = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let targets: Vec<_> = [1.0, 2.0, 4.0, 5.0]
            .iter()
            .map(|&y| target_transform(y).unwrap())
            .collect();
        let fit = fit_readout(&feats, &targets, &ReadoutConfig::default()).unwrap();
        let ce = cross_entropy(&fit.model, &feats, &targets).unwrap();
        assert!(ce < 0.1, "cross-entropy {ce}");
        assert!((fit.losses.last().unwrap() - ce).abs() < 0.05);
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let feats = vec![vec![1.0, 2.0]];
        let targets = vec![target_transform(3.0).unwrap()];
        let cfg = ReadoutConfig {
            steps: 0,
            seed: 11,
            ..Default::default()
        };
        let fit = fit_readout(&feats, &targets, &cfg).unwrap();
        assert_eq!(fit.model, ReadoutModel::init(2, 11));
        assert!(fit.losses.is_empty());
    }

    #[test]
    fn duplicated_training_set_gives_the_same_model() {
        let feats: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![i as f64 * 0.3 - 0.7, (i % 3) as f64])
            .collect();
        let targets: Vec<_> = (0..6)
            .map(|i| target_transform(1.0 + i as f64 * 0.7).unwrap())
            .collect();
        let cfg = ReadoutConfig {
            steps: 50,
            ..Default::default()
        };
        let once = fit_readout(&feats, &targets, &cfg).unwrap().model;
        let twice = fit_readout(
            &[feats.clone(), feats].concat(),
            &[targets.clone(), targets].concat(),
            &cfg,
        )
        .unwrap()
        .model;
        for (a, b) in once.weight.data().iter().zip(twice.weight.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn convex_loss_is_non_increasing_at_small_rate() {
        let feats: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos(), 0.5])
            .collect();
        let targets: Vec<_> = (0..10)
            .map(|i| target_transform(1.0 + 0.4 * i as f64).unwrap())
            .collect();
        let cfg = ReadoutConfig {
            steps: 200,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let fit = fit_readout(&feats, &targets, &cfg).unwrap();
        for w in fit.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn parser_is_strict() {
        let text = "split\tscore\tsentence_1\tsentence_2\ntrain\t3.5\ta b\tc d\ntest\t0\tx\ty\n";
        let recs = read_sts(text.as_bytes(), "s").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].split, Split::Train);
        assert_eq!(recs[1].score, 0.0);
        for (bad, line) in [
            ("train\t3.5\ta b\n", 1),
            ("train\t6\ta\tb\n", 1),
            ("train\t1\ta\tb\nvalid\t1\ta\tb\n", 2),
            ("train\tx\ta\tb\n", 1),
        ] {
            let err = read_sts(bad.as_bytes(), "s").unwrap_err();
            assert!(err.to_string().starts_with(&format!("s:{line}:")), "{err}");
        }
    }
}
