//! Command-line interface.
//!
//! Every command records a [`RunManifest`] holding its resolved invocation and
//! the SHA-256 of each input and output, so `pthought replay` can re-run it and
//! confirm the outputs are byte-identical.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    corpus_pairs, load_groups, load_records, tokenize, EmbeddingTable, ParaphraseGroup,
    SentencePair, Vocab, DEFAULT_MAX_SEQ_LEN,
};
use crate::metrics::{
    p_coherence_report, project_2d, read_embedding_rows, write_embedding_rows, EmbeddingRow,
    EmbeddingSet,
};
use crate::model::checkpoint::{Checkpoint, TrainingState};
use crate::model::{EncoderVariant, Model, ModelConfig, SentenceEncoder, TextEncoder};
use crate::sts::{load_sts, run_benchmark, ReadoutConfig};
use crate::train::{evaluate_loss, LossTrace, TrainConfig, Trainer};
use crate::{Error, Result};

const FORMATS: &str = "\
File formats:
  corpus       JSON Lines, one group per line: {\"id\": \"...\", \"captions\": [\"...\", ...]}
  pairs        TSV: group_id, source sentence, paraphrase sentence (space-joined tokens)
  embeddings   pretrained vectors: one word per line followed by space-separated floats;
               an optional leading \"<count> <dim>\" header line is skipped
  vectors      TSV: group_id, sentence_index, v_1 ... v_w (no header)
  sts          TSV: split (train|dev|test), score in [0,5], sentence_1, sentence_2;
               an exact \"split\\tscore\\tsentence_1\\tsentence_2\" header line is allowed
  scatter      TSV with header: x, y, group_id
  loss trace   TSV with header: step, l_auto, l_para, total
  config       key=value lines ('#' starts a comment); keys match the train flags,
               e.g. hidden=64 or unfreeze-embeddings=true. Flags override the file.
  checkpoint   JSON: model config, vocabulary and its SHA-256, named tensors with shapes
  manifest     JSON: resolved invocation, input and artifact SHA-256 digests

Exit codes: 0 success, 1 usage or configuration error, 2 data error, 3 numeric failure.";

#[derive(Debug, Parser)]
#[command(name = "pthought", version, about = "Paraphrase-trained sentence encoder", after_long_help = FORMATS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Build all ordered paraphrase pairs of a corpus and print its counts.
    Pairs(PairsArgs),
    /// Train a model on a corpus.
    Train(TrainArgs),
    /// Encode every caption of a corpus with a trained checkpoint.
    Embed(EmbedArgs),
    /// Report per-group and total P-coherence of a sentence-vector file.
    EvalPcoherence(EvalPcoherenceArgs),
    /// Fit the similarity readout on the train split and report test Pearson.
    EvalSts(EvalStsArgs),
    /// Project sentence vectors to 2-D for plotting.
    Project(ProjectArgs),
    /// Re-run a recorded command and confirm its outputs are unchanged.
    Replay(ReplayArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct PairsArgs {
    /// Corpus (JSON Lines).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output pair TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum tokens per sentence including EOS.
    #[arg(long, default_value_t = DEFAULT_MAX_SEQ_LEN)]
    pub max_len: usize,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Training corpus (JSON Lines).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory for checkpoints, loss trace and manifest.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// key=value file of train settings; flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Encoder layout: one-bi, two-forward or two-bi [default: two-bi].
    #[arg(long)]
    pub variant: Option<EncoderVariant>,
    /// GRU hidden size; sentence vectors are twice this wide [default: 1200].
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Word-vector width [default: 300].
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Weight of the paraphrase-decoder loss, > 0 [default: 2].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Adam learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Pairs per optimizer step [default: 128].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Passes over the data [default: 4].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed for initialization, fallback word vectors and shuffling [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pretrained word vectors (text format).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Train the word vectors too.
    #[arg(long)]
    pub unfreeze_embeddings: bool,
    /// One output projection for both decoders.
    #[arg(long)]
    pub shared_output: bool,
    /// Maximum tokens per sentence including EOS [default: 30].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Global gradient-norm clip (off by default).
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Held-out corpus whose loss is reported after each epoch.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run; model settings
    /// come from the checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus (JSON Lines); every caption becomes one row.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output sentence-vector TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Map words missing from the checkpoint vocabulary to <unk>.
    #[arg(long)]
    pub allow_unk: bool,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalPcoherenceArgs {
    /// Sentence-vector TSV.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest path (default: <out>.manifest.json, else ./eval-pcoherence.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalStsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// STS TSV with train and test splits (dev optional).
    #[arg(long)]
    pub sts: PathBuf,
    /// Map words missing from the checkpoint vocabulary to <unk>.
    #[arg(long)]
    pub allow_unk: bool,
    /// Seed for the readout initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Full-batch Adam steps for the readout.
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Readout learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    /// Squared-weight penalty on the readout (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest path (default: <out>.manifest.json, else ./eval-sts.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ProjectArgs {
    /// Sentence-vector TSV.
    #[arg(long)]
    pub vectors: PathBuf,
    /// Output scatter TSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Manifest path (default: <out>.manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Manifest written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Everything needed to reproduce one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub argv: Vec<String>,
    /// The parsed command with absolute paths.
    pub invocation: Command,
    /// Settings after defaults and config files were applied.
    pub resolved: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// What a command produced, before the manifest is assembled.
struct Outcome {
    resolved: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    artifacts: Vec<PathBuf>,
    manifest: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pairs(_) => "pairs",
            Self::Train(_) => "train",
            Self::Embed(_) => "embed",
            Self::EvalPcoherence(_) => "eval-pcoherence",
            Self::EvalSts(_) => "eval-sts",
            Self::Project(_) => "project",
            Self::Replay(_) => "replay",
        }
    }

    /// Rewrites every path argument as an absolute path.
    fn absolutize(&mut self) -> Result<()> {
        fn abs(p: &mut PathBuf) -> Result<()> {
            *p = std::path::absolute(&*p).map_err(|e| Error::io(&*p, e))?;
            Ok(())
        }
        fn abs_opt(p: &mut Option<PathBuf>) -> Result<()> {
            p.as_mut().map_or(Ok(()), abs)
        }
        match self {
            Self::Pairs(a) => {
                abs(&mut a.corpus)?;
                abs(&mut a.out)?;
                abs_opt(&mut a.manifest)
            }
            Self::Train(a) => {
                abs(&mut a.corpus)?;
                abs(&mut a.out_dir)?;
                abs_opt(&mut a.config)?;
                abs_opt(&mut a.embeddings)?;
                abs_opt(&mut a.heldout)?;
                abs_opt(&mut a.resume)
            }
            Self::Embed(a) => {
                abs(&mut a.checkpoint)?;
                abs(&mut a.corpus)?;
                abs(&mut a.out)?;
                abs_opt(&mut a.manifest)
            }
            Self::EvalPcoherence(a) => {
                abs(&mut a.vectors)?;
                abs_opt(&mut a.out)?;
                abs_opt(&mut a.manifest)
            }
            Self::EvalSts(a) => {
                abs(&mut a.checkpoint)?;
                abs(&mut a.sts)?;
                abs_opt(&mut a.out)?;
                abs_opt(&mut a.manifest)
            }
            Self::Project(a) => {
                abs(&mut a.vectors)?;
                abs(&mut a.out)?;
                abs_opt(&mut a.manifest)
            }
            Self::Replay(a) => abs(&mut a.manifest),
        }
    }
}

/// Parses `argv` and runs the command, writing reports to `stdout`.
pub fn run(argv: &[String], stdout: &mut dyn Write) -> Result<()> {
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Config(e.to_string()))?;
    execute(cli.command, argv, stdout)
}

/// Runs an already parsed command; `argv` is recorded in the manifest.
pub fn execute(mut command: Command, argv: &[String], stdout: &mut dyn Write) -> Result<()> {
    command.absolutize()?;
    if let Command::Replay(args) = &command {
        return replay(&args.manifest, stdout);
    }
    let outcome = match &command {
        Command::Pairs(a) => cmd_pairs(a, stdout)?,
        Command::Train(a) => cmd_train(a, stdout)?,
        Command::Embed(a) => cmd_embed(a)?,
        Command::EvalPcoherence(a) => cmd_eval_pcoherence(a, stdout)?,
        Command::EvalSts(a) => cmd_eval_sts(a, stdout)?,
        Command::Project(a) => cmd_project(a)?,
        Command::Replay(_) => unreachable!("handled above"),
    };
    let manifest = RunManifest {
        tool: format!("pthought {}", env!("CARGO_PKG_VERSION")),
        command: command.name().to_string(),
        argv: argv.to_vec(),
        invocation: command,
        resolved: outcome.resolved,
        seed: outcome.seed,
        inputs: outcome
            .inputs
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<Result<_>>()?,
        artifacts: outcome
            .artifacts
            .iter()
            .map(|p| FileDigest::of(p))
            .collect::<Result<_>>()?,
    };
    manifest.save(&outcome.manifest)
}

fn replay(path: &Path, stdout: &mut dyn Write) -> Result<()> {
    let manifest = RunManifest::load(path)?;
    if matches!(manifest.invocation, Command::Replay(_)) {
        return Err(Error::InvalidInput(
            "a replay manifest cannot itself be replayed".into(),
        ));
    }
    for input in &manifest.inputs {
        let now = sha256_file(&input.path)?;
        if now != input.sha256 {
            return Err(Error::InvalidInput(format!(
                "input {} changed since the recorded run",
                input.path.display()
            )));
        }
    }
    let mut sink = Vec::new();
    execute(manifest.invocation.clone(), &manifest.argv, &mut sink)?;
    for artifact in &manifest.artifacts {
        let now = sha256_file(&artifact.path)?;
        if now != artifact.sha256 {
            return Err(Error::InvalidInput(format!(
                "replay of {} produced a different {}",
                manifest.command,
                artifact.path.display()
            )));
        }
    }
    stdout
        .write_all(&sink)
        .map_err(|e| Error::io("stdout", e))?;
    writeln!(
        stdout,
        "replayed {}: {} artifacts identical",
        manifest.command,
        manifest.artifacts.len()
    )
    .map_err(|e| Error::io("stdout", e))
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn manifest_path(explicit: &Option<PathBuf>, out: Option<&Path>, command: &str) -> Result<PathBuf> {
    match (explicit, out) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(o)) => Ok(sibling_manifest(o)),
        (None, None) => {
            let p = PathBuf::from(format!("{command}.manifest.json"));
            std::path::absolute(&p).map_err(|e| Error::io(&p, e))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut out: BufWriter<File>, path: &Path) -> Result<()> {
    out.flush().map_err(|e| Error::io(path, e))
}

fn to_value(v: &impl Serialize) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Writes `text` to stdout and, when given, to a report file.
fn report(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    stdout
        .write_all(text.as_bytes())
        .map_err(|e| Error::io("stdout", e))?;
    if let Some(path) = out {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn cmd_pairs(args: &PairsArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    if args.max_len < 2 {
        return Err(Error::Config("--max-len must be at least 2".into()));
    }
    let groups = load_groups(&args.corpus)?;
    let vocab = Vocab::build(&groups);
    let pairs = corpus_pairs(&groups, &vocab, args.max_len)?;

    let mut out = create(&args.out)?;
    let keep = args.max_len - 1;
    for g in &groups {
        let texts: Vec<String> = g
            .sentences()
            .iter()
            .map(|s| s[..s.len().min(keep)].join(" "))
            .collect();
        for (i, src) in texts.iter().enumerate() {
            for (j, tgt) in texts.iter().enumerate() {
                if i != j {
                    writeln!(out, "{}\t{src}\t{tgt}", g.id())
                        .map_err(|e| Error::io(&args.out, e))?;
                }
            }
        }
    }
    finish(out, &args.out)?;

    let sentences: usize = groups.iter().map(ParaphraseGroup::len).sum();
    let summary = format!(
        "groups\t{}\nsentences\t{sentences}\npairs\t{}\nvocab\t{}\n",
        groups.len(),
        pairs.len(),
        vocab.len()
    );
    report(&summary, None, stdout)?;
    Ok(Outcome {
        resolved: to_value(args)?,
        seed: None,
        inputs: vec![args.corpus.clone()],
        artifacts: vec![args.out.clone()],
        manifest: manifest_path(&args.manifest, Some(&args.out), "pairs")?,
    })
}

/// Train settings after the config file and defaults are applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub variant: EncoderVariant,
    pub hidden: usize,
    pub embed_dim: usize,
    pub shared_output: bool,
    pub embeddings: Option<PathBuf>,
    pub train: TrainConfig,
}

pub const DEFAULT_HIDDEN: usize = 1200;
pub const DEFAULT_EMBED_DIM: usize = 300;

/// Reads a flat `key=value` file. Keys may use `-` or `_`.
pub fn parse_config_file(
    text: &str,
    source_name: &str,
) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{source_name}:{}: expected key=value",
                i + 1
            )));
        };
        let key = k.trim().replace('_', "-");
        if out
            .insert(key.clone(), (i + 1, v.trim().to_string()))
            .is_some()
        {
            return Err(Error::Config(format!(
                "{source_name}:{}: duplicate key {key}",
                i + 1
            )));
        }
    }
    Ok(out)
}

fn config_value<T: std::str::FromStr>(source: &str, line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("{source}:{line}: bad value {v:?} for {key}: {e}")))
}

/// Merges flags over a config file over defaults.
pub fn resolve_train(args: &TrainArgs) -> Result<TrainSettings> {
    let mut file = TrainArgs::default();
    if let Some(path) = &args.config {
        let name = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (key, (line, v)) in parse_config_file(&text, &name)? {
            let v = v.as_str();
            match key.as_str() {
                "variant" => file.variant = Some(config_value(&name, line, &key, v)?),
                "hidden" => file.hidden = Some(config_value(&name, line, &key, v)?),
                "embed-dim" => file.embed_dim = Some(config_value(&name, line, &key, v)?),
                "alpha" => file.alpha = Some(config_value(&name, line, &key, v)?),
                "lr" => file.lr = Some(config_value(&name, line, &key, v)?),
                "batch" => file.batch = Some(config_value(&name, line, &key, v)?),
                "epochs" => file.epochs = Some(config_value(&name, line, &key, v)?),
                "seed" => file.seed = Some(config_value(&name, line, &key, v)?),
                "max-len" => file.max_len = Some(config_value(&name, line, &key, v)?),
                "clip-norm" => file.clip_norm = Some(config_value(&name, line, &key, v)?),
                "unfreeze-embeddings" => {
                    file.unfreeze_embeddings = config_value(&name, line, &key, v)?
                }
                "shared-output" => file.shared_output = config_value(&name, line, &key, v)?,
                "embeddings" => {
                    let p = path.parent().unwrap_or(Path::new("")).join(v);
                    file.embeddings = Some(std::path::absolute(&p).map_err(|e| Error::io(&p, e))?);
                }
                other => {
                    return Err(Error::Config(format!(
                        "{name}:{line}: unknown key {other:?}"
                    )))
                }
            }
        }
    }
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        learning_rate: args.lr.or(file.lr).unwrap_or(defaults.learning_rate),
        batch_size: args.batch.or(file.batch).unwrap_or(defaults.batch_size),
        epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        max_seq_len: args
            .max_len
            .or(file.max_len)
            .unwrap_or(defaults.max_seq_len),
        unfreeze_embeddings: args.unfreeze_embeddings || file.unfreeze_embeddings,
        clip_norm: args.clip_norm.or(file.clip_norm),
        ..defaults
    };
    train.validate()?;
    let settings = TrainSettings {
        variant: args
            .variant
            .or(file.variant)
            .unwrap_or(EncoderVariant::TwoLayerBi),
        hidden: args.hidden.or(file.hidden).unwrap_or(DEFAULT_HIDDEN),
        embed_dim: args
            .embed_dim
            .or(file.embed_dim)
            .unwrap_or(DEFAULT_EMBED_DIM),
        shared_output: args.shared_output || file.shared_output,
        embeddings: args.embeddings.clone().or(file.embeddings),
        train,
    };
    if settings.hidden == 0 || settings.embed_dim == 0 {
        return Err(Error::Config(
            "--hidden and --embed-dim must be positive".into(),
        ));
    }
    Ok(settings)
}

fn cmd_train(args: &TrainArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let mut settings = resolve_train(args)?;
    let groups = load_groups(&args.corpus)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let mut inputs = vec![args.corpus.clone()];
    inputs.extend(args.config.clone());

    let (mut trainer, vocab) = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let state = ckpt.training.clone().ok_or_else(|| {
                Error::InvalidInput(format!("{} holds no optimizer state", path.display()))
            })?;
            let model = ckpt.model()?;
            settings.variant = model.config.variant;
            settings.hidden = model.config.hidden_dim;
            settings.embed_dim = model.config.embed_dim;
            settings.shared_output = model.config.shared_output;
            settings.embeddings = None;
            // the optimizer trajectory is fixed by the earlier run; only the
            // epoch budget can change
            settings.train = TrainConfig {
                epochs: settings.train.epochs,
                ..state.train.clone()
            };
            inputs.push(path.clone());
            let vocab = ckpt.vocab()?;
            let trainer = Trainer::resume(
                model,
                settings.train.clone(),
                state.adam,
                state.epochs_completed,
            )?;
            (trainer, vocab)
        }
        None => {
            let vocab = Vocab::build(&groups);
            let seed = settings.train.seed;
            let table = match &settings.embeddings {
                Some(path) => {
                    inputs.push(path.clone());
                    let (table, matched) =
                        EmbeddingTable::load_pretrained(path, &vocab, settings.embed_dim, seed)?;
                    log::info!(
                        "pretrained vectors cover {matched} of {} words",
                        vocab.len()
                    );
                    table
                }
                None => EmbeddingTable::random(vocab.len(), settings.embed_dim, seed),
            };
            let config = ModelConfig {
                variant: settings.variant,
                vocab_size: vocab.len(),
                embed_dim: settings.embed_dim,
                hidden_dim: settings.hidden,
                shared_output: settings.shared_output,
            };
            let model = Model::init(config, table, seed)?;
            (Trainer::new(model, settings.train.clone())?, vocab)
        }
    };

    let max_len = settings.train.max_seq_len;
    let pairs = corpus_pairs(&groups, &vocab, max_len)?;
    let heldout: Option<Vec<SentencePair>> = match &args.heldout {
        Some(path) => {
            inputs.push(path.clone());
            Some(corpus_pairs(&load_groups(path)?, &vocab, max_len)?)
        }
        None => None,
    };
    log::info!(
        "{} groups, {} pairs, vocabulary {}, {} parameters",
        groups.len(),
        pairs.len(),
        vocab.len(),
        trainer.model.params.parameter_count()
    );

    let mut artifacts = Vec::new();
    let mut heldout_rows = Vec::new();
    let out_dir = args.out_dir.clone();
    let snapshot = |t: &Trainer| {
        Checkpoint::new(&t.model, &vocab, &t.config).with_training(TrainingState {
            train: t.config.clone(),
            adam: t.adam.clone(),
            epochs_completed: t.epochs_completed,
        })
    };
    let summaries = trainer.train(&pairs, |t, s| {
        let path = out_dir.join(format!("epoch-{}.json", s.epoch + 1));
        snapshot(t).save(&path)?;
        artifacts.push(path);
        let mut line = format!(
            "epoch {}: {} steps, mean l_auto {:.6}, l_para {:.6}, total {:.6}",
            s.epoch + 1,
            s.steps,
            s.mean.auto,
            s.mean.para,
            s.mean.total
        );
        if let Some(h) = &heldout {
            let l = evaluate_loss(&t.model, h, t.config.alpha, t.config.batch_size)?;
            line.push_str(&format!("; held-out total {:.6}", l.total));
            heldout_rows.push((s.epoch + 1, l));
        }
        log::info!("{line}");
        Ok(())
    })?;

    let final_path = args.out_dir.join("checkpoint.json");
    snapshot(&trainer).save(&final_path)?;
    artifacts.push(final_path.clone());

    let trace_path = args.out_dir.join("loss.tsv");
    write_trace(&trainer.trace, &trace_path)?;
    artifacts.push(trace_path);

    if heldout.is_some() {
        let path = args.out_dir.join("heldout.tsv");
        let mut out = create(&path)?;
        let io = |e| Error::io(&path, e);
        writeln!(out, "epoch\tl_auto\tl_para\ttotal").map_err(io)?;
        for (epoch, l) in &heldout_rows {
            writeln!(out, "{epoch}\t{}\t{}\t{}", l.auto, l.para, l.total).map_err(io)?;
        }
        finish(out, &path)?;
        artifacts.push(path);
    }

    let last = summaries.last().map(|s| s.mean.total);
    let text = match last {
        Some(total) => format!(
            "trained {} epochs ({} steps), final mean total loss {total}\ncheckpoint\t{}\n",
            trainer.epochs_completed,
            trainer.steps_completed(),
            final_path.display()
        ),
        None => format!(
            "nothing to do: {} epochs already completed\n",
            trainer.epochs_completed
        ),
    };
    report(&text, None, stdout)?;
    Ok(Outcome {
        resolved: to_value(&settings)?,
        seed: Some(settings.train.seed),
        inputs,
        artifacts,
        manifest: args.out_dir.join("manifest.json"),
    })
}

fn write_trace(trace: &LossTrace, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    trace.write_tsv(&mut out).map_err(|e| Error::io(path, e))?;
    finish(out, path)
}

fn cmd_embed(args: &EmbedArgs) -> Result<Outcome> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let encoder = TextEncoder::from_checkpoint(&ckpt, args.allow_unk)?;
    let records = load_records(&args.corpus)?;
    let mut texts = Vec::new();
    let mut keys = Vec::new();
    let mut unknown = 0usize;
    for r in &records {
        if r.id.contains(['\t', '\n', '\r']) {
            return Err(Error::InvalidInput(format!(
                "group id {:?} contains a tab or newline",
                r.id
            )));
        }
        for (i, c) in r.captions.iter().enumerate() {
            unknown += tokenize(c)
                .iter()
                .filter(|t| encoder.vocab.id(t).is_none())
                .count();
            texts.push(c.as_str());
            keys.push((r.id.clone(), i));
        }
    }
    if texts.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: no captions",
            args.corpus.display()
        )));
    }
    let vectors = encoder.encode_texts(&texts)?;
    if unknown > 0 {
        log::warn!("{unknown} word occurrences were mapped to <unk>");
    }
    let rows: Vec<EmbeddingRow> = keys
        .into_iter()
        .zip(vectors)
        .map(|((group_id, index), vector)| EmbeddingRow {
            group_id,
            index,
            vector,
        })
        .collect();
    let mut out = create(&args.out)?;
    write_embedding_rows(&mut out, &rows).map_err(|e| Error::io(&args.out, e))?;
    finish(out, &args.out)?;
    log::info!("wrote {} rows of width {}", rows.len(), encoder.width());
    Ok(Outcome {
        resolved: to_value(args)?,
        seed: Some(ckpt.seed),
        inputs: vec![args.checkpoint.clone(), args.corpus.clone()],
        artifacts: vec![args.out.clone()],
        manifest: manifest_path(&args.manifest, Some(&args.out), "embed")?,
    })
}

fn load_vectors(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embedding_rows(file, &path.display().to_string())
}

fn cmd_eval_pcoherence(args: &EvalPcoherenceArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    let (set, skipped) = EmbeddingSet::from_rows(load_vectors(&args.vectors)?)?;
    for id in &skipped {
        log::warn!("group {id} has a single sentence and is skipped");
    }
    let report_data = p_coherence_report(&set)?;
    let mut text = String::from("group_id\tsentences\tp_coherence\n");
    for (id, n, coh) in &report_data.groups {
        text.push_str(&format!("{id}\t{n}\t{coh}\n"));
    }
    text.push_str(&format!(
        "total\t{}\t{}\n",
        report_data.groups.len(),
        report_data.total
    ));
    report(&text, args.out.as_deref(), stdout)?;
    Ok(Outcome {
        resolved: to_value(args)?,
        seed: None,
        inputs: vec![args.vectors.clone()],
        artifacts: args.out.iter().cloned().collect(),
        manifest: manifest_path(&args.manifest, args.out.as_deref(), "eval-pcoherence")?,
    })
}

fn cmd_eval_sts(args: &EvalStsArgs, stdout: &mut dyn Write) -> Result<Outcome> {
    if args.lr.is_nan() || args.lr <= 0.0 || args.l2.is_nan() || args.l2 < 0.0 {
        return Err(Error::Config(
            "--lr must be positive and --l2 non-negative".into(),
        ));
    }
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let encoder = TextEncoder::from_checkpoint(&ckpt, args.allow_unk)?;
    let records = load_sts(&args.sts)?;
    let config = ReadoutConfig {
        steps: args.steps,
        learning_rate: args.lr,
        seed: args.seed,
        l2: args.l2,
    };
    let r = run_benchmark(&records, &encoder, &config)?;
    let mut text = format!("split\tpairs\tpearson\ntrain\t{}\t\n", r.train_size);
    if let Some((n, p)) = r.dev {
        text.push_str(&format!("dev\t{n}\t{p}\n"));
    }
    text.push_str(&format!("test\t{}\t{}\n", r.test.0, r.test.1));
    report(&text, args.out.as_deref(), stdout)?;
    Ok(Outcome {
        resolved: to_value(args)?,
        seed: Some(args.seed),
        inputs: vec![args.checkpoint.clone(), args.sts.clone()],
        artifacts: args.out.iter().cloned().collect(),
        manifest: manifest_path(&args.manifest, args.out.as_deref(), "eval-sts")?,
    })
}

fn cmd_project(args: &ProjectArgs) -> Result<Outcome> {
    let rows = load_vectors(&args.vectors)?;
    let labels: Vec<&str> = rows.iter().map(|r| r.group_id.as_str()).collect();
    let vectors: Vec<_> = rows.iter().map(|r| r.vector.clone()).collect();
    let points = project_2d(&vectors, &labels)?;
    let mut out = create(&args.out)?;
    let io = |e| Error::io(&args.out, e);
    writeln!(out, "x\ty\tgroup_id").map_err(io)?;
    for p in &points {
        writeln!(out, "{}\t{}\t{}", p.x, p.y, p.label).map_err(io)?;
    }
    finish(out, &args.out)?;
    Ok(Outcome {
        resolved: to_value(args)?,
        seed: None,
        inputs: vec![args.vectors.clone()],
        artifacts: vec![args.out.clone()],
        manifest: manifest_path(&args.manifest, Some(&args.out), "project")?,
    })
}
