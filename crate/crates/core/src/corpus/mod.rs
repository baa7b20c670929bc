//! Caption-group ingestion: tokenization, vocabulary, ordered paraphrase pairs,
//! and pretrained word-vector extraction.

mod embeddings;

pub use embeddings::EmbeddingTable;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Default cap on encoded sequence length, EOS included.
pub const DEFAULT_MAX_SEQ_LEN: usize = 30;

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '“' | '”' | '‘' | '’' | '…' | '—' | '–' | '«' | '»' | '¿' | '¡' | '·'
        )
}

/// Lowercases, splits on whitespace, and emits every punctuation character as
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if is_punct(c) {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(c.to_lowercase().collect());
        } else {
            current.extend(c.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// One line of a corpus file: an image id and its captions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub captions: Vec<String>,
}

/// Reads JSON Lines `{"id": ..., "captions": [...]}`; blank lines are skipped.
pub fn read_records(reader: impl Read, source_name: &str) -> Result<Vec<CorpusRecord>> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

pub fn load_records(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, &path.display().to_string())
}

/// Loads a corpus as validated paraphrase groups. Fails on an empty corpus.
pub fn load_groups(path: &Path) -> Result<Vec<ParaphraseGroup>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_groups(file, &path.display().to_string())
}

pub fn read_groups(reader: impl Read, source_name: &str) -> Result<Vec<ParaphraseGroup>> {
    let mut groups = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        let group = ParaphraseGroup::from_captions(&record.id, &record.captions)
            .map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        groups.push(group);
    }
    if groups.is_empty() {
        return Err(Error::InvalidInput(format!("{source_name}: no groups")));
    }
    Ok(groups)
}

/// The captions of one image, treated as mutual paraphrases.
#[derive(Clone, Debug, PartialEq)]
pub struct ParaphraseGroup {
    id: String,
    sentences: Vec<Vec<String>>,
}

impl ParaphraseGroup {
    /// Requires at least two mutually distinct token sequences.
    pub fn new(id: impl Into<String>, sentences: Vec<Vec<String>>) -> Result<Self> {
        let id = id.into();
        if sentences.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "group {id:?} has {} sentence(s), at least 2 are needed to form a pair",
                sentences.len()
            )));
        }
        let mut seen = HashSet::new();
        for s in &sentences {
            if !seen.insert(s) {
                return Err(Error::InvalidInput(format!(
                    "group {id:?} repeats the sentence {:?}",
                    s.join(" ")
                )));
            }
        }
        Ok(Self { id, sentences })
    }

    /// Tokenizes raw captions, dropping empty and duplicate ones.
    pub fn from_captions(id: &str, captions: &[String]) -> Result<Self> {
        let mut seen = HashSet::new();
        let sentences = captions
            .iter()
            .map(|c| tokenize(c))
            .filter(|t| !t.is_empty() && seen.insert(t.clone()))
            .collect();
        Self::new(id, sentences)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Token-id vocabulary with PAD, SOS, EOS and UNK at ids 0..=3.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).collect()).expect("reserved")
    }
}

impl Vocab {
    /// Every distinct token of the corpus in order of first occurrence.
    pub fn build<'a>(groups: impl IntoIterator<Item = &'a ParaphraseGroup>) -> Self {
        let mut vocab = Self::default();
        for g in groups {
            for token in g.sentences.iter().flatten() {
                if !vocab.index.contains_key(token) {
                    vocab.index.insert(token.clone(), vocab.tokens.len());
                    vocab.tokens.push(token.clone());
                }
            }
        }
        vocab
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::InvalidInput(
                "vocabulary must start with the reserved tokens <pad> <s> </s> <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidInput(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Maps tokens to ids (UNK for unknown words), truncates so that the
    /// sequence plus its trailing EOS fits in `max_len`, then appends EOS.
    pub fn encode(&self, tokens: &[String], max_len: usize) -> Vec<usize> {
        let keep = tokens.len().min(max_len.saturating_sub(1));
        let mut ids: Vec<usize> = tokens[..keep]
            .iter()
            .map(|t| self.id(t).unwrap_or(UNK))
            .collect();
        ids.push(EOS);
        ids
    }

    /// Tokens up to (not including) the first EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&id| id != EOS)
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    /// Hex SHA-256 over the id-ordered token list.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

/// An ordered training tuple: encode `source`, regenerate it, and generate `target`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

fn check_sequence(ids: &[usize]) -> Result<()> {
    match ids.split_last() {
        Some((&EOS, body)) if !body.contains(&PAD) && !body.contains(&EOS) => Ok(()),
        _ => Err(Error::InvalidInput(format!(
            "sequence {ids:?} must be non-empty, end with EOS and contain no PAD"
        ))),
    }
}

impl SentencePair {
    pub fn new(source: Vec<usize>, target: Vec<usize>) -> Result<Self> {
        check_sequence(&source)?;
        check_sequence(&target)?;
        Ok(Self { source, target })
    }
}

/// All `n·(n-1)` ordered pairs of distinct sentences, source-major.
pub fn make_pairs(
    group: &ParaphraseGroup,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<SentencePair>> {
    if group.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "group {:?} needs at least 2 sentences",
            group.id
        )));
    }
    let encoded: Vec<Vec<usize>> = group
        .sentences
        .iter()
        .map(|s| vocab.encode(s, max_len))
        .collect();
    let mut pairs = Vec::with_capacity(encoded.len() * (encoded.len() - 1));
    for (i, s) in encoded.iter().enumerate() {
        for (j, p) in encoded.iter().enumerate() {
            if i != j {
                pairs.push(SentencePair::new(s.clone(), p.clone())?);
            }
        }
    }
    Ok(pairs)
}

/// Pairs for a whole corpus, in group order.
pub fn corpus_pairs(
    groups: &[ParaphraseGroup],
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<SentencePair>> {
    let mut all = Vec::new();
    for g in groups {
        all.extend(make_pairs(g, vocab, max_len)?);
    }
    Ok(all)
}
