use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Vocab, PAD};
use crate::numkit::Tensor;
use crate::{Error, Result};

/// Half-width of the uniform range used for rows without a pretrained vector.
pub const FALLBACK_RANGE: f64 = 0.1;

/// `|V| × dim` word-vector table aligned with vocabulary ids. The PAD row is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    table: Tensor,
}

impl EmbeddingTable {
    /// Every row drawn from Uniform(-0.1, 0.1) under `seed`, PAD zeroed.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(-FALLBACK_RANGE, FALLBACK_RANGE);
        let data = (0..vocab_size * dim)
            .map(|_| dist.sample(&mut rng))
            .collect();
        let mut table = Tensor::new(vec![vocab_size, dim], data).expect("table shape");
        table.row_slice_mut(PAD).fill(0.0);
        Self { table }
    }

    pub fn from_tensor(table: Tensor) -> Result<Self> {
        if table.dims2().is_none() {
            return Err(Error::InvalidInput(format!(
                "embedding table must be a matrix, got {:?}",
                table.shape()
            )));
        }
        if table.row_slice(PAD).iter().any(|&v| v != 0.0) {
            return Err(Error::InvalidInput("embedding PAD row must be zero".into()));
        }
        Ok(Self { table })
    }

    /// Copies vectors for in-vocabulary words out of a text word-vector file.
    ///
    /// Words the file lacks keep their seeded fallback row. Returns the table
    /// and the number of vocabulary words found in the file.
    pub fn load_pretrained(
        path: &Path,
        vocab: &Vocab,
        dim: usize,
        seed: u64,
    ) -> Result<(Self, usize)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_pretrained(file, &path.display().to_string(), vocab, dim, seed)
    }

    /// Reader form of [`EmbeddingTable::load_pretrained`]. A leading
    /// `count dim` header line, as written by word2vec tools, is accepted.
    pub fn read_pretrained(
        reader: impl Read,
        source_name: &str,
        vocab: &Vocab,
        dim: usize,
        seed: u64,
    ) -> Result<(Self, usize)> {
        let mut table = Self::random(vocab.len(), dim, seed);
        let mut matched = vec![false; vocab.len()];
        let mut first_data_line = true;

        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(' ');
            let word = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();

            if lineno == 1 && rest.len() == 1 {
                if let (Ok(_), Ok(width)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                    if width != dim {
                        return Err(Error::parse(
                            source_name,
                            lineno,
                            format!("dimension mismatch: file declares {width}, expected {dim}"),
                        ));
                    }
                    continue;
                }
            }
            if rest.len() != dim {
                let msg = if first_data_line {
                    format!(
                        "dimension mismatch: file rows have {} values, expected {dim}",
                        rest.len()
                    )
                } else {
                    format!("malformed line: {} values, expected {dim}", rest.len())
                };
                return Err(Error::parse(source_name, lineno, msg));
            }
            first_data_line = false;

            let Some(id) = vocab.id(word) else {
                continue;
            };
            if id == PAD || matched[id] {
                continue;
            }
            let row = table.table.row_slice_mut(id);
            for (slot, field) in row.iter_mut().zip(&rest) {
                *slot = field.parse::<f64>().map_err(|e| {
                    Error::parse(source_name, lineno, format!("bad value {field:?}: {e}"))
                })?;
                if !slot.is_finite() {
                    return Err(Error::parse(source_name, lineno, "non-finite value"));
                }
            }
            matched[id] = true;
        }
        let count = matched.iter().filter(|&&m| m).count();
        Ok((table, count))
    }

    pub fn dim(&self) -> usize {
        self.table.dims2().expect("matrix").1
    }

    pub fn vocab_size(&self) -> usize {
        self.table.dims2().expect("matrix").0
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.table.row_slice(id)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.table
    }

    pub fn into_tensor(self) -> Tensor {
        self.table
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParaphraseGroup;

    fn vocab(words: &[&str]) -> Vocab {
        let sentences = words
            .iter()
            .map(|w| vec![w.to_string()])
            .collect::<Vec<_>>();
        let mut sentences = sentences;
        if sentences.len() < 2 {
            sentences.push(vec!["zzfiller".into()]);
        }
        Vocab::build([&ParaphraseGroup::new("g", sentences).unwrap()])
    }

    #[test]
    fn copies_rows_from_file() {
        let v = vocab(&["cat"]);
        let (t, n) =
            EmbeddingTable::read_pretrained("cat 0.1 0.2\n".as_bytes(), "f", &v, 2, 7).unwrap();
        assert_eq!(n, 1);
        assert_eq!(t.row(v.id("cat").unwrap()), &[0.1, 0.2]);
    }

    #[test]
    fn missing_words_fall_back_to_seeded_uniform() {
        let v = vocab(&["cat", "dog"]);
        let (t, n) =
            EmbeddingTable::read_pretrained("cat 0.1 0.2\n".as_bytes(), "f", &v, 2, 7).unwrap();
        assert_eq!(n, 1);
        let dog = t.row(v.id("dog").unwrap());
        assert!(dog.iter().all(|x| x.abs() < FALLBACK_RANGE));
        assert_eq!(
            dog,
            EmbeddingTable::random(v.len(), 2, 7).row(v.id("dog").unwrap())
        );
    }

    #[test]
    fn pad_row_is_always_zero() {
        let v = vocab(&["cat"]);
        let text = "<pad> 9 9\ncat 1 2\n";
        let (t, _) = EmbeddingTable::read_pretrained(text.as_bytes(), "f", &v, 2, 1).unwrap();
        assert_eq!(t.row(PAD), &[0.0, 0.0]);
    }

    #[test]
    fn format_errors_name_the_line() {
        let v = vocab(&["cat"]);
        let err =
            EmbeddingTable::read_pretrained("cat 0.1\n".as_bytes(), "f", &v, 2, 1).unwrap_err();
        assert!(err.to_string().contains("f:1: dimension mismatch"), "{err}");
        let err = EmbeddingTable::read_pretrained("a 1 2\ncat 0.1\n".as_bytes(), "f", &v, 2, 1)
            .unwrap_err();
        assert!(err.to_string().contains("f:2: malformed"), "{err}");
        let err =
            EmbeddingTable::read_pretrained("cat 0.1 x\n".as_bytes(), "f", &v, 2, 1).unwrap_err();
        assert!(err.to_string().starts_with("f:1:"), "{err}");
    }

    #[test]
    fn word2vec_header_is_accepted_and_checked() {
        let v = vocab(&["cat"]);
        let (_, n) =
            EmbeddingTable::read_pretrained("1 2\ncat 1 2\n".as_bytes(), "f", &v, 2, 1).unwrap();
        assert_eq!(n, 1);
        assert!(
            EmbeddingTable::read_pretrained("1 3\ncat 1 2\n".as_bytes(), "f", &v, 2, 1).is_err()
        );
    }

    #[test]
    fn seeded_tables_are_identical() {
        assert_eq!(
            EmbeddingTable::random(10, 3, 5),
            EmbeddingTable::random(10, 3, 5)
        );
        assert_ne!(
            EmbeddingTable::random(10, 3, 5),
            EmbeddingTable::random(10, 3, 6)
        );
    }
}
