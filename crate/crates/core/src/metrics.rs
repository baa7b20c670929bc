//! P-coherence, Pearson correlation and 2-D projection of sentence vectors.
//!
//! The pair score is the plain cosine, so it ranges over `[-1, 1]`; it only
//! stays within `[0, 1]` for vectors that are not negatively correlated.

use std::io::{BufRead, BufReader, Read, Write};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::SentenceVector;
use crate::{Error, Result};

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Cosine similarity of two sentence vectors.
pub fn pair_score(u: &SentenceVector, v: &SentenceVector) -> Result<f64> {
    cosine(u.values(), v.values())
}

pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidInput(format!(
            "cannot score vectors of width {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (uu, vv) = (dot(u, u), dot(v, v));
    if uu == 0.0 || vv == 0.0 {
        return Err(Error::InvalidInput(
            "cannot score a zero-norm vector".into(),
        ));
    }
    // sqrt(x·x) == |x| exactly, so identical vectors score exactly 1
    Ok((dot(u, v) / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

/// Mean cosine over all unordered pairs of one paraphrase set.
pub fn p_coherence_set(vectors: &[SentenceVector]) -> Result<f64> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "P-coherence needs at least 2 vectors, got {n}"
        )));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += pair_score(&vectors[i], &vectors[j])?;
        }
    }
    Ok(sum / (n * (n - 1) / 2) as f64)
}

/// Unweighted mean of per-set P-coherence.
pub fn p_coherence_total(set: &EmbeddingSet) -> Result<f64> {
    Ok(p_coherence_report(set)?.total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoherenceReport {
    pub total: f64,
    /// `(group_id, sentences, coherence)` in input order.
    pub groups: Vec<(String, usize, f64)>,
}

pub fn p_coherence_report(set: &EmbeddingSet) -> Result<CoherenceReport> {
    if set.groups.is_empty() {
        return Err(Error::InvalidInput("empty embedding set".into()));
    }
    let mut groups = Vec::with_capacity(set.groups.len());
    for (id, vectors) in &set.groups {
        groups.push((id.clone(), vectors.len(), p_coherence_set(vectors)?));
    }
    let total = groups.iter().map(|g| g.2).sum::<f64>() / groups.len() as f64;
    Ok(CoherenceReport { total, groups })
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "pearson needs two equal-length sequences of at least 2 values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidInput("pearson: zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Sentence vectors grouped by paraphrase set.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    groups: Vec<(String, Vec<SentenceVector>)>,
}

impl EmbeddingSet {
    /// Requires equal widths, at least two vectors per group and no zero vectors.
    pub fn new(groups: Vec<(String, Vec<SentenceVector>)>) -> Result<Self> {
        let width = groups
            .first()
            .and_then(|(_, v)| v.first())
            .map(SentenceVector::width);
        for (id, vectors) in &groups {
            if vectors.len() < 2 {
                return Err(Error::InvalidInput(format!(
                    "group {id:?} has {} vector(s), need at least 2",
                    vectors.len()
                )));
            }
            for v in vectors {
                if Some(v.width()) != width {
                    return Err(Error::InvalidInput(format!(
                        "group {id:?} mixes vector widths"
                    )));
                }
                if v.values().iter().all(|&x| x == 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "group {id:?} contains a zero vector"
                    )));
                }
            }
        }
        Ok(Self { groups })
    }

    /// Groups rows by id (first-appearance order), ordering each group by
    /// sentence index. Groups with fewer than two rows are returned by id
    /// instead of failing.
    pub fn from_rows(rows: Vec<EmbeddingRow>) -> Result<(Self, Vec<String>)> {
        let mut order: Vec<String> = Vec::new();
        let mut buckets: std::collections::HashMap<String, Vec<(usize, SentenceVector)>> =
            std::collections::HashMap::new();
        for row in rows {
            if !buckets.contains_key(&row.group_id) {
                order.push(row.group_id.clone());
            }
            buckets
                .entry(row.group_id)
                .or_default()
                .push((row.index, row.vector));
        }
        let mut groups = Vec::new();
        let mut skipped = Vec::new();
        for id in order {
            let mut members = buckets.remove(&id).unwrap_or_default();
            if members.len() < 2 {
                skipped.push(id);
                continue;
            }
            members.sort_by_key(|(i, _)| *i);
            groups.push((id, members.into_iter().map(|(_, v)| v).collect()));
        }
        Ok((Self::new(groups)?, skipped))
    }

    pub fn groups(&self) -> &[(String, Vec<SentenceVector>)] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
}

/// One line of the embedding TSV: `group_id, sentence_index, v_1 … v_w`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub group_id: String,
    pub index: usize,
    pub vector: SentenceVector,
}

pub fn write_embedding_rows(mut out: impl Write, rows: &[EmbeddingRow]) -> std::io::Result<()> {
    for row in rows {
        write!(out, "{}\t{}", row.group_id, row.index)?;
        for v in row.vector.values() {
            write!(out, "\t{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Strict reader: every row needs an id, an index and the same number of
/// finite components.
pub fn read_embedding_rows(input: impl Read, source_name: &str) -> Result<Vec<EmbeddingRow>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::parse(
                source_name,
                lineno,
                "expected group_id, sentence_index and components",
            ));
        }
        let index = fields[1].parse::<usize>().map_err(|e| {
            Error::parse(
                source_name,
                lineno,
                format!("bad sentence index {:?}: {e}", fields[1]),
            )
        })?;
        let values = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::parse(source_name, lineno, format!("bad component {f:?}"))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("row has {} components, earlier rows have {w}", values.len()),
                ))
            }
            _ => {}
        }
        rows.push(EmbeddingRow {
            group_id: fields[0].to_string(),
            index,
            vector: SentenceVector::new(values),
        });
    }
    Ok(rows)
}

/// Point of a 2-D scatter plot.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedPoint<L> {
    pub x: f64,
    pub y: f64,
    pub label: L,
}

pub const PROJECTION_ITERATIONS: usize = 500;
const PROJECTION_SEED: u64 = 0x5eed;

/// Projects mean-centered vectors onto their top two principal directions.
///
/// Directions come from power iteration on the implicit covariance with
/// deflation, a fixed iteration count and a seeded start, so the output is
/// deterministic. Each direction's largest-magnitude entry is made positive.
pub fn project_2d<L: Clone>(
    vectors: &[SentenceVector],
    labels: &[L],
) -> Result<Vec<ProjectedPoint<L>>> {
    if vectors.len() < 2 || vectors.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "projection needs at least 2 vectors with one label each, got {} and {}",
            vectors.len(),
            labels.len()
        )));
    }
    let width = vectors[0].width();
    if width < 2 {
        return Err(Error::InvalidInput(format!(
            "projection needs width >= 2, got {width}"
        )));
    }
    if vectors.iter().any(|v| v.width() != width) {
        return Err(Error::InvalidInput(
            "projection vectors differ in width".into(),
        ));
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; width];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.values()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.values().iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let first = principal_direction(&centered, width, None);
    let second = principal_direction(&centered, width, Some(&first));
    Ok(centered
        .iter()
        .zip(labels)
        .map(|(row, label)| ProjectedPoint {
            x: dot(row, &first),
            y: dot(row, &second),
            label: label.clone(),
        })
        .collect())
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = dot(v, v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

fn orthogonalize(v: &mut [f64], against: Option<&[f64]>) {
    if let Some(e) = against {
        let c = dot(v, e);
        v.iter_mut().zip(e).for_each(|(x, ei)| *x -= c * ei);
    }
}

fn principal_direction(rows: &[Vec<f64>], width: usize, deflate: Option<&Vec<f64>>) -> Vec<f64> {
    let against = deflate.map(Vec::as_slice);
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    rng.set_stream(deflate.is_some() as u64);
    let dist = Uniform::new(-1.0, 1.0);
    let mut v: Vec<f64> = (0..width).map(|_| dist.sample(&mut rng)).collect();
    orthogonalize(&mut v, against);
    normalize(&mut v);

    for _ in 0..PROJECTION_ITERATIONS {
        // v ← Xᵀ(X v)
        let mut next = vec![0.0; width];
        for row in rows {
            let s = dot(row, &v);
            next.iter_mut().zip(row).for_each(|(acc, x)| *acc += s * x);
        }
        orthogonalize(&mut next, against);
        if !normalize(&mut next) {
            break;
        }
        v = next;
    }

    let mut peak = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[peak].abs() {
            peak = i;
        }
    }
    if v[peak] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}
