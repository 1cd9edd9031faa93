//! Text quality metrics: corpus BLEU@4 and an embedding-based sentence
//! similarity score over a pluggable provider.
//!
//! Tokenization is shared by every consumer (vocabulary building, scoring,
//! reference handling): lowercase the sentence, strip terminal punctuation,
//! split on whitespace. Applying the same normalization to predictions and
//! references keeps the metrics honest.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, strip sentence-terminal punctuation, split on whitespace.
pub fn tokenize(sentence: &str) -> Vec<String> {
    sentence
        .trim()
        .trim_end_matches(['.', '!', '?', ',', ';', ':'])
        .to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// How to handle n-gram precisions with zero numerators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Any zero precision zeroes the whole score.
    None,
    /// Add one to numerator and denominator of every precision above
    /// unigrams; useful on tiny desk corpora where 4-gram overlap is rare.
    AddOne,
}

/// Corpus BLEU@4: geometric mean of clipped 1–4-gram precisions times the
/// brevity penalty, no smoothing.
pub fn bleu4(predictions: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64> {
    bleu4_with(predictions, references, Smoothing::None)
}

pub fn bleu4_with(
    predictions: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    smoothing: Smoothing,
) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    if predictions.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions vs {} reference sets",
            predictions.len(),
            references.len()
        )));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::InvalidArgument(
            "every sample needs at least one reference".into(),
        ));
    }

    let mut pred_len = 0usize;
    let mut ref_len = 0usize;
    let mut numerators = [0usize; 4];
    let mut denominators = [0usize; 4];

    for (pred, refs) in predictions.iter().zip(references) {
        pred_len += pred.len();
        ref_len += closest_reference_length(pred.len(), refs);
        for n in 1..=4usize {
            let pred_counts = ngram_counts(pred, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (gram, count) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(count);
                }
            }
            for (gram, count) in &pred_counts {
                numerators[n - 1] += (*count).min(*max_ref.get(gram).unwrap_or(&0));
            }
            denominators[n - 1] += pred.len().saturating_sub(n - 1);
        }
    }

    if pred_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (num, den) = match smoothing {
            Smoothing::None => (numerators[n] as f64, denominators[n] as f64),
            Smoothing::AddOne if n > 0 => {
                (numerators[n] as f64 + 1.0, denominators[n] as f64 + 1.0)
            }
            Smoothing::AddOne => (numerators[n] as f64, denominators[n] as f64),
        };
        if num == 0.0 || den == 0.0 {
            return Ok(0.0);
        }
        log_sum += 0.25 * (num / den).ln();
    }
    let bp = if pred_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / pred_len as f64).exp()
    };
    Ok(bp * log_sum.exp())
}

/// Reference length closest to the prediction's; ties go to the shorter.
fn closest_reference_length(pred_len: usize, refs: &[Vec<String>]) -> usize {
    let mut best = refs[0].len();
    for r in &refs[1..] {
        let len = r.len();
        let d_new = len.abs_diff(pred_len);
        let d_best = best.abs_diff(pred_len);
        if d_new < d_best || (d_new == d_best && len < best) {
            best = len;
        }
    }
    best
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *counts.entry(&tokens[i..i + n]).or_insert(0) += 1;
        }
    }
    counts
}

/// `u·v / (‖u‖‖v‖)`; rejects zero vectors and mismatched widths.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::ShapeMismatch {
            op: "cosine_similarity",
            lhs: vec![u.len()],
            rhs: vec![v.len()],
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&x, &y) in u.iter().zip(v) {
        dot += x * y;
        nu += x * x;
        nv += y * y;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidArgument(
            "cosine similarity of a zero vector".into(),
        ));
    }
    Ok(dot / (nu.sqrt() * nv.sqrt()))
}

/// Deterministic sentence-to-vector map. Identical sentences must embed to
/// identical vectors with nonzero norm.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, sentence: &str) -> Result<Vec<f64>>;
}

/// Hashed bag-of-words embedding for tests and smoke runs: each token
/// contributes a pseudo-random but fully deterministic direction derived
/// from an FNV-1a hash of its bytes. Not a semantic model.
#[derive(Debug, Clone)]
pub struct HashEmbedding {
    pub dim: usize,
}

impl HashEmbedding {
    pub fn new(dim: usize) -> Self {
        HashEmbedding { dim }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl EmbeddingProvider for HashEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &str) -> Result<Vec<f64>> {
        let tokens = tokenize(sentence);
        if tokens.is_empty() {
            return Err(Error::Provider {
                sentence: sentence.to_string(),
                reason: "empty sentence".into(),
            });
        }
        let mut v = vec![0.0; self.dim];
        for token in &tokens {
            let h = fnv1a64(token.as_bytes());
            for (i, slot) in v.iter_mut().enumerate() {
                let bits = splitmix64(h ^ (i as u64).wrapping_mul(0xa076_1d64_78bd_642f));
                // Map the top 53 bits to [-1, 1).
                *slot += ((bits >> 11) as f64 / (1u64 << 52) as f64) - 1.0;
            }
        }
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::Provider {
                sentence: sentence.to_string(),
                reason: "zero-norm embedding".into(),
            });
        }
        Ok(v)
    }
}

/// Embeddings read from a precomputed table keyed by normalized sentence
/// text (tokens joined by single spaces), one JSON record per line:
/// `{"sentence": "...", "vector": [...]}`.
#[derive(Debug, Clone)]
pub struct FileEmbedding {
    table: HashMap<String, Vec<f64>>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    sentence: String,
    vector: Vec<f64>,
}

impl FileEmbedding {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut table = HashMap::new();
        let mut dim = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                location: format!("{}:{}", path.display(), i + 1),
                reason: e.to_string(),
            })?;
            if dim == 0 {
                dim = rec.vector.len();
            } else if rec.vector.len() != dim {
                return Err(Error::Parse {
                    location: format!("{}:{}", path.display(), i + 1),
                    reason: format!("vector width {} differs from {}", rec.vector.len(), dim),
                });
            }
            table.insert(tokenize(&rec.sentence).join(" "), rec.vector);
        }
        if table.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "embedding table {} holds no records",
                path.display()
            )));
        }
        Ok(FileEmbedding { table, dim })
    }
}

impl EmbeddingProvider for FileEmbedding {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, sentence: &str) -> Result<Vec<f64>> {
        let key = tokenize(sentence).join(" ");
        self.table.get(&key).cloned().ok_or_else(|| Error::Provider {
            sentence: sentence.to_string(),
            reason: "sentence not in embedding table".into(),
        })
    }
}

/// Per-sample similarity: mean over the sample's predictions of the best
/// cosine match among its references.
pub fn semantic_scores_per_sample(
    references: &[Vec<String>],
    predictions: &[Vec<String>],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<f64>> {
    if references.len() != predictions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} reference sets vs {} prediction sets",
            references.len(),
            predictions.len()
        )));
    }
    let embed = |sentence: &str| -> Result<Vec<f64>> {
        let v = provider.embed(sentence)?;
        if v.iter().all(|&x| x == 0.0) {
            return Err(Error::Provider {
                sentence: sentence.to_string(),
                reason: "zero-norm embedding".into(),
            });
        }
        Ok(v)
    };
    let mut out = Vec::with_capacity(references.len());
    for (refs, preds) in references.iter().zip(predictions) {
        if refs.is_empty() || preds.is_empty() {
            return Err(Error::InvalidArgument(
                "every sample needs at least one reference and one prediction".into(),
            ));
        }
        let ref_vecs: Vec<Vec<f64>> = refs.iter().map(|r| embed(r)).collect::<Result<_>>()?;
        let mut sample = 0.0;
        for pred in preds {
            let pv = embed(pred)?;
            let mut best = f64::NEG_INFINITY;
            for rv in &ref_vecs {
                best = best.max(cosine_similarity(&pv, rv)?);
            }
            sample += best;
        }
        out.push(sample / preds.len() as f64);
    }
    Ok(out)
}

/// Corpus mean of [`semantic_scores_per_sample`].
pub fn semantic_score(
    references: &[Vec<String>],
    predictions: &[Vec<String>],
    provider: &dyn EmbeddingProvider,
) -> Result<f64> {
    let per_sample = semantic_scores_per_sample(references, predictions, provider)?;
    if per_sample.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    Ok(per_sample.iter().sum::<f64>() / per_sample.len() as f64)
}
