//! Text embedders and cosine similarity.
//!
//! Two deterministic reference embedders are provided:
//!
//! - `vocab`: one dimension per vocabulary term, unknown tokens dropped.
//!   Collision free, so similarities can be computed by hand.
//! - `hashed`: tokens are bucketed by a seeded 64-bit FNV-1a hash masked to a
//!   power-of-two dimension. Open vocabulary.
//!
//! Both count token occurrences into buckets and L2-normalize. Text without
//! any surviving token maps to the all-zero vector, which has similarity 0
//! with everything.
//!
//! Other models plug in through the [`Embedder`] trait, and precomputed
//! document vectors can be loaded with [`read_vector_records`].

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{tokenize, Fnv1a};

/// Default dimension for the hashed embedder.
pub const DEFAULT_DIMENSION: usize = 64;

const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {left} vs {right} (incompatible embedder configurations)")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
}

/// A unit-L2-norm vector, or the all-zero sentinel produced for empty text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// The zero-vector sentinel.
    pub fn zero(dimension: usize) -> Self {
        Embedding(vec![0.0; dimension])
    }

    /// L2-normalizes `values`. An all-zero input stays the zero sentinel.
    ///
    /// Returns `None` if any component is not finite.
    pub fn normalized(mut values: Vec<f64>) -> Option<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Some(Embedding(values))
    }

    /// Wraps values that are already unit norm (or zero), bit for bit.
    pub(crate) fn from_unit(values: Vec<f64>) -> Self {
        Embedding(values)
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Checks the type invariant: finite components and either unit norm or
    /// the zero sentinel.
    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
            && (self.is_zero() || (self.norm() - 1.0).abs() <= NORM_TOLERANCE)
    }
}

/// Plain left-to-right dot product. Every similarity in the crate goes
/// through here so that equal inputs always produce bit-identical scores.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Four dot products against `q`, each summed exactly as [`dot`] sums it.
/// Interleaving the independent sums lets the CPU overlap them.
#[inline]
pub(crate) fn dot4(q: &[f64], v: [&[f64]; 4]) -> [f64; 4] {
    let n = q.len();
    let (v0, v1, v2, v3) = (&v[0][..n], &v[1][..n], &v[2][..n], &v[3][..n]);
    let mut acc = [0.0; 4];
    for k in 0..n {
        let x = q[k];
        acc[0] += x * v0[k];
        acc[1] += x * v1[k];
        acc[2] += x * v2[k];
        acc[3] += x * v3[k];
    }
    acc
}

/// Vectors per interleaved block.
pub(crate) const LANES: usize = 8;

/// Lays vectors out in blocks of [`LANES`]: component `k` of the `l`-th
/// vector of a block sits at `block[k * LANES + l]`. The last block is
/// zero-padded.
pub(crate) fn interleave<'a>(
    vectors: impl ExactSizeIterator<Item = &'a [f64]>,
    dim: usize,
) -> Vec<f64> {
    let blocks = vectors.len().div_ceil(LANES);
    let mut out = vec![0.0; blocks * LANES * dim];
    for (i, v) in vectors.enumerate() {
        let block = &mut out[(i / LANES) * LANES * dim..];
        for (k, x) in v.iter().enumerate() {
            block[k * LANES + i % LANES] = *x;
        }
    }
    out
}

/// Dot products of `q` with each vector of one interleaved block. Every
/// lane is summed left to right, so lane `l` equals `dot(q, v_l)` bit for
/// bit.
#[inline]
pub(crate) fn dot_block(q: &[f64], block: &[f64]) -> [f64; LANES] {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the running CPU supports AVX2.
        return unsafe { dot_block_avx2(q, block) };
    }
    dot_block_generic(q, block)
}

/// Wider registers, same operations: multiplies and adds stay separate.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_block_avx2(q: &[f64], block: &[f64]) -> [f64; LANES] {
    dot_block_generic(q, block)
}

#[inline(always)]
fn dot_block_generic(q: &[f64], block: &[f64]) -> [f64; LANES] {
    let mut acc = [0.0; LANES];
    for (x, row) in q.iter().zip(block.chunks_exact(LANES)) {
        let row: &[f64; LANES] = row.try_into().expect("block rows hold LANES values");
        for l in 0..LANES {
            acc[l] += x * row[l];
        }
    }
    acc
}

/// Cosine similarity of two embeddings (their dot product, as both are unit
/// norm). Zero when either side is the zero sentinel.
pub fn similarity(a: &Embedding, b: &Embedding) -> Result<f64, EmbeddingError> {
    if a.dimension() != b.dimension() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    Ok(dot(&a.0, &b.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Vocab,
    Hashed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    /// Ordered term list, `vocab` kind only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vocabulary: Vec<String>,
    /// Hash seed, `hashed` kind only.
    #[serde(default)]
    pub seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::hashed(DEFAULT_DIMENSION, 0)
    }
}

impl EmbedderConfig {
    pub fn vocab<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let vocabulary: Vec<String> = terms.into_iter().map(Into::into).collect();
        EmbedderConfig {
            kind: EmbedderKind::Vocab,
            dimension: vocabulary.len(),
            vocabulary,
            seed: 0,
        }
    }

    pub fn hashed(dimension: usize, seed: u64) -> Self {
        EmbedderConfig {
            kind: EmbedderKind::Hashed,
            dimension,
            vocabulary: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.dimension == 0 {
            return Err(EmbeddingError::InvalidConfig(
                "dimension must be positive".into(),
            ));
        }
        match self.kind {
            EmbedderKind::Vocab => {
                if self.vocabulary.len() != self.dimension {
                    return Err(EmbeddingError::InvalidConfig(format!(
                        "vocab dimension {} does not match vocabulary length {}",
                        self.dimension,
                        self.vocabulary.len()
                    )));
                }
                let mut seen = std::collections::HashSet::new();
                for term in &self.vocabulary {
                    if !seen.insert(term.as_str()) {
                        return Err(EmbeddingError::InvalidConfig(format!(
                            "duplicate vocabulary term {term:?}"
                        )));
                    }
                }
            }
            EmbedderKind::Hashed => {
                if !self.dimension.is_power_of_two() {
                    return Err(EmbeddingError::InvalidConfig(format!(
                        "hashed dimension {} is not a power of two",
                        self.dimension
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable identifier of the embedding space this config produces.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        match self.kind {
            EmbedderKind::Vocab => {
                h.write(b"vocab");
                for term in &self.vocabulary {
                    h.write(term.as_bytes()).write(&[0]);
                }
            }
            EmbedderKind::Hashed => {
                h.write(b"hashed")
                    .write_u64(self.dimension as u64)
                    .write_u64(self.seed);
            }
        }
        h.finish()
    }
}

/// Maps text to an [`Embedding`].
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Embedding;

    /// Batch entry point for services that compute vectors elsewhere.
    fn embed_batch(&self, texts: &[&str]) -> Vec<Embedding> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    /// Identifies the embedding space. Vectors from embedders with different
    /// fingerprints must not be compared.
    fn fingerprint(&self) -> u64;
}

/// One of the two reference embedders, ready to use.
#[derive(Clone, Debug)]
pub struct TextEmbedder {
    config: EmbedderConfig,
    vocab_index: HashMap<String, usize>,
    fingerprint: u64,
}

impl TextEmbedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let vocab_index = config
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        let fingerprint = config.fingerprint();
        Ok(TextEmbedder {
            config,
            vocab_index,
            fingerprint,
        })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    fn bucket(&self, token: &str) -> Option<usize> {
        match self.config.kind {
            EmbedderKind::Vocab => self.vocab_index.get(token).copied(),
            EmbedderKind::Hashed => {
                let h = Fnv1a::new()
                    .write_u64(self.config.seed)
                    .write(token.as_bytes())
                    .finish();
                Some((h & (self.config.dimension as u64 - 1)) as usize)
            }
        }
    }
}

impl Embedder for TextEmbedder {
    fn dimension(&self) -> usize {
        self.config.dimension
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut counts = vec![0.0; self.config.dimension];
        for token in tokenize(text) {
            if let Some(b) = self.bucket(&token) {
                counts[b] += 1.0;
            }
        }
        // Counts are finite, so normalization cannot fail.
        Embedding::normalized(counts).expect("finite token counts")
    }

    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

/// Embeds a single text. Builds the embedder on every call; use
/// [`TextEmbedder`] directly for repeated work.
pub fn embed_text(text: &str, config: &EmbedderConfig) -> Result<Embedding, EmbeddingError> {
    Ok(TextEmbedder::new(config.clone())?.embed(text))
}

/// One line of a precomputed-vector file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorRecord {
    pub doc_id: String,
    pub vector: Vec<f64>,
}

/// Reads JSON-lines `{"doc_id": ..., "vector": [...]}` records, normalizing
/// each vector. All vectors must share one dimension.
pub fn read_vector_records<R: BufRead>(
    reader: R,
) -> Result<Vec<(String, Embedding)>, EmbeddingError> {
    let mut out = Vec::new();
    let mut dim = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EmbeddingError::Record {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VectorRecord =
            serde_json::from_str(&line).map_err(|e| EmbeddingError::Record {
                line: line_no,
                message: e.to_string(),
            })?;
        let d = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != d {
            return Err(EmbeddingError::Record {
                line: line_no,
                message: format!("vector has dimension {}, expected {d}", rec.vector.len()),
            });
        }
        let emb = Embedding::normalized(rec.vector).ok_or_else(|| EmbeddingError::Record {
            line: line_no,
            message: "non-finite vector component".into(),
        })?;
        out.push((rec.doc_id, emb));
    }
    Ok(out)
}
