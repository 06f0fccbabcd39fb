//! Text embeddings: the provider trait, unit vectors, and the offline
//! hashed character n-gram fallback.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::fnv1a64;

/// Bucket count of the fallback embedding.
pub const FALLBACK_DIMS: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unreachable: {0}")]
    Unreachable(String),
    #[error("embedding provider returned an unusable vector: {0}")]
    BadResponse(String),
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
}

/// An L2-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `raw` to unit length. Zero and non-finite vectors are rejected.
    pub fn normalized(raw: Vec<f64>) -> Result<Self, EmbedError> {
        if raw.is_empty() {
            return Err(EmbedError::BadResponse("empty vector".into()));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::BadResponse("non-finite component".into()));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(EmbedError::BadResponse("zero vector".into()));
        }
        Ok(Self(raw.into_iter().map(|v| v / norm).collect()))
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    /// Cosine similarity, clamped to [-1, 1].
    pub fn cosine(&self, other: &Self) -> Result<f64, EmbedError> {
        if self.dims() != other.dims() {
            return Err(EmbedError::DimensionMismatch(self.dims(), other.dims()));
        }
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum();
        Ok(dot.clamp(-1.0, 1.0))
    }
}

/// Anything that maps text to a unit vector. Implementations must be
/// deterministic for a fixed provider and text.
pub trait Embedder: Send + Sync {
    /// Identifier recorded in caches and manifests.
    fn id(&self) -> &str;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    fn similarity(&self, a: &str, b: &str) -> Result<f64, EmbedError> {
        self.embed(a)?.cosine(&self.embed(b)?)
    }
}

/// Offline embedding: character n-grams for n in 1..=3, each hashed with
/// FNV-1a over its UTF-8 bytes into one of 256 buckets, then L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedNgramEmbedder;

impl HashedNgramEmbedder {
    pub const ID: &'static str = "hashed-ngram-256";

    /// Raw bucket counts before normalization.
    pub fn bucket_counts(text: &str) -> [u32; FALLBACK_DIMS] {
        let chars: Vec<char> = text.chars().collect();
        let mut counts = [0u32; FALLBACK_DIMS];
        let mut buf = String::new();
        for n in 1..=3usize {
            for window in chars.windows(n) {
                buf.clear();
                buf.extend(window);
                let bucket = (fnv1a64(buf.as_bytes()) % FALLBACK_DIMS as u64) as usize;
                counts[bucket] += 1;
            }
        }
        counts
    }
}

impl Embedder for HashedNgramEmbedder {
    fn id(&self) -> &str {
        Self::ID
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let counts = Self::bucket_counts(text);
        EmbeddingVector::normalized(counts.iter().map(|&c| f64::from(c)).collect())
    }
}
