//! Text embeddings for checkpoint comparisons.
//!
//! The reference provider is a hashed bag of tokens: integer bucket counts,
//! then L2 normalisation, so the output does not depend on summation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EMBEDDING_DIM: usize = 384;
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_0384;
/// Phrase corpus used to calibrate the null similarity distribution.
pub const NULL_CORPUS: &str = include_str!("../data/null_corpus.txt");

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("null calibration needs at least 2 corpus entries, got {0}")]
    InsufficientCorpus(usize),
    #[error("n_pairs must be positive")]
    NoPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn from_values(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        EmbeddingVector { values: self.values.iter().map(|v| v * alpha).collect() }
    }
}

pub trait EmbeddingProvider: Send + Sync {
    /// Identity string recorded in session traces.
    fn id(&self) -> String;
    fn embed(&self, text: &str) -> EmbeddingVector;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub seed: u64,
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { seed: DEFAULT_HASH_SEED, dim: EMBEDDING_DIM }
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase())
}

impl HashingEmbedder {
    pub fn bucket_counts(&self, text: &str) -> Vec<u64> {
        let mut counts = vec![0u64; self.dim];
        for tok in tokens(text) {
            counts[(fnv1a(self.seed, tok.as_bytes()) % self.dim as u64) as usize] += 1;
        }
        counts
    }
}

impl EmbeddingProvider for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-bow/fnv1a/dim={}/seed={:#x}", self.dim, self.seed)
    }

    fn embed(&self, text: &str) -> EmbeddingVector {
        let counts = self.bucket_counts(text);
        let sq: u64 = counts.iter().map(|c| c * c).sum();
        if sq == 0 {
            return EmbeddingVector { values: vec![0.0; self.dim] };
        }
        let norm = (sq as f64).sqrt();
        EmbeddingVector { values: counts.iter().map(|c| *c as f64 / norm).collect() }
    }
}

pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if u.dim() != v.dim() {
        return Err(EmbeddingError::DimensionMismatch(u.dim(), v.dim()));
    }
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

pub fn text_similarity(provider: &dyn EmbeddingProvider, a: &str, b: &str) -> f64 {
    cosine(&provider.embed(a), &provider.embed(b)).unwrap_or(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    samples: Vec<f64>,
}

impl NullDistribution {
    pub fn from_samples(mut samples: Vec<f64>) -> Option<Self> {
        if samples.is_empty() || samples.iter().any(|s| s.is_nan()) {
            return None;
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(NullDistribution { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Linear interpolation between order statistics at position q*(n-1).
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        let pos = q * (self.samples.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        self.samples[lo] + (self.samples[hi] - self.samples[lo]) * frac
    }
}

pub fn load_corpus(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect()
}

pub fn calibrate_null(
    provider: &dyn EmbeddingProvider,
    corpus: &[String],
    n_pairs: usize,
    seed: u64,
) -> Result<NullDistribution, EmbeddingError> {
    if corpus.len() < 2 {
        return Err(EmbeddingError::InsufficientCorpus(corpus.len()));
    }
    if n_pairs == 0 {
        return Err(EmbeddingError::NoPairs);
    }
    let vectors: Vec<EmbeddingVector> = corpus.iter().map(|t| provider.embed(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = corpus.len();
    let samples = (0..n_pairs)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            cosine(&vectors[i], &vectors[j]).unwrap_or(0.0)
        })
        .collect();
    Ok(NullDistribution::from_samples(samples).expect("samples are finite"))
}

/// 0.95-quantile of the shipped corpus under `provider`, 2000 pairs.
pub fn shipped_null_floor(provider: &dyn EmbeddingProvider, seed: u64) -> f64 {
    let corpus = load_corpus(NULL_CORPUS);
    calibrate_null(provider, &corpus, 2000, seed).map(|d| d.quantile(0.95)).unwrap_or(0.0)
}
