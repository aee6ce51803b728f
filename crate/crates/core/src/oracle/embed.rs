use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::OracleError;

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Unit-length retrieval vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values`. A zero vector becomes the first basis vector.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
        } else if !values.is_empty() {
            values.iter_mut().for_each(|v| *v = 0.0);
            values[0] = 1.0;
        }
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity. Mismatched dimensions compare over the shared prefix.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        0.0
    } else {
        dot / denom
    }
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, OracleError>;
}

/// Offline embedder: every lowercase word token is mapped to a seeded
/// pseudo-random direction and the token directions are summed.
///
/// Texts that share words end up close together, which is all retrieval
/// tests need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashEmbedder {
    pub seed: u64,
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self {
            seed: 0x5eed_e4b3,
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl HashEmbedder {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim: dim.max(1) }
    }

    fn token_seed(&self, token: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(token.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, OracleError> {
        if text.trim().is_empty() {
            return Err(OracleError::EmptyText);
        }
        let mut toks = tokens(text);
        if toks.is_empty() {
            toks.push(text.trim().to_string());
        }
        let mut acc = vec![0.0; self.dim];
        for tok in &toks {
            let mut rng = ChaCha8Rng::seed_from_u64(self.token_seed(tok));
            for slot in acc.iter_mut() {
                *slot += rng.random_range(-1.0..1.0);
            }
        }
        Ok(EmbeddingVector::normalized(acc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_unit_length() {
        let e = HashEmbedder::default();
        let a = e.embed("tree").unwrap();
        assert_eq!(a, e.embed("tree").unwrap());
        for text in ["tree", "a", "wide glass tree with glass ornaments", "!!!", "Ünïcode wörds"] {
            let v = e.embed(text).unwrap();
            assert!((v.norm() - 1.0).abs() <= 1e-6);
            assert_eq!(v.dim(), DEFAULT_EMBEDDING_DIM);
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let e = HashEmbedder::default();
        let a = e.embed("a").unwrap();
        assert!((cosine(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_rejected() {
        assert_eq!(HashEmbedder::default().embed("  ").unwrap_err(), OracleError::EmptyText);
    }

    #[test]
    fn shared_words_are_closer() {
        let e = HashEmbedder::default();
        let q = e.embed("the Miller family bakery").unwrap();
        let near = e.embed("I grew up in the Miller family").unwrap();
        let far = e.embed("a storm over distant mountains").unwrap();
        assert!(cosine(&q, &near) > cosine(&q, &far));
    }

    #[test]
    fn zero_vector_normalizes_to_basis() {
        let v = EmbeddingVector::normalized(vec![0.0, 0.0, 0.0]);
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0]);
    }
}
