//! Offline hashed bag-of-words embedder.
//!
//! Each lowercase token is hashed into one of `dimension` buckets and counted.
//! Token order is ignored, so any permutation of a text's tokens embeds to the
//! same vector. The hash is the first eight bytes of SHA-256, which keeps the
//! output identical across runs and platforms.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{EmbedError, Embedder, MIN_LOCAL_DIMENSION};

#[derive(Debug, Clone)]
pub struct HashedBowEmbedder {
    dimension: usize,
}

impl HashedBowEmbedder {
    pub fn new(dimension: usize) -> Result<Self, EmbedError> {
        if dimension < MIN_LOCAL_DIMENSION {
            return Err(EmbedError::Config(format!(
                "local dimension must be >= {MIN_LOCAL_DIMENSION}, got {dimension}"
            )));
        }
        Ok(Self { dimension })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Raw term-frequency vector (not normalized).
    pub fn vectorize(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for token in tokenize(text) {
            *counts.entry(self.bucket(&token)).or_default() += 1.0;
        }
        if counts.is_empty() {
            return Err(EmbedError::NoTokens);
        }
        let mut v = vec![0.0; self.dimension];
        for (i, c) in counts {
            v[i] = c;
        }
        Ok(v)
    }

    fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(head) % self.dimension as u64) as usize
    }
}

impl Embedder for HashedBowEmbedder {
    fn provider_tag(&self) -> String {
        format!("local-hashed-bow:{}", self.dimension)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts.iter().map(|t| self.vectorize(t)).collect()
    }

    fn embed_many(&self, texts: &[&str]) -> Vec<Result<Vec<f64>, EmbedError>> {
        texts.iter().map(|t| self.vectorize(t)).collect()
    }
}

/// Lowercase tokens split on whitespace and punctuation.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}
