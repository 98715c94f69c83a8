//! Sentence and token embedders used by the semantic metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::data::tokenize;
use crate::tensor::dot;

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceVector {
    /// Unit-norm unless `degenerate`.
    pub values: Vec<f64>,
    /// Set when the text produced no signal (zero vector).
    pub degenerate: bool,
}

pub trait SentenceEmbedder: Send + Sync {
    fn embed_sentence(&self, text: &str) -> SentenceVector;
}

pub trait TokenEmbedder: Send + Sync {
    /// One vector per token, in order.
    fn embed_tokens(&self, tokens: &[String]) -> Vec<Vec<f64>>;
}

/// Bag-of-words stub: every token maps to a fixed pseudo-random vector
/// derived from its SHA-256. Word order is ignored.
#[derive(Clone, Copy, Debug)]
pub struct HashedEmbedder {
    pub dim: usize,
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder { dim: 64 }
    }
}

impl HashedEmbedder {
    pub fn token_vector(&self, token: &str) -> Vec<f64> {
        let seed: [u8; 32] = Sha256::digest(token.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
    }
}

impl TokenEmbedder for HashedEmbedder {
    fn embed_tokens(&self, tokens: &[String]) -> Vec<Vec<f64>> {
        tokens.iter().map(|t| self.token_vector(t)).collect()
    }
}

impl SentenceEmbedder for HashedEmbedder {
    fn embed_sentence(&self, text: &str) -> SentenceVector {
        let mut sum = vec![0.0; self.dim];
        // Sorted so the float sum does not depend on word order.
        let mut toks = tokenize(text);
        toks.sort();
        for tok in toks {
            for (s, v) in sum.iter_mut().zip(self.token_vector(&tok)) {
                *s += v;
            }
        }
        normalized(sum)
    }
}

pub fn normalized(mut values: Vec<f64>) -> SentenceVector {
    let norm = dot(&values, &values).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        values.iter_mut().for_each(|v| *v = 0.0);
        return SentenceVector {
            values,
            degenerate: true,
        };
    }
    values.iter_mut().for_each(|v| *v /= norm);
    SentenceVector {
        values,
        degenerate: false,
    }
}
