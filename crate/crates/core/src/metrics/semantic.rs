//! Embedding-based scores: greedy token matching and sentence cosine.

use serde::{Deserialize, Serialize};

use super::rouge::Prf;
use crate::backends::{SentenceEmbedder, TokenEmbedder};
use crate::data::tokenize;
use crate::tensor::cosine;

/// Greedy matching for one pair: every candidate token takes its best
/// reference match (precision) and vice versa (recall). `None` if either
/// side has no tokens. Per-side means are floored at 0.
pub fn token_match(cand: &[Vec<f64>], reference: &[Vec<f64>]) -> Option<Prf> {
    if cand.is_empty() || reference.is_empty() {
        return None;
    }
    let sims: Vec<Vec<f64>> = cand
        .iter()
        .map(|c| reference.iter().map(|r| cosine(c, r)).collect())
        .collect();
    let p = sims
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / cand.len() as f64;
    let r = (0..reference.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max))
        .sum::<f64>()
        / reference.len() as f64;
    Some(Prf::from_pr(p.max(0.0), r.max(0.0)))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Pairs skipped because one side was empty.
    pub skipped: usize,
}

pub fn pair_embedding_score(cand: &str, reference: &str, embedder: &dyn TokenEmbedder) -> Option<Prf> {
    let (c, r) = (tokenize(cand), tokenize(reference));
    if c.is_empty() || r.is_empty() {
        return None;
    }
    token_match(&embedder.embed_tokens(&c), &embedder.embed_tokens(&r))
}

pub fn mean_embedding_score(per_pair: impl IntoIterator<Item = Option<Prf>>) -> EmbeddingScore {
    let mut out = EmbeddingScore::default();
    let mut n = 0usize;
    for s in per_pair {
        match s {
            Some(s) => {
                n += 1;
                out.precision += s.precision;
                out.recall += s.recall;
                out.f1 += s.f1;
            }
            None => out.skipped += 1,
        }
    }
    if n > 0 {
        out.precision /= n as f64;
        out.recall /= n as f64;
        out.f1 /= n as f64;
    }
    out
}

pub fn embedding_score<S: AsRef<str>>(cands: &[S], refs: &[S], embedder: &dyn TokenEmbedder) -> EmbeddingScore {
    mean_embedding_score(
        cands
            .iter()
            .zip(refs)
            .map(|(c, r)| pair_embedding_score(c.as_ref(), r.as_ref(), embedder)),
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub mean_cosine: f64,
    /// Pairs excluded because an embedding was degenerate.
    pub skipped: usize,
}

/// Cosine of the two sentence vectors, floored at 0; `None` for degenerate pairs.
pub fn pair_sentence_cosine(cand: &str, reference: &str, embedder: &dyn SentenceEmbedder) -> Option<f64> {
    let (c, r) = (embedder.embed_sentence(cand), embedder.embed_sentence(reference));
    if c.degenerate || r.degenerate {
        return None;
    }
    Some(cosine(&c.values, &r.values).max(0.0))
}

pub fn mean_sentence_score(per_pair: impl IntoIterator<Item = Option<f64>>) -> SentenceScore {
    let (mut sum, mut n, mut skipped) = (0.0, 0usize, 0usize);
    for s in per_pair {
        match s {
            Some(v) => {
                sum += v;
                n += 1;
            }
            None => skipped += 1,
        }
    }
    SentenceScore {
        mean_cosine: if n == 0 { 0.0 } else { sum / n as f64 },
        skipped,
    }
}

pub fn sentence_similarity<S: AsRef<str>>(cands: &[S], refs: &[S], embedder: &dyn SentenceEmbedder) -> SentenceScore {
    mean_sentence_score(
        cands
            .iter()
            .zip(refs)
            .map(|(c, r)| pair_sentence_cosine(c.as_ref(), r.as_ref(), embedder)),
    )
}
