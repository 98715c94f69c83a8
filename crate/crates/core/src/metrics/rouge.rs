//! ROUGE-N and ROUGE-L.

use serde::{Deserialize, Serialize};

use super::bleu::ngrams;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        if overlap == 0 || cand_total == 0 || ref_total == 0 {
            return Prf::default();
        }
        Self::from_pr(overlap as f64 / cand_total as f64, overlap as f64 / ref_total as f64)
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf { precision, recall, f1 }
    }
}

pub fn rouge_n(cand: &[String], reference: &[String], n: usize) -> Prf {
    let c = ngrams(cand, n);
    let r = ngrams(reference, n);
    let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
    Prf::from_counts(overlap, c.values().sum(), r.values().sum())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(cand: &[String], reference: &[String]) -> Prf {
    Prf::from_counts(lcs_len(cand, reference), cand.len(), reference.len())
}
