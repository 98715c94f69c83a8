//! Corpus-level BLEU.

use std::collections::HashMap;

use crate::error::{MuseError, Result};

/// Floor used in place of a zero n-gram precision before taking logs.
pub const SMOOTHING_EPS: f64 = 1e-9;

pub fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// Sufficient statistics of one candidate/reference pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped matches per order, index 0 = unigrams.
    pub matches: Vec<usize>,
    /// Candidate n-gram totals per order.
    pub totals: Vec<usize>,
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn new(cand: &[String], reference: &[String], max_n: usize) -> Self {
        let mut st = BleuStats {
            matches: Vec::with_capacity(max_n),
            totals: Vec::with_capacity(max_n),
            cand_len: cand.len(),
            ref_len: reference.len(),
        };
        for n in 1..=max_n {
            let c = ngrams(cand, n);
            let r = ngrams(reference, n);
            st.matches
                .push(c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum());
            st.totals.push(cand.len().saturating_sub(n - 1));
        }
        st
    }

    pub fn add(&mut self, other: &BleuStats) {
        if self.matches.is_empty() {
            self.matches = vec![0; other.matches.len()];
            self.totals = vec![0; other.totals.len()];
        }
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    /// Modified precision per order, zero counts replaced by [`SMOOTHING_EPS`].
    pub fn precisions(&self) -> Vec<f64> {
        self.matches
            .iter()
            .zip(&self.totals)
            .map(|(&m, &t)| if m == 0 { SMOOTHING_EPS } else { m as f64 / t as f64 })
            .collect()
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.cand_len == 0 {
            0.0
        } else if self.cand_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        }
    }

    /// `[B1, ..., Bmax_n]`: Bk is the brevity penalty times the geometric
    /// mean of the first k precisions.
    pub fn scores(&self) -> Vec<f64> {
        let bp = self.brevity_penalty();
        let mut log_sum = 0.0;
        self.precisions()
            .iter()
            .enumerate()
            .map(|(k, p)| {
                log_sum += p.ln();
                if bp == 0.0 {
                    0.0
                } else {
                    bp * (log_sum / (k + 1) as f64).exp()
                }
            })
            .collect()
    }
}

/// Corpus BLEU over tokenized pairs; returns `[B1..B{max_n}]`.
pub fn corpus_bleu(cands: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<Vec<f64>> {
    if cands.len() != refs.len() {
        return Err(MuseError::Data(format!(
            "{} candidates but {} references",
            cands.len(),
            refs.len()
        )));
    }
    if cands.is_empty() {
        return Err(MuseError::Data("BLEU of an empty corpus".into()));
    }
    let mut total = BleuStats::default();
    for (c, r) in cands.iter().zip(refs) {
        total.add(&BleuStats::new(c, r, max_n));
    }
    Ok(total.scores())
}

/// `(B1, B2, B3, B4)` for raw strings, tokenized with the shared tokenizer.
pub fn bleu<S: AsRef<str>>(cands: &[S], refs: &[S]) -> Result<[f64; 4]> {
    let tok = |v: &[S]| v.iter().map(|s| crate::data::tokenize(s.as_ref())).collect::<Vec<_>>();
    let s = corpus_bleu(&tok(cands), &tok(refs), 4)?;
    Ok([s[0], s[1], s[2], s[3]])
}
