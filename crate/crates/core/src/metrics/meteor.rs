//! METEOR with exact unigram alignment and an optional synonym stage.
//!
//! ```text
//! P = m / |cand|      R = m / |ref|      F_mean = 10 P R / (R + 9 P)
//! penalty = 0.5 (chunks / m)^3           score = F_mean (1 - penalty)
//! ```

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::backends::{PosTag, SynonymSource};

/// Search nodes allowed when minimizing chunks; past it the best alignment found so far is used.
pub const ALIGNMENT_BUDGET: usize = 200_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeteorScore {
    pub matches: usize,
    pub chunks: usize,
    pub precision: f64,
    pub recall: f64,
    pub f_mean: f64,
    pub penalty: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alignment {
    /// `(cand_index, ref_index)`, sorted by candidate index.
    pub pairs: Vec<(usize, usize)>,
    /// False when the search budget ran out before the optimum was proven.
    pub exhaustive: bool,
}

/// Number of runs of pairs that are contiguous in both sentences.
pub fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    let mut sorted = pairs.to_vec();
    sorted.sort_unstable();
    let breaks = sorted
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count();
    if sorted.is_empty() {
        0
    } else {
        breaks + 1
    }
}

struct Search<'a> {
    cand: &'a [usize],
    positions: &'a [Vec<usize>],
    /// `suffix[i][t]`: occurrences of type `t` in `cand[i..]`.
    suffix: Vec<Vec<usize>>,
    target: usize,
    used: Vec<bool>,
    unused_per_type: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    best: Option<(usize, Vec<(usize, usize)>)>,
    nodes: usize,
    budget: usize,
}

impl Search<'_> {
    fn reachable(&self, i: usize) -> usize {
        self.suffix[i]
            .iter()
            .zip(&self.unused_per_type)
            .map(|(a, b)| (*a).min(*b))
            .sum()
    }

    fn run(&mut self, i: usize, chunks: usize) {
        self.nodes += 1;
        if self.nodes > self.budget && self.best.is_some() {
            return;
        }
        if self.best.as_ref().is_some_and(|(c, _)| chunks >= *c) {
            return;
        }
        if self.pairs.len() + self.reachable(i) < self.target {
            return;
        }
        if i == self.cand.len() || self.pairs.len() == self.target {
            self.best = Some((chunks, self.pairs.clone()));
            return;
        }
        let t = self.cand[i];
        let last = self.pairs.last().copied();
        let mut options: Vec<usize> = self.positions[t].iter().copied().filter(|&j| !self.used[j]).collect();
        // continuing the current chunk first finds good bounds early
        if let Some((li, lj)) = last {
            if li + 1 == i {
                if let Some(k) = options.iter().position(|&j| j == lj + 1) {
                    let j = options.remove(k);
                    options.insert(0, j);
                }
            }
        }
        for j in options {
            let extends = last.is_some_and(|(li, lj)| li + 1 == i && lj + 1 == j);
            self.used[j] = true;
            self.unused_per_type[t] -= 1;
            self.pairs.push((i, j));
            self.run(i + 1, chunks + usize::from(!extends));
            self.pairs.pop();
            self.unused_per_type[t] += 1;
            self.used[j] = false;
        }
        self.run(i + 1, chunks);
    }
}

/// Exact-match alignment with the most matches and, among those, the fewest chunks.
pub fn exact_alignment(cand: &[String], reference: &[String], budget: usize) -> Alignment {
    let mut types: HashMap<&str, usize> = HashMap::new();
    for w in reference {
        let n = types.len();
        types.entry(w.as_str()).or_insert(n);
    }
    let none = types.len();
    let cand_ids: Vec<usize> = cand
        .iter()
        .map(|w| types.get(w.as_str()).copied().unwrap_or(none))
        .collect();
    let mut positions = vec![Vec::new(); none + 1];
    for (j, w) in reference.iter().enumerate() {
        positions[types[w.as_str()]].push(j);
    }
    let mut unused_per_type: Vec<usize> = positions.iter().map(Vec::len).collect();
    unused_per_type[none] = 0;
    let mut suffix = vec![vec![0usize; none + 1]; cand.len() + 1];
    for i in (0..cand.len()).rev() {
        suffix[i] = suffix[i + 1].clone();
        suffix[i][cand_ids[i]] += 1;
    }
    let target = suffix[0].iter().zip(&unused_per_type).map(|(a, b)| (*a).min(*b)).sum();
    let mut s = Search {
        cand: &cand_ids,
        positions: &positions,
        suffix,
        target,
        used: vec![false; reference.len()],
        unused_per_type,
        pairs: Vec::new(),
        best: None,
        nodes: 0,
        budget,
    };
    s.run(0, 0);
    let exhaustive = s.nodes <= budget;
    let pairs = s.best.map(|(_, p)| p).unwrap_or_default();
    Alignment { pairs, exhaustive }
}

fn synonym_match(syn: &dyn SynonymSource, a: &str, b: &str) -> bool {
    PosTag::CONTENT.iter().any(|&t| syn.are_synonyms(a, b, t))
}

pub fn meteor_score(cand: &[String], reference: &[String], synonyms: Option<&dyn SynonymSource>) -> MeteorScore {
    let mut pairs = exact_alignment(cand, reference, ALIGNMENT_BUDGET).pairs;
    if let Some(syn) = synonyms {
        let mut cand_used = vec![false; cand.len()];
        let mut ref_used = vec![false; reference.len()];
        for &(i, j) in &pairs {
            cand_used[i] = true;
            ref_used[j] = true;
        }
        for i in 0..cand.len() {
            if cand_used[i] {
                continue;
            }
            if let Some(j) = (0..reference.len()).find(|&j| !ref_used[j] && synonym_match(syn, &cand[i], &reference[j]))
            {
                ref_used[j] = true;
                pairs.push((i, j));
            }
        }
    }
    score_from_alignment(pairs.len(), count_chunks(&pairs), cand.len(), reference.len())
}

pub fn score_from_alignment(matches: usize, chunks: usize, cand_len: usize, ref_len: usize) -> MeteorScore {
    if matches == 0 {
        return MeteorScore::default();
    }
    let precision = matches as f64 / cand_len as f64;
    let recall = matches as f64 / ref_len as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    MeteorScore {
        matches,
        chunks,
        precision,
        recall,
        f_mean,
        penalty,
        score: f_mean * (1.0 - penalty),
    }
}
