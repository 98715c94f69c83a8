//! Generation metrics: BLEU, ROUGE, METEOR, greedy token-embedding matching
//! and sentence cosine, computed overall and per OCR / non-OCR slice.
//!
//! BLEU is corpus-level; every other score is averaged over samples.

pub mod bleu;
pub mod meteor;
pub mod rouge;
pub mod semantic;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backends::{SentenceEmbedder, SynonymSource, TokenEmbedder};
use crate::data::{tokenize, Sample};
use crate::error::{MuseError, Result};
use crate::par::{self, Exec};

pub use bleu::{bleu, corpus_bleu, BleuStats};
pub use meteor::{meteor_score, MeteorScore};
pub use rouge::{lcs_len, rouge_l, rouge_n, Prf};
pub use semantic::{embedding_score, sentence_similarity, EmbeddingScore, SentenceScore};

/// One generated explanation, keyed by sample id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub id: String,
    pub generation: String,
}

#[derive(Clone, Copy)]
pub struct EvalContext<'a> {
    pub exec: Exec,
    pub token_embedder: &'a dyn TokenEmbedder,
    pub sentence_embedder: &'a dyn SentenceEmbedder,
    /// Enables METEOR's synonym stage.
    pub synonyms: Option<&'a dyn SynonymSource>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceScores {
    pub count: usize,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
    pub meteor: f64,
    pub emb_p: f64,
    pub emb_r: f64,
    pub emb_f1: f64,
    pub emb_skipped: usize,
    pub sent_cosine: f64,
    pub sent_skipped: usize,
}

impl SliceScores {
    /// Every score, in table column order.
    pub fn values(&self) -> [f64; 12] {
        [
            self.b1,
            self.b2,
            self.b3,
            self.b4,
            self.r1,
            self.r2,
            self.rl,
            self.meteor,
            self.emb_p,
            self.emb_r,
            self.emb_f1,
            self.sent_cosine,
        ]
    }
}

pub const COLUMNS: [&str; 12] = [
    "B1", "B2", "B3", "B4", "R1", "R2", "RL", "METEOR", "BS-P", "BS-R", "BS-F1", "SentCos",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: Option<SliceScores>,
    pub ocr: Option<SliceScores>,
    pub non_ocr: Option<SliceScores>,
    /// Why a slice is missing, or other caveats.
    pub notes: Vec<String>,
}

impl MetricReport {
    pub fn slices(&self) -> [(&'static str, Option<&SliceScores>); 3] {
        [
            ("Overall", self.overall.as_ref()),
            ("Non-OCR", self.non_ocr.as_ref()),
            ("OCR", self.ocr.as_ref()),
        ]
    }

    /// Aligned table, scores x100 with two decimals.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<8} {:>6}", "Data", "N");
        for c in COLUMNS {
            let _ = write!(out, " {c:>7}");
        }
        out.push('\n');
        for (name, slice) in self.slices() {
            let Some(s) = slice else { continue };
            let _ = write!(out, "{name:<8} {:>6}", s.count);
            for v in s.values() {
                let _ = write!(out, " {:>7.2}", v * 100.0);
            }
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

/// Everything one pair contributes to the corpus scores.
#[derive(Clone, Debug)]
struct PairStats {
    ocr: bool,
    bleu: BleuStats,
    r1: f64,
    r2: f64,
    rl: f64,
    meteor: f64,
    emb: Option<Prf>,
    sent: Option<f64>,
}

fn pair_stats(cand: &str, reference: &str, ocr: bool, ctx: &EvalContext) -> PairStats {
    let (c, r) = (tokenize(cand), tokenize(reference));
    PairStats {
        ocr,
        bleu: BleuStats::new(&c, &r, 4),
        r1: rouge_n(&c, &r, 1).f1,
        r2: rouge_n(&c, &r, 2).f1,
        rl: rouge_l(&c, &r).f1,
        meteor: meteor_score(&c, &r, ctx.synonyms).score,
        emb: semantic::pair_embedding_score(cand, reference, ctx.token_embedder),
        sent: semantic::pair_sentence_cosine(cand, reference, ctx.sentence_embedder),
    }
}

fn reduce(stats: &[&PairStats]) -> Option<SliceScores> {
    if stats.is_empty() {
        return None;
    }
    let n = stats.len() as f64;
    let mut bleu = BleuStats::default();
    for s in stats {
        bleu.add(&s.bleu);
    }
    let b = bleu.scores();
    let mean = |f: fn(&PairStats) -> f64| stats.iter().map(|s| f(s)).sum::<f64>() / n;
    let emb = semantic::mean_embedding_score(stats.iter().map(|s| s.emb));
    let sent = semantic::mean_sentence_score(stats.iter().map(|s| s.sent));
    Some(SliceScores {
        count: stats.len(),
        b1: b[0],
        b2: b[1],
        b3: b[2],
        b4: b[3],
        r1: mean(|s| s.r1),
        r2: mean(|s| s.r2),
        rl: mean(|s| s.rl),
        meteor: mean(|s| s.meteor),
        emb_p: emb.precision,
        emb_r: emb.recall,
        emb_f1: emb.f1,
        emb_skipped: emb.skipped,
        sent_cosine: sent.mean_cosine,
        sent_skipped: sent.skipped,
    })
}

/// Scores generations against the samples' reference explanations.
/// Every sample needs exactly one generation; pairs are processed in id
/// order, so the report does not depend on input order.
pub fn evaluate_corpus(gens: &[Generation], samples: &[Sample], ctx: &EvalContext) -> Result<MetricReport> {
    let mut by_id: HashMap<&str, &str> = HashMap::with_capacity(gens.len());
    for g in gens {
        if by_id.insert(g.id.as_str(), g.generation.as_str()).is_some() {
            return Err(MuseError::Data(format!("two generations for sample {}", g.id)));
        }
    }
    let mut pairs: Vec<(&Sample, &str)> = Vec::with_capacity(samples.len());
    for s in samples {
        let g = by_id
            .remove(s.id.as_str())
            .ok_or_else(|| MuseError::Data(format!("no generation for sample {}", s.id)))?;
        pairs.push((s, g));
    }
    if let Some(extra) = by_id.keys().min() {
        return Err(MuseError::Data(format!("generation for unknown sample {extra}")));
    }
    if pairs.is_empty() {
        return Err(MuseError::Data("nothing to evaluate".into()));
    }
    pairs.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let stats = par::map(ctx.exec, &pairs, |(s, g)| {
        pair_stats(g, &s.explanation, s.is_ocr_sample, ctx)
    });
    let all: Vec<&PairStats> = stats.iter().collect();
    let ocr: Vec<&PairStats> = stats.iter().filter(|s| s.ocr).collect();
    let non_ocr: Vec<&PairStats> = stats.iter().filter(|s| !s.ocr).collect();
    let mut notes = Vec::new();
    if ocr.is_empty() {
        notes.push("OCR slice omitted: no OCR samples".to_string());
    }
    if non_ocr.is_empty() {
        notes.push("non-OCR slice omitted: no non-OCR samples".to_string());
    }
    Ok(MetricReport {
        overall: reduce(&all),
        ocr: reduce(&ocr),
        non_ocr: reduce(&non_ocr),
        notes,
    })
}
