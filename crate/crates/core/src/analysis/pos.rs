//! Per-tag overlap between generated and reference explanations.
//!
//! For every sample and tag, `G` and `R` are the tag-filtered token
//! multisets of the generation and the reference:
//!
//! ```text
//! overlap     = |G ∩ R|
//! difference  = |G \ R| + |R \ G|
//! overlap_syn = overlap + greedy synonym matches among the leftovers
//! ```
//!
//! Every cell of the table is a corpus average of these counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::backends::{PosTag, PosTagger, SynonymSource};
use crate::error::{MuseError, Result};
use crate::par::{self, Exec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosCell {
    pub ref_count: f64,
    pub gen_count: f64,
    /// Symmetric multiset difference `|G \ R| + |R \ G|`.
    pub difference: f64,
    pub overlap: f64,
    pub overlap_syn: f64,
    /// Mean `abs(|R| - |G|)`, kept alongside `difference` for comparison.
    pub count_gap: f64,
}

impl PosCell {
    fn add(&mut self, o: &PosCell) {
        self.ref_count += o.ref_count;
        self.gen_count += o.gen_count;
        self.difference += o.difference;
        self.overlap += o.overlap;
        self.overlap_syn += o.overlap_syn;
        self.count_gap += o.count_gap;
    }

    fn scale(&mut self, s: f64) {
        for v in [
            &mut self.ref_count,
            &mut self.gen_count,
            &mut self.difference,
            &mut self.overlap,
            &mut self.overlap_syn,
            &mut self.count_gap,
        ] {
            *v *= s;
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosSlice {
    pub count: usize,
    /// Keyed by tag name (`NOUN`, `VERB`, `ADJ`, `ADV`).
    pub tags: BTreeMap<String, PosCell>,
}

impl PosSlice {
    pub fn cell(&self, tag: PosTag) -> Option<&PosCell> {
        self.tags.get(tag.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PosTable {
    pub overall: Option<PosSlice>,
    pub ocr: Option<PosSlice>,
    pub non_ocr: Option<PosSlice>,
}

/// Counts for one pair and one tag.
pub fn pair_cell(gen: &[String], reference: &[String], tag: PosTag, synonyms: &dyn SynonymSource) -> PosCell {
    let mut ref_left: Vec<Option<&str>> = reference.iter().map(|w| Some(w.as_str())).collect();
    let mut unmatched: Vec<&str> = Vec::new();
    let mut overlap = 0usize;
    for g in gen {
        match ref_left.iter_mut().find(|r| r.is_some_and(|r| r == g)) {
            Some(slot) => {
                *slot = None;
                overlap += 1;
            }
            None => unmatched.push(g),
        }
    }
    let mut syn = 0usize;
    for g in unmatched {
        if let Some(slot) = ref_left
            .iter_mut()
            .find(|r| r.is_some_and(|r| synonyms.are_synonyms(g, r, tag)))
        {
            *slot = None;
            syn += 1;
        }
    }
    let (r, g) = (reference.len(), gen.len());
    PosCell {
        ref_count: r as f64,
        gen_count: g as f64,
        difference: (r + g - 2 * overlap) as f64,
        overlap: overlap as f64,
        overlap_syn: (overlap + syn) as f64,
        count_gap: r.abs_diff(g) as f64,
    }
}

fn filtered(tagged: &[(String, PosTag)], tag: PosTag) -> Vec<String> {
    tagged
        .iter()
        .filter(|(_, t)| *t == tag)
        .map(|(w, _)| w.clone())
        .collect()
}

fn reduce(cells: &[&[PosCell; 4]]) -> Option<PosSlice> {
    if cells.is_empty() {
        return None;
    }
    let mut tags = BTreeMap::new();
    for (k, tag) in PosTag::CONTENT.iter().enumerate() {
        let mut acc = PosCell::default();
        for c in cells {
            acc.add(&c[k]);
        }
        acc.scale(1.0 / cells.len() as f64);
        tags.insert(tag.as_str().to_string(), acc);
    }
    Some(PosSlice {
        count: cells.len(),
        tags,
    })
}

/// Averages per tag over all pairs and over the OCR / non-OCR slices.
pub fn pos_overlap_table<S: AsRef<str> + Sync>(
    gens: &[S],
    refs: &[S],
    is_ocr: &[bool],
    tagger: &dyn PosTagger,
    synonyms: &dyn SynonymSource,
    exec: Exec,
) -> Result<PosTable> {
    if gens.len() != refs.len() || gens.len() != is_ocr.len() {
        return Err(MuseError::Data(format!(
            "{} generations, {} references and {} slice flags",
            gens.len(),
            refs.len(),
            is_ocr.len()
        )));
    }
    let per_pair: Vec<[PosCell; 4]> = par::map_indexed(exec, gens.len(), |i| {
        let g = tagger.tag(gens[i].as_ref());
        let r = tagger.tag(refs[i].as_ref());
        PosTag::CONTENT.map(|t| pair_cell(&filtered(&g, t), &filtered(&r, t), t, synonyms))
    });
    let pick = |keep: &dyn Fn(bool) -> bool| -> Vec<&[PosCell; 4]> {
        per_pair
            .iter()
            .zip(is_ocr)
            .filter(|(_, &o)| keep(o))
            .map(|(c, _)| c)
            .collect()
    };
    Ok(PosTable {
        overall: reduce(&pick(&|_| true)),
        ocr: reduce(&pick(&|o| o)),
        non_ocr: reduce(&pick(&|o| !o)),
    })
}

type CellField = fn(&PosCell) -> f64;

impl PosTable {
    pub fn slices(&self) -> [(&'static str, Option<&PosSlice>); 3] {
        [
            ("Total", self.overall.as_ref()),
            ("Non-OCR", self.non_ocr.as_ref()),
            ("OCR", self.ocr.as_ref()),
        ]
    }

    /// One block per tag; rows follow the reference layout, columns are slices.
    pub fn to_text(&self) -> String {
        let rows: [(&str, CellField); 6] = [
            ("Ref count", |c| c.ref_count),
            ("Gen count", |c| c.gen_count),
            ("Difference", |c| c.difference),
            ("Overlap", |c| c.overlap),
            ("Overlap-Syn", |c| c.overlap_syn),
            ("Count gap", |c| c.count_gap),
        ];
        let present: Vec<(&str, &PosSlice)> = self
            .slices()
            .into_iter()
            .filter_map(|(n, s)| s.map(|s| (n, s)))
            .collect();
        let mut out = String::new();
        for tag in PosTag::CONTENT {
            let _ = write!(out, "{:<12}", tag.as_str());
            for (name, s) in &present {
                let _ = write!(out, " {:>9}", format!("{name}({})", s.count));
            }
            out.push('\n');
            for (label, get) in rows {
                let _ = write!(out, "{label:<12}");
                for (_, s) in &present {
                    let v = s.cell(tag).map_or(0.0, get);
                    let _ = write!(out, " {v:>9.2}");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out.push_str("Difference = |G \\ R| + |R \\ G| (symmetric multiset difference); Count gap = |(|R| - |G|)|.\n");
        out
    }
}
