//! Human-evaluation aggregation: adequacy/fluency scores, majority-vote
//! distribution and Fleiss' kappa.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MuseError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adequacy {
    Justify,
    WeaklyJustify,
    /// Sarcasm recognized, explanation irrelevant.
    Sri,
    /// No relevant interpretation.
    Nri,
}

impl Adequacy {
    pub const ALL: [Adequacy; 4] = [Adequacy::Justify, Adequacy::WeaklyJustify, Adequacy::Sri, Adequacy::Nri];

    pub fn value(self) -> f64 {
        match self {
            Adequacy::Justify => 1.0,
            Adequacy::WeaklyJustify => 0.66,
            Adequacy::Sri => 0.33,
            Adequacy::Nri => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Adequacy::Justify => "justify",
            Adequacy::WeaklyJustify => "weakly_justify",
            Adequacy::Sri => "sri",
            Adequacy::Nri => "nri",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rating {
    pub sample_id: String,
    pub rater_id: String,
    pub adequacy: Adequacy,
    pub fluency: f64,
}

/// Ratings with at most one entry per (sample, rater).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RatingSet {
    ratings: Vec<Rating>,
}

impl RatingSet {
    pub fn new(ratings: Vec<Rating>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &ratings {
            if !(0.0..=1.0).contains(&r.fluency) {
                return Err(MuseError::Data(format!(
                    "sample {} rater {}: fluency {} outside [0, 1]",
                    r.sample_id, r.rater_id, r.fluency
                )));
            }
            if !seen.insert((r.sample_id.as_str(), r.rater_id.as_str())) {
                return Err(MuseError::Data(format!(
                    "sample {} rated twice by {}",
                    r.sample_id, r.rater_id
                )));
            }
        }
        Ok(RatingSet { ratings })
    }

    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// Adequacy categories per sample, in sample-id order.
    pub fn by_sample(&self) -> BTreeMap<&str, Vec<Adequacy>> {
        let mut out: BTreeMap<&str, Vec<Adequacy>> = BTreeMap::new();
        for r in &self.ratings {
            out.entry(r.sample_id.as_str()).or_default().push(r.adequacy);
        }
        out
    }
}

pub fn load_ratings(path: &Path) -> Result<RatingSet> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut ratings = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Rating = serde_json::from_str(&line).map_err(|e| MuseError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        ratings.push(r);
    }
    RatingSet::new(ratings)
}

fn non_empty(rs: &RatingSet) -> Result<()> {
    if rs.is_empty() {
        return Err(MuseError::Degenerate("no ratings".into()));
    }
    Ok(())
}

/// Mean mapped adequacy over all (sample, rater) pairs.
pub fn adequacy_score(rs: &RatingSet) -> Result<f64> {
    non_empty(rs)?;
    Ok(rs.ratings.iter().map(|r| r.adequacy.value()).sum::<f64>() / rs.len() as f64)
}

pub fn fluency_score(rs: &RatingSet) -> Result<f64> {
    non_empty(rs)?;
    Ok(rs.ratings.iter().map(|r| r.fluency).sum::<f64>() / rs.len() as f64)
}

/// Most frequent category; ties go to the lower-adequacy one.
pub fn majority(votes: &[Adequacy]) -> Option<Adequacy> {
    let mut counts = [0usize; 4];
    for v in votes {
        counts[v.index()] += 1;
    }
    // ALL runs from high to low adequacy, so a tie goes to the later category
    Adequacy::ALL
        .into_iter()
        .filter(|a| counts[a.index()] > 0)
        .fold(None, |best: Option<Adequacy>, a| match best {
            Some(b) if counts[b.index()] > counts[a.index()] => Some(b),
            _ => Some(a),
        })
}

/// Mean mapped value of each sample's majority category.
pub fn majority_adequacy_score(rs: &RatingSet) -> Result<f64> {
    non_empty(rs)?;
    let by = rs.by_sample();
    let sum: f64 = by.values().filter_map(|v| majority(v)).map(Adequacy::value).sum();
    Ok(sum / by.len() as f64)
}

/// Percentage of samples whose majority vote falls in each category.
pub fn adequacy_distribution(rs: &RatingSet) -> Result<BTreeMap<Adequacy, f64>> {
    non_empty(rs)?;
    let by = rs.by_sample();
    let mut out: BTreeMap<Adequacy, f64> = Adequacy::ALL.iter().map(|&a| (a, 0.0)).collect();
    for votes in by.values() {
        if let Some(m) = majority(votes) {
            *out.get_mut(&m).expect("all categories present") += 100.0 / by.len() as f64;
        }
    }
    Ok(out)
}

/// Fleiss' kappa from an items x categories count matrix.
pub fn fleiss_kappa_counts(counts: &[Vec<usize>]) -> Result<f64> {
    let Some(first) = counts.first() else {
        return Err(MuseError::Degenerate("no rated items".into()));
    };
    let n: usize = first.iter().sum();
    if let Some((i, row)) = counts.iter().enumerate().find(|(_, r)| r.iter().sum::<usize>() != n) {
        return Err(MuseError::Data(format!(
            "item {i} has {} ratings, item 0 has {n}; every item needs the same number of raters",
            row.iter().sum::<usize>()
        )));
    }
    if n < 2 {
        return Err(MuseError::Data(format!("need at least 2 raters per item, found {n}")));
    }
    let items = counts.len() as f64;
    let nf = n as f64;
    let p_bar = counts
        .iter()
        .map(|row| (row.iter().map(|&c| (c * c) as f64).sum::<f64>() - nf) / (nf * (nf - 1.0)))
        .sum::<f64>()
        / items;
    let k = first.len();
    let p_e: f64 = (0..k)
        .map(|j| {
            let p = counts.iter().map(|r| r[j] as f64).sum::<f64>() / (items * nf);
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(MuseError::Degenerate(
            "all ratings fall in one category; kappa is undefined".into(),
        ));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Fleiss' kappa over adequacy categories.
pub fn fleiss_kappa(rs: &RatingSet) -> Result<f64> {
    let counts: Vec<Vec<usize>> = rs
        .by_sample()
        .values()
        .map(|votes| {
            let mut row = vec![0usize; 4];
            for v in votes {
                row[v.index()] += 1;
            }
            row
        })
        .collect();
    fleiss_kappa_counts(&counts)
}

/// Landis-Koch label, applied to kappa rounded to two decimals.
pub fn kappa_band(kappa: f64) -> &'static str {
    let k = (kappa * 100.0).round() / 100.0;
    if k < 0.0 {
        "poor"
    } else if k <= 0.20 {
        "slight"
    } else if k <= 0.40 {
        "fair"
    } else if k <= 0.60 {
        "moderate"
    } else if k <= 0.80 {
        "substantial"
    } else {
        "almost perfect"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub samples: usize,
    pub ratings: usize,
    pub adequacy: f64,
    pub majority_adequacy: f64,
    pub fluency: f64,
    /// Percent of samples per majority category.
    pub distribution: BTreeMap<Adequacy, f64>,
    pub kappa: Option<f64>,
    pub kappa_band: Option<String>,
    pub kappa_error: Option<String>,
}

impl AgreementReport {
    pub fn compute(rs: &RatingSet) -> Result<Self> {
        let (kappa, kappa_error) = match fleiss_kappa(rs) {
            Ok(k) => (Some(k), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(AgreementReport {
            samples: rs.by_sample().len(),
            ratings: rs.len(),
            adequacy: adequacy_score(rs)?,
            majority_adequacy: majority_adequacy_score(rs)?,
            fluency: fluency_score(rs)?,
            distribution: adequacy_distribution(rs)?,
            kappa,
            kappa_band: kappa.map(|k| kappa_band(k).to_string()),
            kappa_error,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "samples            {}\nratings            {}\nadequacy           {:.4}\nmajority adequacy  {:.4}\nfluency            {:.4}\n",
            self.samples, self.ratings, self.adequacy, self.majority_adequacy, self.fluency
        );
        for (a, p) in &self.distribution {
            out.push_str(&format!("  {:<16} {p:>6.2}%\n", a.as_str()));
        }
        match (self.kappa, &self.kappa_band, &self.kappa_error) {
            (Some(k), Some(b), _) => out.push_str(&format!("fleiss kappa       {k:.4} ({b})\n")),
            (_, _, Some(e)) => out.push_str(&format!("fleiss kappa       undefined: {e}\n")),
            _ => {}
        }
        out
    }
}
