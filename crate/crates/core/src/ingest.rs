//! Loading, splitting and summarizing datasets stored as JSONL.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use crate::data::{tokenize, ImageRef, Sample, Split};
use crate::error::{MuseError, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SPLIT_SEED: u64 = 13;
pub const DEFAULT_RATIOS: SplitRatios = SplitRatios {
    train: 0.85,
    val: 0.05,
    test: 0.10,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub schema_version: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(MuseError::Data(format!("duplicate id {:?}", s.id)));
            }
        }
        Ok(Dataset {
            samples,
            provenance: Provenance {
                path: PathBuf::new(),
                schema_version: SCHEMA_VERSION,
            },
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<Sample> {
        self.samples.iter().filter(|s| s.split == split).cloned().collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.samples.iter().filter(|s| s.split == split).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for s in &self.samples {
            serde_json::to_writer(&mut out, &Record::from(s))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

fn de_label<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<bool>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Bool(bool),
        Int(i64),
        Text(String),
    }
    match Option::<Raw>::deserialize(d)? {
        None => Ok(None),
        Some(Raw::Bool(b)) => Ok(Some(b)),
        Some(Raw::Int(1)) => Ok(Some(true)),
        Some(Raw::Int(0)) => Ok(Some(false)),
        Some(Raw::Text(t)) => match t.to_lowercase().as_str() {
            "sarcastic" => Ok(Some(true)),
            "non-sarcastic" | "non_sarcastic" | "not-sarcastic" => Ok(Some(false)),
            other => Err(serde::de::Error::custom(format!("unknown label {other:?}"))),
        },
        Some(Raw::Int(n)) => Err(serde::de::Error::custom(format!("unknown label {n}"))),
    }
}

/// One line of the JSONL file.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Record {
    id: String,
    #[serde(default)]
    image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    image_features: Option<Vec<Vec<f64>>>,
    caption: String,
    #[serde(default)]
    explanation: Option<String>,
    #[serde(default)]
    ocr_text: Option<String>,
    #[serde(default)]
    split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_ocr_sample: Option<bool>,
    #[serde(default, deserialize_with = "de_label", skip_serializing_if = "Option::is_none")]
    label: Option<bool>,
}

impl From<&Sample> for Record {
    fn from(s: &Sample) -> Self {
        let (image, image_features) = match &s.image {
            ImageRef::Path(p) => (Some(p.clone()), None),
            ImageRef::Inline(f) => (None, Some(f.clone())),
            ImageRef::Missing => (None, None),
        };
        Record {
            id: s.id.clone(),
            image,
            image_features,
            caption: s.caption.clone(),
            explanation: Some(s.explanation.clone()),
            ocr_text: s.ocr_text.clone(),
            split: (s.split != Split::Unassigned).then_some(s.split),
            is_ocr_sample: Some(s.is_ocr_sample),
            label: s.label,
        }
    }
}

impl Record {
    fn into_sample(self) -> Sample {
        let image = match (self.image_features, self.image) {
            (Some(f), _) => ImageRef::Inline(f),
            (None, Some(p)) if !p.is_empty() => ImageRef::Path(p),
            _ => ImageRef::Missing,
        };
        let has_ocr = self.ocr_text.as_deref().is_some_and(|t| !t.trim().is_empty());
        Sample {
            id: self.id,
            image,
            caption: self.caption,
            explanation: self.explanation.unwrap_or_default(),
            ocr_text: self.ocr_text,
            is_ocr_sample: self.is_ocr_sample.unwrap_or(has_ocr),
            split: self.split.unwrap_or_default(),
            label: self.label,
        }
    }
}

/// Loads and validates every record against the sample invariants.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path, true)
}

/// Parses records and checks ids without enforcing the sample invariants, so
/// that curation problems such as empty captions can be reported.
pub fn scan_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(path, false)
}

fn read_dataset(path: &Path, strict: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let record_err = |line: usize, message: String| MuseError::Record {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| record_err(line_no, e.to_string()))?;
        let sample = rec.into_sample();
        if strict {
            sample.validate().map_err(|e| record_err(line_no, e.to_string()))?;
        }
        if !seen.insert(sample.id.clone()) {
            return Err(record_err(line_no, format!("duplicate id {:?}", sample.id)));
        }
        samples.push(sample);
    }
    Ok(Dataset {
        samples,
        provenance: Provenance {
            path: path.to_path_buf(),
            schema_version: SCHEMA_VERSION,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        DEFAULT_RATIOS
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(MuseError::Config(format!("split ratios must be positive, got {all:?}")));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(MuseError::Config(format!("split ratios must sum to 1, got {all:?}")));
        }
        Ok(())
    }
}

/// `(train, val, test)` counts for `n` samples. Val and test get
/// `round(ratio * n)`, at least one each; train takes the rest.
pub fn split_counts(n: usize, ratios: &SplitRatios) -> Result<(usize, usize, usize)> {
    ratios.validate()?;
    if n < 3 {
        return Err(MuseError::Data(format!(
            "cannot populate three splits from {n} samples"
        )));
    }
    let mut val = ((ratios.val * n as f64).round() as usize).max(1);
    let mut test = ((ratios.test * n as f64).round() as usize).max(1);
    while val + test >= n {
        if val >= test {
            val -= 1;
        } else {
            test -= 1;
        }
    }
    Ok((n - val - test, val, test))
}

/// Assigns splits with a seeded shuffle. Samples that already carry a split
/// keep it unless `resplit` is set; only the unassigned remainder is shuffled.
pub fn split_dataset(ds: &Dataset, ratios: &SplitRatios, seed: u64, resplit: bool) -> Result<Dataset> {
    ratios.validate()?;
    let mut out = ds.clone();
    let todo: Vec<usize> = (0..out.samples.len())
        .filter(|&i| resplit || out.samples[i].split == Split::Unassigned)
        .collect();
    if todo.is_empty() {
        return Ok(out);
    }
    let (train, val, _) = split_counts(todo.len(), ratios)?;
    let mut order = todo;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for (k, &i) in order.iter().enumerate() {
        out.samples[i].split = if k < train {
            Split::Train
        } else if k < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: usize,
    pub avg_caption_len: f64,
    pub caption_vocab: usize,
    pub avg_explanation_len: f64,
    pub explanation_vocab: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub train: SplitStats,
    pub val: SplitStats,
    pub test: SplitStats,
    pub total: SplitStats,
    pub ocr_samples: usize,
    pub non_ocr_samples: usize,
}

fn split_stats<'a>(samples: impl Iterator<Item = &'a Sample>) -> SplitStats {
    let (mut count, mut cap_len, mut exp_len) = (0usize, 0usize, 0usize);
    let mut cap_vocab = HashSet::new();
    let mut exp_vocab = HashSet::new();
    for s in samples {
        count += 1;
        let cap = tokenize(&s.caption);
        let exp = tokenize(&s.explanation);
        cap_len += cap.len();
        exp_len += exp.len();
        cap_vocab.extend(cap);
        exp_vocab.extend(exp);
    }
    let avg = |total: usize| if count == 0 { 0.0 } else { total as f64 / count as f64 };
    SplitStats {
        count,
        avg_caption_len: avg(cap_len),
        caption_vocab: cap_vocab.len(),
        avg_explanation_len: avg(exp_len),
        explanation_vocab: exp_vocab.len(),
    }
}

/// Per-split counts, average token lengths (specials excluded) and type counts.
pub fn compute_stats(ds: &Dataset) -> StatsTable {
    let of = |split: Split| split_stats(ds.samples.iter().filter(move |s| s.split == split));
    let ocr_samples = ds.samples.iter().filter(|s| s.is_ocr_sample).count();
    StatsTable {
        train: of(Split::Train),
        val: of(Split::Val),
        test: of(Split::Test),
        total: split_stats(ds.samples.iter()),
        ocr_samples,
        non_ocr_samples: ds.len() - ocr_samples,
    }
}

impl StatsTable {
    pub fn rows(&self) -> [(&'static str, &SplitStats); 4] {
        [
            ("Train", &self.train),
            ("Val", &self.val),
            ("Test", &self.test),
            ("Total", &self.total),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<6} {:>7} {:>12} {:>11} {:>12} {:>11}\n",
            "Split", "#Posts", "Avg.caption", "Caption V", "Avg.expl", "Expl V"
        );
        for (name, s) in self.rows() {
            let _ = writeln!(
                out,
                "{:<6} {:>7} {:>12.2} {:>11} {:>12.2} {:>11}",
                name, s.count, s.avg_caption_len, s.caption_vocab, s.avg_explanation_len, s.explanation_vocab
            );
        }
        let _ = writeln!(
            out,
            "OCR samples: {}, non-OCR samples: {}",
            self.ocr_samples, self.non_ocr_samples
        );
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExclusionReport {
    /// Ids per rule name.
    pub flagged: BTreeMap<String, Vec<String>>,
}

pub const RULE_EXPLICIT_MARKER: &str = "explicit_sarcasm_marker";
pub const RULE_EMPTY_CAPTION: &str = "empty_caption";
const MARKERS: [&str; 2] = ["sarcasm", "sarcastic"];

impl ExclusionReport {
    pub fn ids(&self, rule: &str) -> &[String] {
        self.flagged.get(rule).map_or(&[], Vec::as_slice)
    }

    pub fn is_clean(&self) -> bool {
        self.flagged.values().all(Vec::is_empty)
    }
}

fn hashtags(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split('#').skip(1).map(|rest| {
        rest.chars()
            .take_while(|c| c.is_alphanumeric() || *c == '_')
            .flat_map(char::to_lowercase)
            .collect()
    })
}

/// Flags, without removing, samples that break the curation rules.
pub fn validate_exclusions(ds: &Dataset) -> ExclusionReport {
    let mut report = ExclusionReport::default();
    for rule in [RULE_EXPLICIT_MARKER, RULE_EMPTY_CAPTION] {
        report.flagged.insert(rule.to_string(), Vec::new());
    }
    for s in &ds.samples {
        if hashtags(&s.caption).any(|h| MARKERS.contains(&h.as_str())) {
            report.flagged.get_mut(RULE_EXPLICIT_MARKER).unwrap().push(s.id.clone());
        }
        if s.caption.trim().is_empty() {
            report.flagged.get_mut(RULE_EMPTY_CAPTION).unwrap().push(s.id.clone());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn empty_file_loads_as_empty_dataset() {
        let f = write(&[]);
        assert!(load_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_caption_names_field_and_line() {
        let f = write(&[
            r#"{"id":"a","caption":"hi","explanation":"x"}"#,
            r#"{"id":"b","explanation":"x"}"#,
        ]);
        let err = load_dataset(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, MuseError::Record { line: 2, .. }));
        assert!(msg.contains("caption"), "{msg}");
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let f = write(&[
            r#"{"id":"a","caption":"hi","explanation":"x"}"#,
            r#"{"id":"a","caption":"yo","explanation":"y"}"#,
        ]);
        assert!(matches!(load_dataset(f.path()), Err(MuseError::Record { line: 2, .. })));
    }

    #[test]
    fn ocr_flag_and_fields_are_derived() {
        let f = write(&[
            r#"{"id":"a","image":"x.jpg","caption":"hi","explanation":"e","ocr_text":"sale","split":"train"}"#,
            r#"{"id":"b","image":null,"image_features":[[1.0,2.0]],"caption":"hi","explanation":"e","ocr_text":null,"split":null}"#,
            r#"{"id":"c","caption":"hi","label":"non-sarcastic"}"#,
        ]);
        let ds = load_dataset(f.path()).unwrap();
        assert!(ds.samples[0].is_ocr_sample);
        assert_eq!(ds.samples[0].image, ImageRef::Path("x.jpg".into()));
        assert_eq!(ds.samples[0].split, Split::Train);
        assert!(!ds.samples[1].is_ocr_sample);
        assert_eq!(ds.samples[1].image, ImageRef::Inline(vec![vec![1.0, 2.0]]));
        assert_eq!(ds.samples[2].label, Some(false));
    }

    #[test]
    fn save_then_load_round_trips() {
        let f = write(&[
            r#"{"id":"a","image":"x.jpg","caption":"hi there","explanation":"e","ocr_text":"sale","split":"test"}"#,
            r#"{"id":"b","caption":"yo","explanation":"f","label":"sarcastic"}"#,
        ]);
        let ds = load_dataset(f.path()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        ds.save(out.path()).unwrap();
        assert_eq!(load_dataset(out.path()).unwrap().samples, ds.samples);
    }

    fn synthetic(n: usize) -> Dataset {
        Dataset::new(
            (0..n)
                .map(|i| Sample::new(format!("s{i}"), format!("caption {i}"), "why"))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn twenty_samples_split_ten_five_five() {
        let ratios = SplitRatios {
            train: 0.5,
            val: 0.25,
            test: 0.25,
        };
        for seed in [0, 1, 13, 99] {
            let ds = split_dataset(&synthetic(20), &ratios, seed, false).unwrap();
            assert_eq!(
                (ds.count(Split::Train), ds.count(Split::Val), ds.count(Split::Test)),
                (10, 5, 5)
            );
        }
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        let ds = synthetic(50);
        let a = split_dataset(&ds, &DEFAULT_RATIOS, 13, false).unwrap();
        let b = split_dataset(&ds, &DEFAULT_RATIOS, 13, false).unwrap();
        let c = split_dataset(&ds, &DEFAULT_RATIOS, 14, false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn preassigned_splits_are_kept_unless_resplit() {
        let mut ds = synthetic(10);
        for (i, s) in ds.samples.iter_mut().enumerate() {
            s.split = Split::ASSIGNED[i % 3];
        }
        assert_eq!(split_dataset(&ds, &DEFAULT_RATIOS, 1, false).unwrap(), ds);
        let re = split_dataset(&ds, &DEFAULT_RATIOS, 1, true).unwrap();
        assert_eq!(re.count(Split::Val), 1);
    }

    #[test]
    fn tiny_datasets_cannot_be_split() {
        assert!(split_dataset(&synthetic(2), &DEFAULT_RATIOS, 0, false).is_err());
        let ds = split_dataset(&synthetic(3), &DEFAULT_RATIOS, 0, false).unwrap();
        assert_eq!(ds.count(Split::Train), 1);
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let r = SplitRatios {
            train: 0.8,
            val: 0.1,
            test: 0.2,
        };
        assert!(matches!(
            split_dataset(&synthetic(10), &r, 0, false),
            Err(MuseError::Config(_))
        ));
    }

    #[test]
    fn stats_count_tokens_without_specials() {
        let ds = Dataset::new(vec![Sample::new("a", "a b", "x y z").with_split(Split::Train)]).unwrap();
        let st = compute_stats(&ds);
        assert_eq!(st.train.avg_caption_len, 2.0);
        assert_eq!(st.train.avg_explanation_len, 3.0);
        assert_eq!(st.train.caption_vocab, 2);
        assert_eq!(st.val, SplitStats::default());
        assert!(st.to_text().contains("Train"));
    }

    #[test]
    fn exclusion_rules() {
        let ds = Dataset::new(vec![
            Sample::new("a", "#Sarcasm #sarcastic", "x"),
            Sample::new("b", "great weather", "x"),
            Sample::new("c", "Sarcasm aside, nice", "x"),
            Sample::new("d", "love it #SARCASTIC!", "x"),
        ])
        .unwrap();
        let r = validate_exclusions(&ds);
        assert_eq!(r.ids(RULE_EXPLICIT_MARKER), ["a", "d"]);
        assert!(r.ids(RULE_EMPTY_CAPTION).is_empty());
    }

    #[test]
    fn empty_captions_are_rejected_on_load_but_reported_by_scan() {
        let f = write(&[
            r#"{"id":"a","caption":"  ","explanation":"x"}"#,
            r#"{"id":"b","caption":"ok","explanation":"x"}"#,
        ]);
        assert!(matches!(load_dataset(f.path()), Err(MuseError::Record { line: 1, .. })));
        let r = validate_exclusions(&scan_dataset(f.path()).unwrap());
        assert_eq!(r.ids(RULE_EMPTY_CAPTION), ["a"]);
        assert!(!r.is_clean());
    }
}
