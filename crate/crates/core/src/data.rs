//! Samples, vocabulary and the word-level token codec.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MuseError, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Default maximum sequence length, in tokens, including BOS/EOS.
pub const DEFAULT_MAX_TOKENS: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where the image for a post comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ImageRef {
    /// Path to an image file (may not exist locally; see the image backend).
    Path(String),
    /// Precomputed region features, one row per region.
    Inline(Vec<Vec<f64>>),
    Missing,
}

/// One sarcastic post with its reference explanation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub image: ImageRef,
    pub caption: String,
    pub explanation: String,
    pub ocr_text: Option<String>,
    pub is_ocr_sample: bool,
    pub split: Split,
    /// Sarcastic / non-sarcastic label, only present in pretraining data.
    pub label: Option<bool>,
}

impl Sample {
    /// Builds a sample and derives the OCR flag from `ocr_text`.
    pub fn new(id: impl Into<String>, caption: impl Into<String>, explanation: impl Into<String>) -> Self {
        Sample {
            id: id.into(),
            image: ImageRef::Missing,
            caption: caption.into(),
            explanation: explanation.into(),
            ocr_text: None,
            is_ocr_sample: false,
            split: Split::Unassigned,
            label: None,
        }
    }

    pub fn with_image(mut self, image: ImageRef) -> Self {
        self.image = image;
        self
    }

    pub fn with_ocr(mut self, ocr: impl Into<String>) -> Self {
        let ocr = ocr.into();
        self.is_ocr_sample = !ocr.trim().is_empty();
        self.ocr_text = Some(ocr);
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn with_label(mut self, sarcastic: bool) -> Self {
        self.label = Some(sarcastic);
        self
    }

    /// OCR text when the post actually carries some.
    pub fn ocr(&self) -> Option<&str> {
        self.ocr_text.as_deref().filter(|t| !t.trim().is_empty())
    }

    pub fn validate(&self) -> Result<()> {
        if self.caption.trim().is_empty() {
            return Err(MuseError::Data(format!("sample {}: empty caption", self.id)));
        }
        if self.split != Split::Unassigned && self.label.is_none() && self.explanation.trim().is_empty() {
            return Err(MuseError::Data(format!(
                "sample {}: empty explanation in split {}",
                self.id, self.split
            )));
        }
        if self.is_ocr_sample != self.ocr().is_some() {
            return Err(MuseError::Data(format!(
                "sample {}: is_ocr_sample={} disagrees with ocr_text",
                self.id, self.is_ocr_sample
            )));
        }
        Ok(())
    }
}

/// Lowercases and splits on whitespace; every non-alphanumeric character
/// becomes a token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars() {
            if c.is_alphanumeric() {
                word.extend(c.to_lowercase());
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.extend(std::iter::once(c.to_lowercase().collect::<String>()));
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

/// Canonical form of a text under [`tokenize`]: tokens joined by single spaces.
pub fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Pluggable tokenizer. The bundled word-level tokenizer is the default;
/// a subword tokenizer can be supplied by implementing this trait.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        tokenize(text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: HashMap<String, u32>,
    tokens: Vec<String>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new()).expect("specials are always valid")
    }
}

impl Vocabulary {
    /// Builds a vocabulary from training samples: captions, explanations and
    /// OCR text, ordered by descending frequency then lexicographically.
    pub fn build(train: &[Sample], min_freq: usize) -> Result<Self> {
        if let Some(s) = train.iter().find(|s| s.split != Split::Train) {
            return Err(MuseError::Data(format!(
                "vocabulary must be built from the train split only; sample {} is {}",
                s.id, s.split
            )));
        }
        let texts = train.iter().flat_map(|s| {
            [
                Some(s.caption.as_str()),
                Some(s.explanation.as_str()),
                s.ocr_text.as_deref(),
            ]
            .into_iter()
            .flatten()
        });
        Ok(Self::from_corpus(texts, min_freq))
    }

    pub fn from_corpus<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t)).expect("tokenizer output is never special")
    }

    /// Specials first, then the given tokens in order.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut vocab = Vocabulary {
            index: HashMap::new(),
            tokens: Vec::new(),
        };
        for tok in SPECIAL_TOKENS
            .iter()
            .map(|s| s.to_string())
            .chain(tokens.into_iter().map(Into::into))
        {
            if vocab.index.contains_key(&tok) {
                return Err(MuseError::Data(format!("duplicate vocabulary token {tok:?}")));
            }
            if tok.is_empty() || tok.contains(char::is_whitespace) {
                return Err(MuseError::Data(format!("invalid vocabulary token {tok:?}")));
            }
            vocab.index.insert(tok.clone(), vocab.tokens.len() as u32);
            vocab.tokens.push(tok);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIAL_TOKENS.len()..]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIAL_TOKENS.len() || lines[..SPECIAL_TOKENS.len()] != SPECIAL_TOKENS {
            return Err(MuseError::Data(
                "vocabulary file must start with the four special tokens".into(),
            ));
        }
        Self::from_tokens(lines[SPECIAL_TOKENS.len()..].iter().copied())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// Number of non-PAD positions, BOS and EOS included.
    pub length_unpadded: usize,
}

impl TokenSeq {
    pub fn unpadded(&self) -> &[u32] {
        &self.ids[..self.length_unpadded]
    }

    /// `true` for positions holding a real token.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.ids.len()).map(|i| i < self.length_unpadded).collect()
    }
}

/// BOS + ids + EOS, content truncated to fit, then padded to `max_len`.
pub fn encode(text: &str, vocab: &Vocabulary, max_len: usize) -> Result<TokenSeq> {
    if max_len < 2 {
        return Err(MuseError::Config(format!("max_len must be >= 2, got {max_len}")));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(
        tokenize(text)
            .iter()
            .take(max_len - 2)
            .map(|t| vocab.id(t).unwrap_or(UNK)),
    );
    ids.push(EOS);
    let length_unpadded = ids.len();
    ids.resize(max_len, PAD);
    Ok(TokenSeq { ids, length_unpadded })
}

/// Inverse of [`encode`]: strips specials and stops at the first EOS.
pub fn decode(ids: &[u32], vocab: &Vocabulary) -> Result<String> {
    let mut words = Vec::new();
    for &id in ids {
        let tok = vocab
            .token(id)
            .ok_or_else(|| MuseError::Data(format!("token id {id} out of range for vocabulary of {}", vocab.len())))?;
        match id {
            EOS => break,
            PAD | BOS => continue,
            _ => words.push(tok),
        }
    }
    Ok(words.join(" "))
}
