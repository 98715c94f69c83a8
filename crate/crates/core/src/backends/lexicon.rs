//! Part-of-speech tagging and synonym lookup.
//!
//! Lexicon formats (UTF-8, tab separated):
//! - POS lexicon: `word<TAB>TAG`
//! - synonyms: `TAG<TAB>word1<TAB>word2[<TAB>word3..]`, every listed word is
//!   a synonym of every other.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::tokenize;
use crate::error::{MuseError, Result};

const BUNDLED_POS: &str = include_str!("../../data/pos_lexicon.tsv");
const BUNDLED_SYNONYMS: &str = include_str!("../../data/synonyms.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Adv,
    Other,
}

impl PosTag {
    /// The four content tags reported by the overlap analysis.
    pub const CONTENT: [PosTag; 4] = [PosTag::Noun, PosTag::Verb, PosTag::Adj, PosTag::Adv];

    pub fn parse(s: &str) -> Option<PosTag> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NOUN" => Some(PosTag::Noun),
            "VERB" => Some(PosTag::Verb),
            "ADJ" => Some(PosTag::Adj),
            "ADV" => Some(PosTag::Adv),
            "OTHER" => Some(PosTag::Other),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PosTag::Noun => "NOUN",
            PosTag::Verb => "VERB",
            PosTag::Adj => "ADJ",
            PosTag::Adv => "ADV",
            PosTag::Other => "OTHER",
        }
    }
}

impl fmt::Display for PosTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub trait PosTagger: Send + Sync {
    fn tag(&self, text: &str) -> Vec<(String, PosTag)>;
}

/// Lexicon lookup with suffix fallbacks: `-ly` is an adverb, `-ing`/`-ed`
/// a verb, anything else alphabetic a noun.
#[derive(Clone, Debug, Default)]
pub struct LexiconTagger {
    lexicon: HashMap<String, PosTag>,
}

impl LexiconTagger {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_POS).expect("bundled POS lexicon is well-formed")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lexicon = HashMap::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut parts = line.split('\t');
            let (Some(word), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(MuseError::Data(format!(
                    "POS lexicon line {}: expected word<TAB>tag",
                    n + 1
                )));
            };
            let tag = PosTag::parse(tag)
                .ok_or_else(|| MuseError::Data(format!("POS lexicon line {}: unknown tag {tag:?}", n + 1)))?;
            lexicon.insert(word.trim().to_lowercase(), tag);
        }
        Ok(LexiconTagger { lexicon })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, word: &str, tag: PosTag) {
        self.lexicon.insert(word.to_lowercase(), tag);
    }

    pub fn tag_word(&self, word: &str) -> PosTag {
        if let Some(&t) = self.lexicon.get(word) {
            return t;
        }
        if !word.chars().any(char::is_alphabetic) {
            return PosTag::Other;
        }
        let len = word.chars().count();
        if len > 3 && word.ends_with("ly") {
            PosTag::Adv
        } else if (len > 4 && word.ends_with("ing")) || (len > 3 && word.ends_with("ed")) {
            PosTag::Verb
        } else {
            PosTag::Noun
        }
    }
}

impl PosTagger for LexiconTagger {
    fn tag(&self, text: &str) -> Vec<(String, PosTag)> {
        tokenize(text)
            .into_iter()
            .map(|w| {
                let t = self.tag_word(&w);
                (w, t)
            })
            .collect()
    }
}

pub trait SynonymSource: Send + Sync {
    /// Never contains `word` itself; unknown words give an empty set.
    fn synonyms(&self, word: &str, tag: PosTag) -> BTreeSet<String>;

    fn are_synonyms(&self, a: &str, b: &str, tag: PosTag) -> bool {
        self.synonyms(a, tag).contains(b)
    }
}

/// Flat synonym lexicon, closed under symmetry at load time.
#[derive(Clone, Debug, Default)]
pub struct SynonymLexicon {
    map: HashMap<(PosTag, String), BTreeSet<String>>,
}

impl SynonymLexicon {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_SYNONYMS).expect("bundled synonym lexicon is well-formed")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = SynonymLexicon::default();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut parts = line.split('\t');
            let tag = parts
                .next()
                .and_then(PosTag::parse)
                .ok_or_else(|| MuseError::Data(format!("synonym line {}: bad tag", n + 1)))?;
            let words: Vec<String> = parts
                .map(|w| w.trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect();
            if words.len() < 2 {
                return Err(MuseError::Data(format!(
                    "synonym line {}: need at least two words",
                    n + 1
                )));
            }
            lex.add_group(tag, &words);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn add_pair(&mut self, tag: PosTag, a: &str, b: &str) {
        self.add_group(tag, &[a.to_lowercase(), b.to_lowercase()]);
    }

    fn add_group(&mut self, tag: PosTag, words: &[String]) {
        for a in words {
            for b in words.iter().filter(|b| *b != a) {
                self.map.entry((tag, a.clone())).or_default().insert(b.clone());
            }
        }
    }

    /// All `(tag, word, synonym)` triples, for closure checks.
    pub fn entries(&self) -> impl Iterator<Item = (PosTag, &str, &str)> {
        self.map
            .iter()
            .flat_map(|((t, w), set)| set.iter().map(move |s| (*t, w.as_str(), s.as_str())))
    }
}

impl SynonymSource for SynonymLexicon {
    fn synonyms(&self, word: &str, tag: PosTag) -> BTreeSet<String> {
        self.map.get(&(tag, word.to_lowercase())).cloned().unwrap_or_default()
    }

    fn are_synonyms(&self, a: &str, b: &str, tag: PosTag) -> bool {
        self.map.get(&(tag, a.to_lowercase())).is_some_and(|s| s.contains(b))
    }
}
