//! Pluggable stand-ins for the pretrained components: image features, text
//! embeddings, sentence/token embedders, POS tagging and synonyms. Every stub
//! is a pure deterministic function of its input and configuration, so the
//! whole pipeline runs without external assets.

pub mod embedding;
pub mod image;
pub mod lexicon;
pub mod text;

pub use embedding::{HashedEmbedder, SentenceEmbedder, SentenceVector, TokenEmbedder};
pub use image::{ExternalImageExtractor, HashedImageExtractor, ImageConfig, ImageFeatureExtractor, ImageFeatures};
pub use lexicon::{LexiconTagger, PosTag, PosTagger, SynonymLexicon, SynonymSource};
pub use text::{embed_text, TextBackendConfig, TextFeatures};
