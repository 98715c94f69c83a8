//! Multimodal sarcasm explanation: given an (image, caption) post, generate a
//! natural-language explanation of the irony.
//!
//! The crate holds the full pipeline: dataset ingestion, deterministic
//! backend stubs, a cross-modal encoder with an autoregressive decoder,
//! two-phase training, the generation metric suite, and the linguistic and
//! human-evaluation analyses.

pub mod analysis;
pub mod autograd;
pub mod backends;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod generator;
pub mod gradcheck;
pub mod ingest;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod par;
pub mod params;
pub mod tensor;
pub mod training;

pub use error::{MuseError, Result};
