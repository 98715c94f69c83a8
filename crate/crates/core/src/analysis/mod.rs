//! Post-hoc analyses of generated explanations: part-of-speech overlap with
//! the references and aggregation of human ratings.

pub mod human;
pub mod pos;

pub use human::{
    adequacy_distribution, adequacy_score, fleiss_kappa, fleiss_kappa_counts, fluency_score, kappa_band, load_ratings,
    majority_adequacy_score, Adequacy, AgreementReport, Rating, RatingSet,
};
pub use pos::{pos_overlap_table, PosCell, PosSlice, PosTable};
