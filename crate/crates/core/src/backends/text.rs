//! Contextual caption embeddings: a learned token table, fixed sinusoidal
//! positions and a stack of self-attention blocks. Stands in for a pretrained
//! text encoder behind the same shape and mask contract.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::data::TokenSeq;
use crate::error::{MuseError, Result};
use crate::layers;
use crate::params::ParamStore;
use crate::tensor::{sinusoidal_positions, Matrix};

pub const PREFIX: &str = "text_backend";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TextBackendConfig {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab_size: usize,
}

impl TextBackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(MuseError::Config(format!(
                "text width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

/// `r x d^T` contextual vectors plus the key-padding mask (`true` = real token).
#[derive(Clone, Debug, PartialEq)]
pub struct TextFeatures {
    pub features: Matrix,
    pub mask: Vec<bool>,
}

pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &TextBackendConfig) {
    store.init_uniform(rng, &format!("{PREFIX}.embed"), cfg.vocab_size, cfg.width, cfg.width);
    for l in 0..cfg.layers {
        layers::init_self_attention_block(store, rng, &format!("{PREFIX}.layer{l}"), cfg.width);
    }
}

/// Records the text backend on `g`; returns the feature node and the mask.
pub fn embed_graph(g: &mut Graph, seq: &TokenSeq, cfg: &TextBackendConfig) -> Result<(Var, Vec<bool>)> {
    cfg.validate()?;
    let ids: Vec<usize> = seq.ids.iter().map(|&i| i as usize).collect();
    if let Some(bad) = ids.iter().find(|&&i| i >= cfg.vocab_size) {
        return Err(MuseError::Data(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    let mask = seq.mask();
    let table = g.param(&format!("{PREFIX}.embed"))?;
    let tokens = g.gather(table, &ids);
    let pos = g.constant(sinusoidal_positions(ids.len(), cfg.width));
    let mut x = g.add(tokens, pos);
    x = g.mask_rows(x, &mask);
    for l in 0..cfg.layers {
        x = layers::self_attention_block(g, &format!("{PREFIX}.layer{l}"), x, &mask, cfg.heads)?;
    }
    Ok((x, mask))
}

pub fn embed_text(seq: &TokenSeq, params: &ParamStore, cfg: &TextBackendConfig) -> Result<TextFeatures> {
    let mut g = Graph::with_params(params);
    let (x, mask) = embed_graph(&mut g, seq, cfg)?;
    Ok(TextFeatures {
        features: g.value(x).clone(),
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode, Vocabulary, PAD};
    use rand::SeedableRng;

    fn setup(width: usize, heads: usize) -> (ParamStore, TextBackendConfig, Vocabulary) {
        let vocab = Vocabulary::from_corpus(["the cat sat on the mat"], 1);
        let cfg = TextBackendConfig {
            width,
            heads,
            layers: 1,
            vocab_size: vocab.len(),
        };
        let mut store = ParamStore::new();
        init(&mut store, &mut ChaCha8Rng::seed_from_u64(3), &cfg);
        (store, cfg, vocab)
    }

    #[test]
    fn shape_and_padding() {
        let (store, cfg, vocab) = setup(32, 4);
        let seq = encode("the cat", &vocab, 16).unwrap();
        let tf = embed_text(&seq, &store, &cfg).unwrap();
        assert_eq!(tf.features.shape(), (16, 32));
        assert_eq!(tf.mask.iter().filter(|&&m| m).count(), 4);
        for r in 4..16 {
            assert!(tf.features.row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn all_pad_input_is_zero_and_fully_masked() {
        let (store, cfg, _) = setup(16, 4);
        let seq = TokenSeq {
            ids: vec![PAD; 8],
            length_unpadded: 0,
        };
        let tf = embed_text(&seq, &store, &cfg).unwrap();
        assert!(tf.features.data().iter().all(|&v| v == 0.0));
        assert!(tf.mask.iter().all(|&m| !m));
    }

    #[test]
    fn indivisible_width_is_a_config_error() {
        let (store, mut cfg, vocab) = setup(16, 4);
        cfg.heads = 3;
        let seq = encode("the", &vocab, 4).unwrap();
        assert!(matches!(embed_text(&seq, &store, &cfg), Err(MuseError::Config(_))));
    }
}
