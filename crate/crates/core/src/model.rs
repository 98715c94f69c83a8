//! The explanation model: text backend + cross-modal encoder (optionally two,
//! fused by the gate) + autoregressive decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::backends::text::{self, TextBackendConfig};
use crate::backends::{ImageConfig, ImageFeatureExtractor};
use crate::data::{encode, Sample, TokenSeq, Vocabulary};
use crate::encoder::{self, CrossModalConfig, EncoderState, KeyValues};
use crate::error::{MuseError, Result};
use crate::fusion;
use crate::generator::{self, DecoderConfig, GenerationConfig};
use crate::layers;
use crate::params::ParamStore;
use crate::tensor::Matrix;

pub const IMAGE_ENCODER: &str = "encoder.img";
pub const OCR_ENCODER: &str = "encoder.ocr";
pub const IMAGE_PROJECTION: &str = "image_backend.proj";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Caption x image; `C_T` is `2r x d_T`.
    #[default]
    Base,
    /// Caption x image and caption x OCR text fused by a scalar gate; `C_T` is `r x d_T`.
    Ocr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// `d_T`.
    pub text_width: usize,
    /// `M`.
    pub heads: usize,
    pub text_layers: usize,
    pub encoder_depth: usize,
    pub decoder_layers: usize,
    /// `r`: captions are padded/truncated to this many tokens.
    pub max_token_length: usize,
    pub image: ImageConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Base,
            text_width: 64,
            heads: 4,
            text_layers: 1,
            encoder_depth: 1,
            decoder_layers: 2,
            max_token_length: crate::data::DEFAULT_MAX_TOKENS,
            image: ImageConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.text_width.is_multiple_of(self.heads) {
            return Err(MuseError::Config(format!(
                "text_width {} must be divisible by heads {}",
                self.text_width, self.heads
            )));
        }
        if self.max_token_length < 2 {
            return Err(MuseError::Config("max_token_length must be at least 2".into()));
        }
        if self.image.regions == 0 || self.image.width == 0 {
            return Err(MuseError::Config("image regions and width must be positive".into()));
        }
        if self.encoder_depth == 0 {
            return Err(MuseError::Config("encoder_depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn text_backend(&self, vocab_size: usize) -> TextBackendConfig {
        TextBackendConfig {
            width: self.text_width,
            heads: self.heads,
            layers: self.text_layers,
            vocab_size,
        }
    }

    pub fn image_encoder(&self) -> CrossModalConfig {
        CrossModalConfig {
            text_width: self.text_width,
            kv_width: self.image.width,
            heads: self.heads,
            depth: self.encoder_depth,
        }
    }

    pub fn ocr_encoder(&self) -> CrossModalConfig {
        CrossModalConfig {
            kv_width: self.text_width,
            ..self.image_encoder()
        }
    }

    pub fn decoder(&self, vocab_size: usize) -> DecoderConfig {
        DecoderConfig {
            width: self.text_width,
            heads: self.heads,
            layers: self.decoder_layers,
            vocab_size,
            max_positions: self.max_token_length,
        }
    }
}

/// A sample turned into model inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: String,
    pub caption: TokenSeq,
    pub image: Matrix,
    pub ocr: Option<TokenSeq>,
    /// BOS, explanation tokens, EOS.
    pub target: Vec<u32>,
    pub label: Option<bool>,
    pub is_ocr_sample: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab_size: usize,
}

impl Model {
    pub fn new(config: ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        Ok(Model { config, vocab_size })
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &self.config;
        // frozen stand-in for the top of the convolutional backbone, identity at init
        store.insert(format!("{IMAGE_PROJECTION}.w"), Matrix::identity(c.image.width));
        store.insert(format!("{IMAGE_PROJECTION}.b"), Matrix::zeros(1, c.image.width));
        text::init(&mut store, &mut rng, &c.text_backend(self.vocab_size));
        encoder::init(&mut store, &mut rng, IMAGE_ENCODER, &c.image_encoder());
        if c.variant == Variant::Ocr {
            encoder::init(&mut store, &mut rng, OCR_ENCODER, &c.ocr_encoder());
            fusion::init(&mut store, &mut rng, c.text_width, c.text_width);
        }
        generator::init(&mut store, &mut rng, &c.decoder(self.vocab_size));
        store
    }

    /// Checks that `params` has exactly the tensors this model expects, with matching shapes.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let expected = self.init_params(0);
        for (name, m) in expected.iter() {
            match params.get(name) {
                Some(p) if p.shape() == m.shape() => {}
                Some(p) => {
                    return Err(MuseError::Checkpoint(format!(
                        "parameter {name} has shape {:?}, model expects {:?}",
                        p.shape(),
                        m.shape()
                    )))
                }
                None => return Err(MuseError::Checkpoint(format!("missing parameter {name}"))),
            }
        }
        if let Some(extra) = params.names().find(|n| expected.get(n).is_none()) {
            return Err(MuseError::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn prepare(&self, sample: &Sample, vocab: &Vocabulary, images: &dyn ImageFeatureExtractor) -> Result<Prepared> {
        let r = self.config.max_token_length;
        let caption = encode(&sample.caption, vocab, r)?;
        let image = images.extract(&sample.image)?.into_matrix();
        if image.cols() != self.config.image.width {
            return Err(MuseError::Shape(format!(
                "image features are {} wide, model expects {}",
                image.cols(),
                self.config.image.width
            )));
        }
        let ocr = match (self.config.variant, sample.ocr()) {
            (Variant::Ocr, Some(text)) => Some(encode(text, vocab, r)?),
            _ => None,
        };
        let target = encode(&sample.explanation, vocab, r)?.unpadded().to_vec();
        Ok(Prepared {
            id: sample.id.clone(),
            caption,
            image,
            ocr,
            target,
            label: sample.label,
            is_ocr_sample: sample.is_ocr_sample,
        })
    }

    /// Records the encoder on `g`; returns `C_T` and its mask.
    pub fn encode_graph(&self, g: &mut Graph, x: &Prepared) -> Result<(Var, Vec<bool>)> {
        let c = &self.config;
        let (text, text_mask) = text::embed_graph(g, &x.caption, &c.text_backend(self.vocab_size))?;
        let raw = g.constant(x.image.clone());
        let image = layers::linear(g, IMAGE_PROJECTION, raw)?;
        let image_kv = KeyValues {
            features: image,
            mask: None,
        };
        match c.variant {
            Variant::Base => encoder::forward_graph(g, IMAGE_ENCODER, text, &text_mask, image_kv, &c.image_encoder()),
            Variant::Ocr => {
                let z_img = encoder::block_graph(g, IMAGE_ENCODER, text, &text_mask, image_kv, &c.image_encoder())?;
                let z_ocr = match &x.ocr {
                    Some(seq) => {
                        let (ocr, ocr_mask) = text::embed_graph(g, seq, &c.text_backend(self.vocab_size))?;
                        let kv = KeyValues {
                            features: ocr,
                            mask: Some(&ocr_mask),
                        };
                        Some(encoder::block_graph(
                            g,
                            OCR_ENCODER,
                            text,
                            &text_mask,
                            kv,
                            &c.ocr_encoder(),
                        )?)
                    }
                    None => None,
                };
                let (fused, _) = fusion::gate_graph(g, z_img, z_ocr, &text_mask)?;
                Ok((fused, text_mask))
            }
        }
    }

    pub fn encode(&self, x: &Prepared, params: &ParamStore) -> Result<EncoderState> {
        let mut g = Graph::with_params(params);
        let (c_t, mask) = self.encode_graph(&mut g, x)?;
        EncoderState::new(g.value(c_t).clone(), mask)
    }

    /// Teacher-forced mean token cross-entropy of the reference explanation.
    pub fn lm_loss_graph(&self, g: &mut Graph, x: &Prepared) -> Result<Var> {
        if x.target.len() < 2 {
            return Err(MuseError::Data(format!("sample {}: target too short", x.id)));
        }
        let (c_t, mask) = self.encode_graph(g, x)?;
        let n = x.target.len() - 1;
        let logits = generator::logits_graph(g, &x.target[..n], c_t, &mask, &self.config.decoder(self.vocab_size))?;
        let targets: Vec<Option<usize>> = x.target[1..]
            .iter()
            .map(|&t| (t != crate::data::PAD).then_some(t as usize))
            .collect();
        g.cross_entropy(logits, &targets)
    }

    /// Binary cross-entropy of the sarcasm classifier against the sample label.
    pub fn cls_loss_graph(&self, g: &mut Graph, x: &Prepared) -> Result<Var> {
        let label = x
            .label
            .ok_or_else(|| MuseError::Data(format!("sample {} has no sarcasm label", x.id)))?;
        let (c_t, mask) = self.encode_graph(g, x)?;
        let logit = generator::classify_graph(g, c_t, &mask)?;
        Ok(g.bce_with_logits(logit, if label { 1.0 } else { 0.0 }))
    }

    pub fn classify(&self, x: &Prepared, params: &ParamStore) -> Result<f64> {
        generator::classify_sarcasm(&self.encode(x, params)?, params)
    }

    pub fn generate(&self, x: &Prepared, params: &ParamStore, cfg: &GenerationConfig) -> Result<Vec<u32>> {
        let enc = self.encode(x, params)?;
        Ok(generator::generate(&enc, params, &self.config.decoder(self.vocab_size), cfg)?.ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::HashedImageExtractor;

    fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            variant,
            text_width: 8,
            heads: 2,
            text_layers: 1,
            encoder_depth: 1,
            decoder_layers: 1,
            max_token_length: 8,
            image: ImageConfig {
                regions: 3,
                width: 6,
                require_files: false,
            },
        }
    }

    fn samples() -> (Vocabulary, Vec<Sample>) {
        let s = vec![
            Sample::new("1", "what a lovely day", "the day is rainy")
                .with_image(crate::data::ImageRef::Path("a.jpg".into())),
            Sample::new("2", "love traffic", "nobody loves traffic")
                .with_image(crate::data::ImageRef::Path("b.jpg".into()))
                .with_ocr("stuck again"),
        ];
        let texts: Vec<&str> = s
            .iter()
            .flat_map(|x| [x.caption.as_str(), x.explanation.as_str()])
            .chain(["stuck again"])
            .collect();
        (Vocabulary::from_corpus(texts, 1), s)
    }

    #[test]
    fn encoder_state_shapes_per_variant() {
        let (vocab, s) = samples();
        let ex = HashedImageExtractor::new(tiny(Variant::Base).image);
        for (variant, rows) in [(Variant::Base, 16), (Variant::Ocr, 8)] {
            let m = Model::new(tiny(variant), vocab.len()).unwrap();
            let p = m.init_params(1);
            m.check_params(&p).unwrap();
            for sample in &s {
                let x = m.prepare(sample, &vocab, &ex).unwrap();
                let st = m.encode(&x, &p).unwrap();
                assert_eq!(st.c_t.shape(), (rows, 8));
            }
        }
    }

    #[test]
    fn image_projection_starts_as_identity() {
        let (vocab, s) = samples();
        let m = Model::new(tiny(Variant::Base), vocab.len()).unwrap();
        let p = m.init_params(1);
        let ex = HashedImageExtractor::new(tiny(Variant::Base).image);
        let x = m.prepare(&s[0], &vocab, &ex).unwrap();
        let mut g = Graph::with_params(&p);
        let raw = g.input(x.image.clone());
        let proj = layers::linear(&mut g, IMAGE_PROJECTION, raw).unwrap();
        assert_eq!(g.value(proj), &x.image);
    }

    #[test]
    fn param_check_catches_mismatch() {
        let m = Model::new(tiny(Variant::Base), 20).unwrap();
        let other = Model::new(tiny(Variant::Ocr), 20).unwrap();
        assert!(m.check_params(&other.init_params(0)).is_err());
        let wider = Model::new(tiny(Variant::Base), 21).unwrap();
        assert!(m.check_params(&wider.init_params(0)).is_err());
    }

    #[test]
    fn classification_requires_labels() {
        let (vocab, s) = samples();
        let m = Model::new(tiny(Variant::Base), vocab.len()).unwrap();
        let p = m.init_params(1);
        let ex = HashedImageExtractor::new(tiny(Variant::Base).image);
        let x = m.prepare(&s[0], &vocab, &ex).unwrap();
        let mut g = Graph::with_params(&p);
        assert!(m.cls_loss_graph(&mut g, &x).is_err());
        let prob = m.classify(&x, &p).unwrap();
        assert!(prob > 0.0 && prob < 1.0);
    }
}
