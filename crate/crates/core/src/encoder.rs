//! Cross-modal Transformer encoder.
//!
//! Text supplies the queries, the other modality (image regions, or OCR text
//! in the tri-modal variant) supplies keys and values:
//!
//! ```text
//! z   = concat_m softmax(x_T W_Q^m (x_I W_K^m)^T / sqrt(d_k)) x_I W_V^m  · W_O
//! h1  = LayerNorm(x_T + z)
//! h2  = LayerNorm(h1 + FFN(h1))
//! C_T = [x_T ; h2]                       (2r x d_T, stacked along the sequence)
//! ```
//!
//! Key/value projections map `d_I -> d_k` directly; the image side carries no
//! positional information, so `z` is invariant to region order.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AttnMask, Graph, Var};
use crate::backends::{ImageFeatures, TextFeatures};
use crate::error::{MuseError, Result};
use crate::layers;
use crate::params::ParamStore;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossModalConfig {
    /// `d_T`, width of the query stream and of the output.
    pub text_width: usize,
    /// Width of the key/value stream (`d_I` for images).
    pub kv_width: usize,
    /// `M`.
    pub heads: usize,
    /// Number of stacked blocks; the reference architecture uses one.
    pub depth: usize,
}

impl CrossModalConfig {
    pub fn head_width(&self) -> usize {
        self.text_width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.text_width.is_multiple_of(self.heads) {
            return Err(MuseError::Config(format!(
                "d_T = {} is not divisible by M = {}",
                self.text_width, self.heads
            )));
        }
        if self.depth == 0 {
            return Err(MuseError::Config("encoder depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Final encoder representation: `2r x d_T` plus its padding mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderState {
    pub c_t: Matrix,
    pub mask: Vec<bool>,
}

impl EncoderState {
    pub fn new(c_t: Matrix, mask: Vec<bool>) -> Result<Self> {
        if c_t.rows() != mask.len() {
            return Err(MuseError::Shape(format!(
                "{} encoder rows but {} mask entries",
                c_t.rows(),
                mask.len()
            )));
        }
        Ok(EncoderState { c_t, mask })
    }
}

pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &CrossModalConfig) {
    let (dt, dk) = (cfg.text_width, cfg.head_width());
    for l in 0..cfg.depth {
        let p = format!("{prefix}.l{l}");
        for m in 0..cfg.heads {
            store.init_uniform(rng, &format!("{p}.head{m}.wq"), dt, dk, dt);
            store.init_uniform(rng, &format!("{p}.head{m}.wk"), cfg.kv_width, dk, cfg.kv_width);
            store.init_uniform(rng, &format!("{p}.head{m}.wv"), cfg.kv_width, dk, cfg.kv_width);
        }
        store.init_uniform(rng, &format!("{p}.wo"), cfg.heads * dk, dt, cfg.heads * dk);
        layers::init_layer_norm(store, &format!("{p}.ln1"), dt);
        layers::init_feed_forward(store, rng, &p, dt, 4 * dt);
        layers::init_layer_norm(store, &format!("{p}.ln2"), dt);
    }
}

/// Intermediate nodes of one cross-modal attention, kept for inspection.
pub struct AttentionTrace {
    /// Output `z`, `r x d_T`, padded query rows zeroed.
    pub z: Var,
    /// Per-head attention weights, `r x q`.
    pub weights: Vec<Var>,
    /// Concatenated head outputs before `W_O`, `r x (M d_k)`.
    pub pre_projection: Var,
}

/// Key/value side of the attention.
#[derive(Clone, Copy)]
pub struct KeyValues<'a> {
    pub features: Var,
    /// `None` when every row is a valid key (image regions).
    pub mask: Option<&'a [bool]>,
}

fn check_inputs(g: &Graph, text: Var, text_mask: &[bool], kv: KeyValues, cfg: &CrossModalConfig) -> Result<()> {
    cfg.validate()?;
    let (r, dt) = g.shape(text);
    let (q, dkv) = g.shape(kv.features);
    if dt != cfg.text_width {
        return Err(MuseError::Shape(format!(
            "text width {dt}, expected {}",
            cfg.text_width
        )));
    }
    if dkv != cfg.kv_width {
        return Err(MuseError::Shape(format!(
            "key/value width {dkv}, expected {}",
            cfg.kv_width
        )));
    }
    if text_mask.len() != r {
        return Err(MuseError::Shape(format!(
            "{} text mask entries for {r} rows",
            text_mask.len()
        )));
    }
    if q == 0 {
        return Err(MuseError::Shape("no keys: the key/value stream has zero rows".into()));
    }
    if let Some(m) = kv.mask {
        if m.len() != q {
            return Err(MuseError::Shape(format!("{} key mask entries for {q} rows", m.len())));
        }
        if !m.iter().any(|&k| k) {
            return Err(MuseError::Degenerate("every key is masked".into()));
        }
    }
    Ok(())
}

pub fn attention_graph(
    g: &mut Graph,
    prefix: &str,
    text: Var,
    text_mask: &[bool],
    kv: KeyValues,
    cfg: &CrossModalConfig,
) -> Result<AttentionTrace> {
    check_inputs(g, text, text_mask, kv, cfg)?;
    let scale = 1.0 / (cfg.head_width() as f64).sqrt();
    let mask = kv.mask.map_or_else(AttnMask::default, AttnMask::keys);
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for m in 0..cfg.heads {
        let wq = g.param(&format!("{prefix}.head{m}.wq"))?;
        let wk = g.param(&format!("{prefix}.head{m}.wk"))?;
        let wv = g.param(&format!("{prefix}.head{m}.wv"))?;
        let q = g.matmul(text, wq);
        let k = g.matmul(kv.features, wk);
        let v = g.matmul(kv.features, wv);
        let scores = g.matmul_t(q, k);
        let scores = g.scale(scores, scale);
        let a = g.softmax(scores, &mask);
        heads.push(g.matmul(a, v));
        weights.push(a);
    }
    let pre_projection = g.concat_cols(&heads);
    let wo = g.param(&format!("{prefix}.wo"))?;
    let z = g.matmul(pre_projection, wo);
    let z = g.mask_rows(z, text_mask);
    Ok(AttentionTrace {
        z,
        weights,
        pre_projection,
    })
}

/// Stack of cross-modal blocks; returns the `r x d_T` block output (`h2`).
pub fn block_graph(
    g: &mut Graph,
    prefix: &str,
    text: Var,
    text_mask: &[bool],
    kv: KeyValues,
    cfg: &CrossModalConfig,
) -> Result<Var> {
    let mut x = text;
    for l in 0..cfg.depth {
        let p = format!("{prefix}.l{l}");
        let trace = attention_graph(g, &p, x, text_mask, kv, cfg)?;
        let h1 = g.add(x, trace.z);
        let h1 = layers::layer_norm(g, &format!("{p}.ln1"), h1)?;
        let f = layers::feed_forward(g, &p, h1)?;
        let h2 = g.add(h1, f);
        let h2 = layers::layer_norm(g, &format!("{p}.ln2"), h2)?;
        x = g.mask_rows(h2, text_mask);
    }
    Ok(x)
}

/// Full encoder: block output stacked under the text stream, mask duplicated.
pub fn forward_graph(
    g: &mut Graph,
    prefix: &str,
    text: Var,
    text_mask: &[bool],
    kv: KeyValues,
    cfg: &CrossModalConfig,
) -> Result<(Var, Vec<bool>)> {
    let h2 = block_graph(g, prefix, text, text_mask, kv, cfg)?;
    let c_t = g.concat_rows(text, h2);
    let mask = text_mask.iter().chain(text_mask).copied().collect();
    Ok((c_t, mask))
}

/// `z` for a caption/image pair, evaluated without keeping the tape.
pub fn cross_modal_attention(
    x_t: &TextFeatures,
    x_i: &ImageFeatures,
    params: &ParamStore,
    prefix: &str,
    cfg: &CrossModalConfig,
) -> Result<Matrix> {
    let mut g = Graph::with_params(params);
    let t = g.input(x_t.features.clone());
    let i = g.input(x_i.matrix().clone());
    let trace = attention_graph(
        &mut g,
        &format!("{prefix}.l0"),
        t,
        &x_t.mask,
        KeyValues {
            features: i,
            mask: None,
        },
        cfg,
    )?;
    Ok(g.value(trace.z).clone())
}

pub fn encoder_forward(
    x_t: &TextFeatures,
    x_i: &ImageFeatures,
    params: &ParamStore,
    prefix: &str,
    cfg: &CrossModalConfig,
) -> Result<EncoderState> {
    let mut g = Graph::with_params(params);
    let t = g.input(x_t.features.clone());
    let i = g.input(x_i.matrix().clone());
    let (c_t, mask) = forward_graph(
        &mut g,
        prefix,
        t,
        &x_t.mask,
        KeyValues {
            features: i,
            mask: None,
        },
        cfg,
    )?;
    EncoderState::new(g.value(c_t).clone(), mask)
}
