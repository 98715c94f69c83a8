//! Transformer building blocks shared by the text backend and the decoder.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{AttnMask, Graph, Var};
use crate::error::Result;
use crate::params::ParamStore;

pub const LN_EPS: f64 = 1e-5;

/// Fully connected layer `x W + b`, parameters `{p}.w` and `{p}.b`.
pub fn linear(g: &mut Graph, p: &str, x: Var) -> Result<Var> {
    let w = g.param(&format!("{p}.w"))?;
    let b = g.param(&format!("{p}.b"))?;
    let y = g.matmul(x, w);
    Ok(g.add_row(y, b))
}

pub fn init_linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, p: &str, fan_in: usize, fan_out: usize) {
    store.init_uniform(rng, &format!("{p}.w"), fan_in, fan_out, fan_in);
    store.init_uniform(rng, &format!("{p}.b"), 1, fan_out, fan_in);
}

pub fn layer_norm(g: &mut Graph, p: &str, x: Var) -> Result<Var> {
    let gain = g.param(&format!("{p}.gain"))?;
    let bias = g.param(&format!("{p}.bias"))?;
    Ok(g.layer_norm(x, gain, bias, LN_EPS))
}

pub fn init_layer_norm(store: &mut ParamStore, p: &str, width: usize) {
    store.init_const(&format!("{p}.gain"), 1, width, 1.0);
    store.init_const(&format!("{p}.bias"), 1, width, 0.0);
}

/// Position-wise `width -> 4*width -> width` with GELU.
pub fn feed_forward(g: &mut Graph, p: &str, x: Var) -> Result<Var> {
    let h = linear(g, &format!("{p}.ff1"), x)?;
    let h = g.gelu(h);
    linear(g, &format!("{p}.ff2"), h)
}

pub fn init_feed_forward(store: &mut ParamStore, rng: &mut ChaCha8Rng, p: &str, width: usize, inner: usize) {
    init_linear(store, rng, &format!("{p}.ff1"), width, inner);
    init_linear(store, rng, &format!("{p}.ff2"), inner, width);
}

/// Multi-head scaled dot-product attention with fused projections
/// `{p}.q`, `{p}.k`, `{p}.v`, `{p}.o`.
pub fn attention(g: &mut Graph, p: &str, queries: Var, keys: Var, mask: &AttnMask, heads: usize) -> Result<Var> {
    let q = linear(g, &format!("{p}.q"), queries)?;
    let k = linear(g, &format!("{p}.k"), keys)?;
    let v = linear(g, &format!("{p}.v"), keys)?;
    let width = g.shape(q).1;
    let dk = width / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let qh = g.slice_cols(q, lo, hi);
        let kh = g.slice_cols(k, lo, hi);
        let vh = g.slice_cols(v, lo, hi);
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let weights = g.softmax(scores, mask);
        outs.push(g.matmul(weights, vh));
    }
    let cat = g.concat_cols(&outs);
    linear(g, &format!("{p}.o"), cat)
}

pub fn init_attention(store: &mut ParamStore, rng: &mut ChaCha8Rng, p: &str, width: usize, kv_width: usize) {
    init_linear(store, rng, &format!("{p}.q"), width, width);
    init_linear(store, rng, &format!("{p}.k"), kv_width, width);
    init_linear(store, rng, &format!("{p}.v"), kv_width, width);
    init_linear(store, rng, &format!("{p}.o"), width, width);
}

/// Post-norm self-attention block over a padded sequence; padded rows come out zero.
pub fn self_attention_block(g: &mut Graph, p: &str, x: Var, keep: &[bool], heads: usize) -> Result<Var> {
    let a = attention(g, &format!("{p}.attn"), x, x, &AttnMask::keys(keep), heads)?;
    let h = g.add(x, a);
    let h = layer_norm(g, &format!("{p}.ln1"), h)?;
    let f = feed_forward(g, p, h)?;
    let h2 = g.add(h, f);
    let h2 = layer_norm(g, &format!("{p}.ln2"), h2)?;
    Ok(g.mask_rows(h2, keep))
}

pub fn init_self_attention_block(store: &mut ParamStore, rng: &mut ChaCha8Rng, p: &str, width: usize) {
    init_attention(store, rng, &format!("{p}.attn"), width, width);
    init_layer_norm(store, &format!("{p}.ln1"), width);
    init_feed_forward(store, rng, p, width, 4 * width);
    init_layer_norm(store, &format!("{p}.ln2"), width);
}
