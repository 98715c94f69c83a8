//! Autoregressive explanation decoder, LM and classification heads, and
//! decoding strategies.

use std::cmp::Ordering;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{AttnMask, Graph, Var};
use crate::data::{TokenSeq, BOS, EOS, PAD};
use crate::encoder::EncoderState;
use crate::error::{MuseError, Result};
use crate::layers;
use crate::params::ParamStore;
use crate::tensor::{sinusoidal_positions, Matrix};

pub const PREFIX: &str = "decoder";
pub const LM_HEAD: &str = "lm_head";
pub const CLS_HEAD: &str = "cls_head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab_size: usize,
    /// Longest prefix the decoder accepts, BOS included.
    pub max_positions: usize,
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(MuseError::Config(format!(
                "decoder width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }
}

pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &DecoderConfig) {
    let d = cfg.width;
    store.init_uniform(rng, &format!("{PREFIX}.embed"), cfg.vocab_size, d, d);
    for l in 0..cfg.layers {
        let p = format!("{PREFIX}.layer{l}");
        layers::init_attention(store, rng, &format!("{p}.self"), d, d);
        layers::init_layer_norm(store, &format!("{p}.ln1"), d);
        layers::init_attention(store, rng, &format!("{p}.cross"), d, d);
        layers::init_layer_norm(store, &format!("{p}.ln2"), d);
        layers::init_feed_forward(store, rng, &p, d, 4 * d);
        layers::init_layer_norm(store, &format!("{p}.ln3"), d);
    }
    layers::init_linear(store, rng, LM_HEAD, d, cfg.vocab_size);
    layers::init_linear(store, rng, CLS_HEAD, d, 1);
}

fn check_prefix(prefix: &[u32], cfg: &DecoderConfig) -> Result<()> {
    cfg.validate()?;
    if prefix.first() != Some(&BOS) {
        return Err(MuseError::Data("decoder prefix must start with BOS".into()));
    }
    if prefix.len() > cfg.max_positions {
        return Err(MuseError::Data(format!(
            "decoder prefix of {} tokens exceeds the maximum of {}",
            prefix.len(),
            cfg.max_positions
        )));
    }
    if let Some(bad) = prefix.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(MuseError::Data(format!(
            "token id {bad} outside vocabulary of {}",
            cfg.vocab_size
        )));
    }
    Ok(())
}

/// Hidden states for every prefix position, `n x d`. Position `i` only sees
/// positions `0..=i` of the prefix and every unmasked encoder row.
pub fn hidden_graph(g: &mut Graph, prefix: &[u32], enc: Var, enc_mask: &[bool], cfg: &DecoderConfig) -> Result<Var> {
    check_prefix(prefix, cfg)?;
    if g.shape(enc).0 != enc_mask.len() {
        return Err(MuseError::Shape("encoder state and mask lengths differ".into()));
    }
    if !enc_mask.iter().any(|&m| m) {
        return Err(MuseError::Degenerate("encoder state is fully masked".into()));
    }
    let ids: Vec<usize> = prefix.iter().map(|&t| t as usize).collect();
    let table = g.param(&format!("{PREFIX}.embed"))?;
    let tok = g.gather(table, &ids);
    let pos = g.constant(sinusoidal_positions(ids.len(), cfg.width));
    let mut x = g.add(tok, pos);
    let cross_mask = AttnMask::keys(enc_mask);
    for l in 0..cfg.layers {
        let p = format!("{PREFIX}.layer{l}");
        let a = layers::attention(g, &format!("{p}.self"), x, x, &AttnMask::causal(), cfg.heads)?;
        let h = g.add(x, a);
        let h = layers::layer_norm(g, &format!("{p}.ln1"), h)?;
        let c = layers::attention(g, &format!("{p}.cross"), h, enc, &cross_mask, cfg.heads)?;
        let h2 = g.add(h, c);
        let h2 = layers::layer_norm(g, &format!("{p}.ln2"), h2)?;
        let f = layers::feed_forward(g, &p, h2)?;
        let h3 = g.add(h2, f);
        x = layers::layer_norm(g, &format!("{p}.ln3"), h3)?;
    }
    Ok(x)
}

/// Next-token logits for every prefix position, `n x |vocab|`.
pub fn logits_graph(g: &mut Graph, prefix: &[u32], enc: Var, enc_mask: &[bool], cfg: &DecoderConfig) -> Result<Var> {
    let h = hidden_graph(g, prefix, enc, enc_mask, cfg)?;
    layers::linear(g, LM_HEAD, h)
}

/// Logit of P(sarcastic): masked mean of the encoder rows through a linear head.
pub fn classify_graph(g: &mut Graph, enc: Var, enc_mask: &[bool]) -> Result<Var> {
    let pooled = g.mean_rows(enc, enc_mask)?;
    layers::linear(g, CLS_HEAD, pooled)
}

/// Logits for the token following `prefix`.
pub fn decode_step(prefix: &[u32], enc: &EncoderState, params: &ParamStore, cfg: &DecoderConfig) -> Result<Vec<f64>> {
    let mut g = Graph::with_params(params);
    let e = g.input(enc.c_t.clone());
    let logits = logits_graph(&mut g, prefix, e, &enc.mask, cfg)?;
    let m = g.value(logits);
    Ok(m.row(m.rows() - 1).to_vec())
}

pub fn classify_sarcasm(enc: &EncoderState, params: &ParamStore) -> Result<f64> {
    let mut g = Graph::with_params(params);
    let e = g.input(enc.c_t.clone());
    let logit = classify_graph(&mut g, e, &enc.mask)?;
    let p = g.sigmoid(logit);
    Ok(g.value(p).item())
}

/// Mean token cross-entropy of `logits[i]` predicting `targets[i]`; PAD targets are ignored.
pub fn lm_loss(logits: &Matrix, targets: &[u32]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.input(logits.clone());
    let t: Vec<Option<usize>> = targets.iter().map(|&t| (t != PAD).then_some(t as usize)).collect();
    let loss = g.cross_entropy(l, &t)?;
    Ok(g.value(loss).item())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Greedy,
    Beam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub strategy: Strategy,
    pub beam_width: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_decode_len: usize,
    /// Beam hypotheses are ranked by `log_prob / len^length_penalty`.
    pub length_penalty: f64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            strategy: Strategy::Greedy,
            beam_width: 4,
            max_decode_len: 64,
            length_penalty: 1.0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self, max_token_length: usize) -> Result<()> {
        if self.beam_width == 0 {
            return Err(MuseError::Config("beam_width must be at least 1".into()));
        }
        if self.max_decode_len == 0 || self.max_decode_len > max_token_length {
            return Err(MuseError::Config(format!(
                "max_decode_len must be in 1..={max_token_length}, got {}",
                self.max_decode_len
            )));
        }
        Ok(())
    }
}

/// Anything that scores the next token given a prefix (BOS first).
pub trait StepModel {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>>;
}

/// The trained decoder over a fixed encoder state.
pub struct DecoderStep<'a> {
    pub enc: &'a EncoderState,
    pub params: &'a ParamStore,
    pub cfg: &'a DecoderConfig,
}

impl StepModel for DecoderStep<'_> {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(log_softmax(&decode_step(prefix, self.enc, self.params, self.cfg)?))
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// PAD and BOS are never emitted.
fn emittable(token: usize) -> bool {
    token != PAD as usize && token != BOS as usize
}

fn argmax(lp: &[f64]) -> u32 {
    let mut best: Option<(usize, f64)> = None;
    for (t, &v) in lp.iter().enumerate().filter(|(t, _)| emittable(*t)) {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((t, v));
        }
    }
    best.map_or(EOS, |(t, _)| t as u32)
}

/// Generated tokens with BOS and EOS stripped.
pub fn generate_with(model: &dyn StepModel, cfg: &GenerationConfig) -> Result<Vec<u32>> {
    match cfg.strategy {
        Strategy::Greedy => greedy(model, cfg.max_decode_len),
        Strategy::Beam => beam(model, cfg),
    }
}

fn greedy(model: &dyn StepModel, max_len: usize) -> Result<Vec<u32>> {
    let mut prefix = vec![BOS];
    for _ in 0..max_len {
        let next = argmax(&model.log_probs(&prefix)?);
        if next == EOS {
            break;
        }
        prefix.push(next);
    }
    prefix.remove(0);
    Ok(prefix)
}

#[derive(Clone, Debug)]
struct Hypothesis {
    tokens: Vec<u32>,
    log_prob: f64,
}

impl Hypothesis {
    fn score(&self, penalty: f64) -> f64 {
        self.log_prob / (self.tokens.len().max(1) as f64).powf(penalty)
    }
}

/// Higher score first; equal scores fall back to the lexicographically smaller sequence.
fn rank(a: f64, b: f64, ta: &[u32], tb: &[u32]) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal).then_with(|| ta.cmp(tb))
}

fn beam(model: &dyn StepModel, cfg: &GenerationConfig) -> Result<Vec<u32>> {
    let width = cfg.beam_width;
    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..cfg.max_decode_len {
        let mut candidates = Vec::new();
        for hyp in &alive {
            let prefix: Vec<u32> = std::iter::once(BOS).chain(hyp.tokens.iter().copied()).collect();
            let lp = model.log_probs(&prefix)?;
            for (t, &v) in lp.iter().enumerate().filter(|(t, _)| emittable(*t)) {
                let mut tokens = hyp.tokens.clone();
                tokens.push(t as u32);
                candidates.push(Hypothesis {
                    tokens,
                    log_prob: hyp.log_prob + v,
                });
            }
        }
        candidates.sort_by(|a, b| rank(a.log_prob, b.log_prob, &a.tokens, &b.tokens));
        alive.clear();
        for c in candidates.into_iter().take(width) {
            if c.tokens.last() == Some(&EOS) {
                finished.push(c);
            } else {
                alive.push(c);
            }
        }
        if alive.is_empty() || finished.len() >= width {
            break;
        }
    }
    finished.extend(alive);
    let best = finished
        .into_iter()
        .min_by(|a, b| {
            rank(
                a.score(cfg.length_penalty),
                b.score(cfg.length_penalty),
                &a.tokens,
                &b.tokens,
            )
        })
        .map(|h| h.tokens)
        .unwrap_or_default();
    Ok(best.into_iter().filter(|&t| t != EOS).collect())
}

pub fn generate(
    enc: &EncoderState,
    params: &ParamStore,
    dcfg: &DecoderConfig,
    gcfg: &GenerationConfig,
) -> Result<TokenSeq> {
    gcfg.validate(dcfg.max_positions)?;
    let ids = generate_with(&DecoderStep { enc, params, cfg: dcfg }, gcfg)?;
    Ok(TokenSeq {
        length_unpadded: ids.len(),
        ids,
    })
}
