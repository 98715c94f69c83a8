//! Two-phase optimization: sarcasm-classification pretraining, then
//! teacher-forced explanation fine-tuning.
//!
//! Per-sample losses and gradients are computed in parallel; gradients are
//! summed in sample order, so a run is reproducible regardless of how many
//! threads it used.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::backends::ImageFeatureExtractor;
use crate::checkpoint::{Checkpoint, CheckpointMeta, RngState};
use crate::data::{Sample, Split, Vocabulary};
use crate::error::{MuseError, Result};
use crate::ingest::Dataset;
use crate::model::{Model, Prepared};
use crate::optim::{clip_global_norm, AdamConfig, AdamState};
use crate::par::{self, Exec};
use crate::params::{Group, ParamStore};
use crate::tensor::Matrix;

const SHUFFLE_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    #[default]
    Finetune,
}

impl Phase {
    /// Groups that receive gradients in this phase (before user freezing).
    pub fn trainable(self) -> &'static [Group] {
        match self {
            Phase::Pretrain => &[Group::TextBackend, Group::Encoder, Group::Gate, Group::ClsHead],
            Phase::Finetune => &[
                Group::TextBackend,
                Group::Encoder,
                Group::Gate,
                Group::Decoder,
                Group::LmHead,
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_encoder: f64,
    pub lr_lm_head: f64,
    /// Learning rate for every group other than the encoder and the LM head.
    pub lr_other: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub freeze: Vec<Group>,
    /// Stop after this many epochs without improvement; `None` runs every epoch.
    pub patience: Option<usize>,
    pub exec: Exec,
}

pub const DEFAULT_PATIENCE: usize = 10;

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainConfig {
            phase: Phase::Finetune,
            epochs: 125,
            batch_size: 16,
            lr_encoder: 1e-5,
            lr_lm_head: 3e-4,
            lr_other: 1e-5,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            clip_norm: 1.0,
            seed: 13,
            freeze: vec![Group::ImageBackend],
            patience: None,
            exec: Exec::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_encoder", self.lr_encoder),
            ("lr_lm_head", self.lr_lm_head),
            ("lr_other", self.lr_other),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(MuseError::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.epochs == 0 {
            return Err(MuseError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(MuseError::Config("batch_size must be at least 1".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(MuseError::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || self.eps.is_nan()
            || self.eps <= 0.0
        {
            return Err(MuseError::Config("invalid AdamW betas or eps".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(MuseError::Config("weight_decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn learning_rate(&self, group: Option<Group>) -> f64 {
        match group {
            Some(Group::Encoder) => self.lr_encoder,
            Some(Group::LmHead) => self.lr_lm_head,
            _ => self.lr_other,
        }
    }

    /// Groups updated in this run: the phase's trainable groups minus `freeze`.
    pub fn updated_groups(&self) -> Vec<Group> {
        self.phase
            .trainable()
            .iter()
            .copied()
            .filter(|g| !self.freeze.contains(g))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Loss used for model selection: validation loss, or the training loss
    /// when there is no validation split.
    pub val_loss: f64,
    pub monitored_on_val: bool,
    /// Classification accuracy on the training set (pretraining only).
    pub train_accuracy: Option<f64>,
}

/// What the trainer needs besides the data.
#[derive(Clone, Copy)]
pub struct TrainSetup<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
    pub images: &'a dyn ImageFeatureExtractor,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest monitored loss.
    pub best: Checkpoint,
    /// State after the final epoch, suitable for resuming.
    pub last: Checkpoint,
}

impl TrainOutcome {
    pub fn history(&self) -> &[EpochRecord] {
        &self.last.meta.history
    }
}

pub fn pretrain(ds: &Dataset, setup: TrainSetup, cfg: &TrainConfig, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    if cfg.phase != Phase::Pretrain {
        return Err(MuseError::Config("pretrain needs phase = pretrain".into()));
    }
    if let Some(s) = ds
        .samples
        .iter()
        .find(|s| s.split != Split::Unassigned && s.label.is_none())
    {
        return Err(MuseError::Data(format!("sample {} has no sarcasm label", s.id)));
    }
    train(ds, setup, cfg, init, &mut |_| {})
}

pub fn finetune(ds: &Dataset, setup: TrainSetup, cfg: &TrainConfig, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    if cfg.phase != Phase::Finetune {
        return Err(MuseError::Config("finetune needs phase = finetune".into()));
    }
    train(ds, setup, cfg, init, &mut |_| {})
}

fn loss_graph(model: &Model, phase: Phase, g: &mut Graph, x: &Prepared) -> Result<crate::autograd::Var> {
    match phase {
        Phase::Pretrain => model.cls_loss_graph(g, x),
        Phase::Finetune => model.lm_loss_graph(g, x),
    }
}

/// Prefixes that enter the graph as constants for this run.
fn frozen_prefixes(cfg: &TrainConfig) -> Vec<&'static str> {
    let updated = cfg.updated_groups();
    Group::ALL
        .into_iter()
        .filter(|g| !updated.contains(g))
        .map(Group::prefix)
        .collect()
}

/// Loss and parameter gradients for one sample.
pub fn sample_gradients(
    model: &Model,
    params: &ParamStore,
    cfg: &TrainConfig,
    x: &Prepared,
) -> Result<(f64, BTreeMap<String, Matrix>)> {
    let mut g = Graph::with_params(params).freeze(frozen_prefixes(cfg));
    let loss = loss_graph(model, cfg.phase, &mut g, x)?;
    let value = g.value(loss).item();
    Ok((value, g.backward(loss).into_params()))
}

/// Mean loss and mean gradient over a batch; the reduction runs in sample order.
pub fn batch_gradients(
    model: &Model,
    params: &ParamStore,
    cfg: &TrainConfig,
    batch: &[&Prepared],
) -> Result<(f64, BTreeMap<String, Matrix>)> {
    let per_sample = par::map(cfg.exec, batch, |x| sample_gradients(model, params, cfg, x));
    let mut total = 0.0;
    let mut sum: BTreeMap<String, Matrix> = BTreeMap::new();
    for result in per_sample {
        let (loss, grads) = result?;
        total += loss;
        for (name, g) in grads {
            match sum.get_mut(&name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    sum.insert(name, g);
                }
            }
        }
    }
    let n = batch.len().max(1) as f64;
    sum.values_mut().for_each(|g| g.scale_assign(1.0 / n));
    Ok((total / n, sum))
}

/// Mean per-sample loss, no gradients.
pub fn mean_loss(model: &Model, params: &ParamStore, phase: Phase, exec: Exec, data: &[Prepared]) -> Result<f64> {
    if data.is_empty() {
        return Err(MuseError::Data("cannot evaluate a loss on zero samples".into()));
    }
    let losses = par::map(exec, data, |x| {
        let mut g = Graph::with_params(params).freeze(crate::params::Group::ALL.map(Group::prefix));
        let l = loss_graph(model, phase, &mut g, x)?;
        Ok::<_, MuseError>(g.value(l).item())
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}

/// Fraction of samples whose thresholded sarcasm probability matches the label.
pub fn classification_accuracy(model: &Model, params: &ParamStore, exec: Exec, data: &[Prepared]) -> Result<f64> {
    let hits = par::map(exec, data, |x| {
        let p = model.classify(x, params)?;
        Ok::<_, MuseError>(x.label == Some(p >= 0.5))
    });
    let mut n = 0usize;
    for h in hits {
        n += usize::from(h?);
    }
    Ok(n as f64 / data.len().max(1) as f64)
}

pub fn prepare_all(setup: TrainSetup, samples: &[Sample], exec: Exec) -> Result<Vec<Prepared>> {
    par::map(exec, samples, |s| setup.model.prepare(s, setup.vocab, setup.images))
        .into_iter()
        .collect()
}

fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SHUFFLE_STREAM);
    rng
}

fn rng_state(rng: &ChaCha8Rng, seed: u64) -> RngState {
    RngState {
        seed,
        stream: rng.get_stream(),
        word_pos: rng.get_word_pos().to_string(),
    }
}

fn restore_rng(state: &RngState) -> Result<ChaCha8Rng> {
    let pos: u128 = state
        .word_pos
        .parse()
        .map_err(|_| MuseError::Checkpoint(format!("bad RNG position {:?}", state.word_pos)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed);
    rng.set_stream(state.stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

struct RunState {
    params: ParamStore,
    optimizer: AdamState,
    rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochRecord>,
    best: Option<(f64, usize, ParamStore)>,
}

fn start_state(setup: TrainSetup, cfg: &TrainConfig, init: Option<&Checkpoint>) -> Result<RunState> {
    let fresh = |params: ParamStore| RunState {
        params,
        optimizer: AdamState::default(),
        rng: shuffle_rng(cfg.seed),
        epoch: 0,
        history: Vec::new(),
        best: None,
    };
    let Some(ck) = init else {
        return Ok(fresh(setup.model.init_params(cfg.seed)));
    };
    if ck.meta.vocab.as_slice() != setup.vocab.tokens() {
        return Err(MuseError::Checkpoint(format!(
            "vocabulary mismatch: checkpoint has {} tokens, dataset vocabulary has {}",
            ck.meta.vocab.len(),
            setup.vocab.len()
        )));
    }
    setup.model.check_params(&ck.params)?;
    match (ck.meta.phase, cfg.phase) {
        (a, b) if a == b => {
            if ck.meta.model != setup.model.config {
                return Err(MuseError::Checkpoint(
                    "model configuration differs from the checkpoint".into(),
                ));
            }
            let best = match (&ck.best_params, ck.meta.best_val_loss, ck.meta.best_epoch) {
                (Some(p), Some(l), Some(e)) => Some((l, e, p.clone())),
                _ => None,
            };
            Ok(RunState {
                params: ck.params.clone(),
                optimizer: ck.optimizer.clone(),
                rng: restore_rng(&ck.meta.rng)?,
                epoch: ck.meta.epoch,
                history: ck.meta.history.clone(),
                best,
            })
        }
        (Phase::Pretrain, Phase::Finetune) => Ok(fresh(ck.params.clone())),
        (Phase::Finetune, Phase::Pretrain) => Err(MuseError::Checkpoint(
            "cannot pretrain from a fine-tuned checkpoint".into(),
        )),
        _ => unreachable!("phases are either equal or differ"),
    }
}

fn snapshot(setup: TrainSetup, cfg: &TrainConfig, st: &RunState, seed: u64) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            model: setup.model.config.clone(),
            train: cfg.clone(),
            vocab: setup.vocab.tokens().to_vec(),
            phase: cfg.phase,
            epoch: st.epoch,
            best_val_loss: st.best.as_ref().map(|b| b.0),
            best_epoch: st.best.as_ref().map(|b| b.1),
            rng: rng_state(&st.rng, seed),
            adam_step: st.optimizer.step,
            history: st.history.clone(),
        },
        params: st.params.clone(),
        best_params: st.best.as_ref().map(|b| b.2.clone()),
        optimizer: st.optimizer.clone(),
    }
}

/// Runs (or resumes) training up to `cfg.epochs` completed epochs.
/// `on_epoch` sees every finished epoch.
pub fn train(
    ds: &Dataset,
    setup: TrainSetup,
    cfg: &TrainConfig,
    init: Option<&Checkpoint>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = prepare_all(setup, &ds.split(Split::Train), cfg.exec)?;
    let val_set = prepare_all(setup, &ds.split(Split::Val), cfg.exec)?;
    if train_set.is_empty() {
        return Err(MuseError::Data("the train split is empty".into()));
    }
    let mut st = start_state(setup, cfg, init)?;
    let seed = init
        .filter(|c| c.meta.phase == cfg.phase)
        .map_or(cfg.seed, |c| c.meta.rng.seed);
    let updated = cfg.updated_groups();
    let adam = cfg.adam();
    while st.epoch < cfg.epochs {
        if let (Some(p), Some((_, best_epoch, _))) = (cfg.patience, &st.best) {
            if st.epoch - best_epoch > p {
                break;
            }
        }
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut st.rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) = batch_gradients(setup.model, &st.params, cfg, &batch)?;
            total += loss * batch.len() as f64;
            grads.retain(|name, _| Group::of(name).is_some_and(|g| updated.contains(&g)));
            clip_global_norm(&mut grads, cfg.clip_norm);
            st.optimizer
                .step(&adam, &mut st.params, &grads, |name| cfg.learning_rate(Group::of(name)));
        }
        let train_loss = total / train_set.len() as f64;
        let (val_loss, monitored_on_val) = if val_set.is_empty() {
            (train_loss, false)
        } else {
            (mean_loss(setup.model, &st.params, cfg.phase, cfg.exec, &val_set)?, true)
        };
        let train_accuracy = match cfg.phase {
            Phase::Pretrain => Some(classification_accuracy(setup.model, &st.params, cfg.exec, &train_set)?),
            Phase::Finetune => None,
        };
        if !val_loss.is_finite() {
            return Err(MuseError::Degenerate(format!(
                "loss diverged at epoch {}",
                st.epoch + 1
            )));
        }
        if st.best.as_ref().is_none_or(|b| val_loss < b.0) {
            st.best = Some((val_loss, st.epoch, st.params.clone()));
        }
        let record = EpochRecord {
            epoch: st.epoch,
            train_loss,
            val_loss,
            monitored_on_val,
            train_accuracy,
        };
        on_epoch(&record);
        st.history.push(record);
        st.epoch += 1;
    }
    let last = snapshot(setup, cfg, &st, seed);
    let mut best = last.clone();
    if let Some(p) = best.best_params.take() {
        best.params = p;
    }
    Ok(TrainOutcome { best, last })
}
