//! AdamW with decoupled weight decay and global-norm clipping.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, keyed like the parameters they track.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamStore,
    pub v: ParamStore,
}

impl AdamState {
    /// Applies one update to every parameter that has a gradient.
    /// `lr` maps a parameter name to its learning rate.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        params: &mut ParamStore,
        grads: &BTreeMap<String, Matrix>,
        lr: impl Fn(&str) -> f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else { continue };
            let (rows, cols) = g.shape();
            if self.m.get(name).is_none() {
                self.m.insert(name.clone(), Matrix::zeros(rows, cols));
                self.v.insert(name.clone(), Matrix::zeros(rows, cols));
            }
            let m = self.m.get_mut(name).expect("inserted above");
            let v = self.v.get_mut(name).expect("inserted above");
            let rate = lr(name);
            let decay = 1.0 - rate * cfg.weight_decay;
            let iter = p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut());
            for (((w, mi), vi), &gi) in iter.zip(g.data()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + cfg.eps);
                *w = *w * decay - rate * update;
            }
        }
    }
}

pub fn global_norm(grads: &BTreeMap<String, Matrix>) -> f64 {
    grads.values().map(Matrix::sq_norm).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Matrix>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.values_mut().for_each(|g| g.scale_assign(s));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Matrix {
        Matrix::scalar(v)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = ParamStore::new();
        p.insert("encoder.w", one(1.0));
        let grads = BTreeMap::from([("encoder.w".to_string(), one(0.3))]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut st = AdamState::default();
        st.step(&cfg, &mut p, &grads, |_| 0.1);
        // bias-corrected m/sqrt(v) is sign(g) on the first step
        assert!((p.get("encoder.w").unwrap().item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut p = ParamStore::new();
        p.insert("a", one(2.0));
        let grads = BTreeMap::from([("a".to_string(), one(0.0))]);
        let mut st = AdamState::default();
        st.step(&AdamConfig::default(), &mut p, &grads, |_| 0.5);
        assert!((p.get("a").unwrap().item() - 2.0 * (1.0 - 0.5 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn untouched_parameters_do_not_move() {
        let mut p = ParamStore::new();
        p.insert("a", one(2.0));
        p.insert("b", one(3.0));
        let grads = BTreeMap::from([("a".to_string(), one(1.0))]);
        AdamState::default().step(&AdamConfig::default(), &mut p, &grads, |_| 0.1);
        assert_eq!(p.get("b").unwrap().item(), 3.0);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut g = BTreeMap::from([
            ("a".to_string(), Matrix::from_rows(&[vec![3.0]]).unwrap()),
            ("b".to_string(), Matrix::from_rows(&[vec![4.0]]).unwrap()),
        ]);
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
        let before = g.clone();
        clip_global_norm(&mut g, 10.0);
        assert_eq!(g, before);
    }
}
