//! Named parameter storage with group addressing.
//!
//! A parameter's group is the first dot-separated segment of its name, e.g.
//! `encoder.img.head0.wq` belongs to `encoder`.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    ImageBackend,
    TextBackend,
    Encoder,
    Gate,
    Decoder,
    LmHead,
    ClsHead,
}

impl Group {
    pub const ALL: [Group; 7] = [
        Group::ImageBackend,
        Group::TextBackend,
        Group::Encoder,
        Group::Gate,
        Group::Decoder,
        Group::LmHead,
        Group::ClsHead,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            Group::ImageBackend => "image_backend",
            Group::TextBackend => "text_backend",
            Group::Encoder => "encoder",
            Group::Gate => "gate",
            Group::Decoder => "decoder",
            Group::LmHead => "lm_head",
            Group::ClsHead => "cls_head",
        }
    }

    pub fn of(name: &str) -> Option<Group> {
        let head = name.split('.').next()?;
        Group::ALL.into_iter().find(|g| g.prefix() == head)
    }

    pub fn parse(s: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.prefix() == s)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(|m| m.data().len()).sum()
    }

    pub fn in_group(&self, group: Group) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter().filter(move |(n, _)| Group::of(n) == Some(group))
    }

    /// SHA-256 over the names and little-endian values of one group.
    pub fn group_hash(&self, group: Group) -> String {
        let mut h = Sha256::new();
        for (name, m) in self.in_group(group) {
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            h.update(m.to_le_bytes());
        }
        hex(&h.finalize())
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a `fan_in x fan_out` weight.
    pub fn init_uniform(&mut self, rng: &mut ChaCha8Rng, name: &str, rows: usize, cols: usize, fan_in: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.insert(name, Matrix::from_vec(rows, cols, data).expect("sized"));
    }

    pub fn init_const(&mut self, name: &str, rows: usize, cols: usize, value: f64) {
        self.insert(name, Matrix::filled(rows, cols, value));
    }

    /// Zeroes every parameter whose name starts with `prefix`.
    pub fn zero_prefix(&mut self, prefix: &str) {
        for (_, m) in self.tensors.iter_mut().filter(|(n, _)| n.starts_with(prefix)) {
            m.data_mut().fill(0.0);
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
