//! Binary checkpoint container.
//!
//! ```text
//! "MUSECKPT" | u32 schema | u32 len | metadata JSON | u32 count | count x array
//! array = u32 name_len | name | u8 dtype | u32 ndim | ndim x u64 dim | payload
//! ```
//!
//! All integers and payload values are little-endian; the only dtype is
//! `f64` (tag 1), stored row-major.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocabulary;
use crate::error::{MuseError, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Matrix;
use crate::training::{EpochRecord, Phase, TrainConfig};

pub const MAGIC: &[u8; 8] = b"MUSECKPT";
pub const SCHEMA_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

const PARAM: &str = "param.";
const BEST: &str = "best.";
const OPT_M: &str = "opt.m.";
const OPT_V: &str = "opt.v.";

/// Position of the shuffling generator: its seed and stream offset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// ChaCha word position, as a decimal string (u128 does not fit JSON numbers).
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub vocab: Vec<String>,
    pub phase: Phase,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub rng: RngState,
    pub adam_step: u64,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamStore,
    /// Snapshot at the best epoch so far; kept so a resumed run can still return it.
    pub best_params: Option<ParamStore>,
    pub optimizer: AdamState,
}

impl Checkpoint {
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let words = self
            .meta
            .vocab
            .get(crate::data::SPECIAL_TOKENS.len()..)
            .unwrap_or_default();
        let vocab = Vocabulary::from_tokens(words.iter().cloned())?;
        if vocab.tokens() != self.meta.vocab.as_slice() {
            return Err(MuseError::Checkpoint(
                "stored vocabulary does not start with the special tokens".into(),
            ));
        }
        Ok(vocab)
    }

    pub fn model(&self) -> Result<Model> {
        let model = Model::new(self.meta.model.clone(), self.meta.vocab.len())?;
        model.check_params(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            f.write_all(&self.to_bytes()?)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&len_u32(json.len())?.to_le_bytes());
        out.extend_from_slice(&json);
        let stores = [
            (PARAM, Some(&self.params)),
            (BEST, self.best_params.as_ref()),
            (OPT_M, Some(&self.optimizer.m)),
            (OPT_V, Some(&self.optimizer.v)),
        ];
        let arrays: Vec<(String, &Matrix)> = stores
            .into_iter()
            .filter_map(|(prefix, store)| store.map(|s| (prefix, s)))
            .flat_map(|(prefix, store)| store.iter().map(move |(name, m)| (format!("{prefix}{name}"), m)))
            .collect();
        out.extend_from_slice(&len_u32(arrays.len())?.to_le_bytes());
        for (name, m) in arrays {
            out.extend_from_slice(&len_u32(name.len())?.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F64);
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            out.extend_from_slice(&m.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(MuseError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != SCHEMA_VERSION {
            return Err(MuseError::Version {
                found: version,
                supported: SCHEMA_VERSION,
            });
        }
        let json_len = r.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| MuseError::Checkpoint(format!("bad metadata: {e}")))?;
        let count = r.u32()?;
        let mut params = ParamStore::new();
        let mut best = ParamStore::new();
        let mut optimizer = AdamState {
            step: meta.adam_step,
            ..AdamState::default()
        };
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| MuseError::Checkpoint("array name is not UTF-8".into()))?
                .to_string();
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F64 {
                return Err(MuseError::Checkpoint(format!(
                    "array {name}: unknown dtype tag {dtype}"
                )));
            }
            let ndim = r.u32()?;
            if ndim != 2 {
                return Err(MuseError::Checkpoint(format!(
                    "array {name}: expected 2 dimensions, found {ndim}"
                )));
            }
            let rows = usize::try_from(r.u64()?).map_err(|_| MuseError::Checkpoint("dimension overflow".into()))?;
            let cols = usize::try_from(r.u64()?).map_err(|_| MuseError::Checkpoint("dimension overflow".into()))?;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| MuseError::Checkpoint(format!("array {name}: size overflow")))?;
            let data = r
                .take(n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let m = Matrix::from_vec(rows, cols, data)?;
            let target = [
                (PARAM, &mut params),
                (BEST, &mut best),
                (OPT_M, &mut optimizer.m),
                (OPT_V, &mut optimizer.v),
            ]
            .into_iter()
            .find_map(|(prefix, store)| name.strip_prefix(prefix).map(|rest| (rest.to_string(), store)));
            match target {
                Some((rest, store)) => store.insert(rest, m),
                None => return Err(MuseError::Checkpoint(format!("unexpected array {name}"))),
            }
        }
        if r.pos != bytes.len() {
            return Err(MuseError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            meta,
            params,
            best_params: (!best.is_empty()).then_some(best),
            optimizer,
        })
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| MuseError::Checkpoint(format!("length {n} does not fit the container")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| MuseError::Checkpoint(format!("truncated file: needed {n} bytes at offset {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
