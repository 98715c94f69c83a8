//! Layered run configuration.
//!
//! Precedence, lowest first: built-in defaults, `--config` TOML file,
//! `MUSE_*` environment variables, `--set key=value` flags, `--seed`.
//! Environment keys map `__` to `.` and are lowercased, so
//! `MUSE_TRAIN__EPOCHS=3` sets `train.epochs`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use muse_core::backends::{ExternalImageExtractor, HashedImageExtractor, ImageFeatureExtractor};
use muse_core::generator::GenerationConfig;
use muse_core::ingest::{SplitRatios, DEFAULT_SPLIT_SEED};
use muse_core::model::ModelConfig;
use muse_core::par::Exec;
use muse_core::training::TrainConfig;
use muse_core::MuseError;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

pub const ENV_PREFIX: &str = "MUSE_";

/// Keys owned by the top level or by the subcommand.
const RESERVED: [&str; 3] = ["train.seed", "train.exec", "train.phase"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub ratios: SplitRatios,
    /// Reassign splits even for samples that already carry one.
    pub resplit: bool,
    pub min_freq: usize,
    /// Base directory for relative image paths; defaults to the data file's directory.
    pub image_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            ratios: SplitRatios::default(),
            resplit: false,
            min_freq: 1,
            image_dir: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageBackendConfig {
    /// External feature extractor; the hashed stub is used when unset.
    pub program: Option<PathBuf>,
    pub args: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub embedding_dim: usize,
    /// Enables METEOR's synonym stage.
    pub meteor_synonyms: bool,
    pub pos_lexicon: Option<PathBuf>,
    pub synonyms: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            embedding_dim: 64,
            meteor_synonyms: true,
            pos_lexicon: None,
            synonyms: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives splitting, initialization and shuffling.
    pub seed: u64,
    pub exec: Exec,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
    pub eval: EvalConfig,
    pub images: ImageBackendConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SPLIT_SEED,
            exec: Exec::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            generation: GenerationConfig::default(),
            eval: EvalConfig::default(),
            images: ImageBackendConfig::default(),
        }
    }
}

/// Inputs to [`resolve`], one per layer.
#[derive(Default)]
pub struct Layers<'a> {
    pub file: Option<&'a Path>,
    pub env: Vec<(String, String)>,
    pub sets: &'a [String],
    pub seed: Option<u64>,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    MuseError::Config(msg.into()).into()
}

/// A bare TOML value; anything that does not parse is taken as a string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(root: &mut Table, key: &str, value: Value) -> Result<()> {
    if RESERVED.contains(&key) {
        return Err(invalid(format!(
            "{key} cannot be set directly; use the top-level seed/exec or the subcommand"
        )));
    }
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("malformed key {key:?}")));
    }
    let mut t = root;
    for p in &parts[..parts.len() - 1] {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(format!("{key}: {p} is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn flatten(prefix: &str, t: &Table, out: &mut Vec<String>) {
    for (k, v) in t {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(inner) => flatten(&key, inner, out),
            _ => out.push(key),
        }
    }
}

/// `MUSE_*` variables from the process environment.
pub fn env_overrides() -> Vec<(String, String)> {
    std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect()
}

pub fn resolve(layers: &Layers) -> Result<RunConfig> {
    let mut root = Table::try_from(RunConfig::default()).context("serializing defaults")?;
    if let Some(path) = layers.file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Table = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut keys = Vec::new();
        flatten("", &file, &mut keys);
        if let Some(k) = keys.iter().find(|k| RESERVED.contains(&k.as_str())) {
            return Err(invalid(format!("{}: {k} cannot be set directly", path.display())));
        }
        merge(&mut root, file);
    }
    let mut env = layers.env.clone();
    env.sort();
    for (k, v) in env {
        let key = k[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
        set_path(&mut root, &key, parse_value(&v))?;
    }
    for s in layers.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects key=value, got {s:?}")))?;
        set_path(&mut root, k.trim(), parse_value(v.trim()))?;
    }
    if let Some(seed) = layers.seed {
        let seed = i64::try_from(seed).map_err(|_| invalid("seed must fit in a signed 64-bit integer"))?;
        root.insert("seed".into(), Value::Integer(seed));
    }
    let mut cfg: RunConfig = Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| invalid(e.to_string()))?;
    cfg.train.seed = cfg.seed;
    cfg.train.exec = cfg.exec;
    cfg.model.validate()?;
    cfg.data.ratios.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Reserved keys are left out so the output loads back as a `--config` file.
    pub fn to_toml(&self) -> Result<String> {
        let mut root = Table::try_from(self)?;
        if let Some(Value::Table(train)) = root.get_mut("train") {
            for key in RESERVED {
                train.remove(key.trim_start_matches("train."));
            }
        }
        Ok(toml::to_string(&root)?)
    }

    /// Writes the resolved configuration, creating parent directories.
    pub fn archive(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn image_extractor(&self, model: &ModelConfig, data_path: &Path) -> Box<dyn ImageFeatureExtractor> {
        match &self.images.program {
            Some(program) => Box::new(ExternalImageExtractor::new(
                program.clone(),
                self.images.args.clone(),
                model.image.clone(),
            )),
            None => {
                let base = self
                    .data
                    .image_dir
                    .clone()
                    .or_else(|| data_path.parent().map(Path::to_path_buf))
                    .unwrap_or_default();
                Box::new(HashedImageExtractor::new(model.image.clone()).with_base_dir(base))
            }
        }
    }
}
