//! Region feature extraction for post images.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::ImageRef;
use crate::error::{MuseError, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageConfig {
    /// Number of region vectors `q`.
    pub regions: usize,
    /// Width of each region vector `d^I`.
    pub width: usize,
    /// When set, a path that does not exist on disk is an error instead of
    /// being hashed by name.
    pub require_files: bool,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            regions: 49,
            width: 512,
            require_files: false,
        }
    }
}

/// `q x d^I` region features.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures(Matrix);

impl ImageFeatures {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 {
            return Err(MuseError::Shape("image features need at least one region".into()));
        }
        if !m.is_finite() {
            return Err(MuseError::Data("image features contain non-finite values".into()));
        }
        Ok(ImageFeatures(m))
    }

    pub fn regions(&self) -> usize {
        self.0.rows()
    }

    pub fn width(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

pub trait ImageFeatureExtractor: Send + Sync {
    fn config(&self) -> &ImageConfig;
    fn extract(&self, image: &ImageRef) -> Result<ImageFeatures>;
}

fn inline_features(rows: &[Vec<f64>], config: &ImageConfig) -> Result<ImageFeatures> {
    let m = Matrix::from_rows(rows)?;
    if m.cols() != config.width {
        return Err(MuseError::Shape(format!(
            "inline image features are {} wide, configured width is {}",
            m.cols(),
            config.width
        )));
    }
    ImageFeatures::new(m)
}

/// Deterministic stand-in for a convolutional backbone: a generator seeded by
/// a SHA-256 of the image bytes (or of the reference when no file exists)
/// emits `q x d^I` values in `[-1, 1]`.
#[derive(Clone, Debug, Default)]
pub struct HashedImageExtractor {
    pub config: ImageConfig,
    pub base_dir: Option<PathBuf>,
}

impl HashedImageExtractor {
    pub fn new(config: ImageConfig) -> Self {
        HashedImageExtractor { config, base_dir: None }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    fn resolve(&self, path: &str) -> PathBuf {
        match &self.base_dir {
            Some(base) if Path::new(path).is_relative() => base.join(path),
            _ => PathBuf::from(path),
        }
    }

    fn features_from_seed(&self, domain: &[u8], material: &[u8]) -> Result<ImageFeatures> {
        let mut h = Sha256::new();
        h.update(domain);
        h.update(material);
        let seed: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let (q, d) = (self.config.regions, self.config.width);
        let data = (0..q * d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        ImageFeatures::new(Matrix::from_vec(q, d, data)?)
    }
}

impl ImageFeatureExtractor for HashedImageExtractor {
    fn config(&self) -> &ImageConfig {
        &self.config
    }

    fn extract(&self, image: &ImageRef) -> Result<ImageFeatures> {
        match image {
            ImageRef::Inline(rows) => inline_features(rows, &self.config),
            ImageRef::Path(p) => {
                let path = self.resolve(p);
                match std::fs::read(&path) {
                    Ok(bytes) => self.features_from_seed(b"bytes:", &bytes),
                    Err(_) if !self.config.require_files => self.features_from_seed(b"ref:", p.as_bytes()),
                    Err(e) => Err(MuseError::Unresolvable(format!("{}: {e}", path.display()))),
                }
            }
            ImageRef::Missing => Err(MuseError::Unresolvable(
                "sample has neither an image path nor inline features".into(),
            )),
        }
    }
}

/// Adapter that shells out to an external feature extractor.
///
/// The program is invoked as `program [args..] <image path>` and must print a
/// JSON array of region vectors (`[[f64]]`) on stdout. Calls are serialized
/// through an internal lock since the external process may hold a device.
#[derive(Debug)]
pub struct ExternalImageExtractor {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub config: ImageConfig,
    guard: Mutex<()>,
}

impl ExternalImageExtractor {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, config: ImageConfig) -> Self {
        ExternalImageExtractor {
            program: program.into(),
            args,
            config,
            guard: Mutex::new(()),
        }
    }
}

impl ImageFeatureExtractor for ExternalImageExtractor {
    fn config(&self) -> &ImageConfig {
        &self.config
    }

    fn extract(&self, image: &ImageRef) -> Result<ImageFeatures> {
        let path = match image {
            ImageRef::Inline(rows) => return inline_features(rows, &self.config),
            ImageRef::Path(p) => p,
            ImageRef::Missing => return Err(MuseError::Unresolvable("no image".into())),
        };
        if !Path::new(path).exists() {
            return Err(MuseError::Unresolvable(path.clone()));
        }
        let _lock = self.guard.lock().unwrap_or_else(|e| e.into_inner());
        let out = Command::new(&self.program)
            .args(&self.args)
            .arg(path)
            .output()
            .map_err(|e| MuseError::Backend(format!("{}: {e}", self.program.display())))?;
        if !out.status.success() {
            return Err(MuseError::Backend(format!(
                "{} exited with {}: {}",
                self.program.display(),
                out.status,
                String::from_utf8_lossy(&out.stderr).trim()
            )));
        }
        let rows: Vec<Vec<f64>> = serde_json::from_slice(&out.stdout)
            .map_err(|e| MuseError::Backend(format!("unparseable extractor output: {e}")))?;
        inline_features(&rows, &self.config)
    }
}
