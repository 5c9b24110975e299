//! Per-window feature sequences: built-in non-learned extractors, the
//! external plugin protocol, and window aggregation.

mod aggregate;
mod builtin;
mod plugin;
mod tensor;

pub use aggregate::{aggregate_representation, AggregationMode, AggregationSpec, PredictionOp, RepresentationOp};
pub use builtin::{extract_builtin, window_layout, BuiltinExtractor, CHROMA_FMAX, CHROMA_FMIN};
pub use plugin::{read_plugin_manifest, run_plugin_extractor, write_plugin_manifest, PluginManifestEntry};
pub use tensor::{decode_tensor, encode_tensor, read_tensor_file, write_tensor_file, Tensor};

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::DspError;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("tensor file: {0}")]
    Tensor(String),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("signal shorter than one analysis frame ({window} samples < {frame})")]
    TooShort { window: usize, frame: usize },
    #[error("invalid feature spec: {0}")]
    InvalidSpec(String),
    #[error("plugin exited with {code:?}: {stderr}")]
    PluginFailed { code: Option<i32>, stderr: String },
    #[error("plugin produced no output for track {0}")]
    MissingOutput(String),
    #[error("inconsistent feature dimensionality: {track} has d={found}, expected d={expected}")]
    InconsistentDimensionality { track: String, found: usize, expected: usize },
    #[error("non-finite feature values for track {0}")]
    NonFinite(String),
}

impl FeatureError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn at(self, path: &Path) -> Self {
        match self {
            FeatureError::Tensor(m) => FeatureError::Tensor(format!("{}: {m}", path.display())),
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Builtin(BuiltinExtractor),
    /// Command template with `{manifest}` and `{outdir}` placeholders.
    Plugin(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    pub source: FeatureSource,
    pub window_s: f64,
    pub hop_s: f64,
    pub target_sr: u32,
}

pub const DEFAULT_WINDOW_S: f64 = 3.0;
pub const DEFAULT_HOP_S: f64 = 3.0;
pub const DEFAULT_TARGET_SR: u32 = 16000;

impl FeatureSpec {
    pub fn builtin(id: impl Into<String>, extractor: BuiltinExtractor) -> Self {
        Self {
            id: id.into(),
            source: FeatureSource::Builtin(extractor),
            window_s: DEFAULT_WINDOW_S,
            hop_s: DEFAULT_HOP_S,
            target_sr: DEFAULT_TARGET_SR,
        }
    }

    pub fn check(&self) -> Result<(), FeatureError> {
        if !(self.hop_s > 0.0 && self.window_s >= self.hop_s && self.window_s.is_finite()) {
            return Err(FeatureError::InvalidSpec(format!(
                "{}: need window_s >= hop_s > 0 (got window_s={}, hop_s={})",
                self.id, self.window_s, self.hop_s
            )));
        }
        if self.target_sr == 0 {
            return Err(FeatureError::InvalidSpec(format!("{}: target_sr must be positive", self.id)));
        }
        if let FeatureSource::Plugin(cmd) = &self.source {
            if cmd.trim().is_empty() {
                return Err(FeatureError::InvalidSpec(format!("{}: empty plugin command", self.id)));
            }
        }
        Ok(())
    }

    /// Version string baked into provenance and cache keys.
    pub fn extractor_version(&self) -> String {
        match &self.source {
            FeatureSource::Builtin(b) => format!("{}/{}", b.name(), builtin::EXTRACTOR_VERSION),
            FeatureSource::Plugin(_) => "plugin".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub feature_id: String,
    pub deformation_id: String,
    pub extractor_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub track_id: String,
    /// `n_windows × d`.
    pub matrix: Array2<f32>,
    pub provenance: Provenance,
}

impl FeatureSequence {
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}
