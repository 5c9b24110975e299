//! Compiles a plan into content-addressed stage nodes and executes them
//! against an on-disk cache.

mod cache;
mod codec;
mod dag;
mod datasets;
mod exec;
mod kernels;
mod results;
mod run;

pub use cache::{clean_cache, decode_blob, encode_blob, Blob, Cache, Lookup};
pub use codec::{decode_tracks, encode_tracks, TrackData};
pub use dag::{
    build_dag, canonical_json, node_key, sha256_hex, Dag, NodeTask, Scope, Stage, StageNode, CONFUSION_CAP,
    FORMAT_VERSION,
};
pub use datasets::{dataset_digest, prepare_dataset, prepare_datasets, PreparedDataset};
pub use exec::{execute, Context, ExecOptions, ExecReport, ExecStats, NodeFailure, ProgressEvent, Status};
pub use kernels::EvalOutput;
pub use results::{read_results, store_results, LineageEntry, RunResult};
pub use results::{RESULTS_CSV, RESULTS_JSONL};
pub use run::{
    default_cache_dir, dry_run, run_experiment, DryRun, RunManifest, RunManifestDataset, RunOptions, RunOutcome,
    IN_PROGRESS_MARKER, RUN_MANIFEST,
};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataio::DataError;
use crate::deform::DeformError;
use crate::features::FeatureError;
use crate::metrics::MetricError;
use crate::probes::ProbeError;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("{0}")]
    Plan(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("corrupt cached value: {0}")]
    Corrupt(String),
    #[error("{} holds an interrupted run; pass --resume to continue it", .0.display())]
    Interrupted(PathBuf),
}

impl OrchestratorError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}
