//! Reports over a stored run: preset tables, the static confusion page and
//! spectrogram images.

mod html;
mod png;
mod tables;

pub use html::{confusion_report, html_escape, relative_path, ConfusionInputs, ConfusionPage};
pub use png::{encode_gray_png, log_mel, spectrogram_pixels, spectrogram_png, SPECTROGRAM_MELS};
pub use tables::{format_cell, mean_std, primary_metric, results_table, Preset, Table};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dataio::{load_manifest_with, DataError, Dataset};
use crate::orchestrator::{read_results, OrchestratorError, RunManifest, RunResult, RUN_MANIFEST};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no results to report")]
    EmptyResults,
    #[error("unknown preset {0:?}; valid presets: overall, robustness, best_probe")]
    UnknownPreset(String),
    #[error("results contain no {0} runs")]
    AbsentCondition(String),
    #[error("no stored run for task {task} with feature {feature}")]
    NoSuchRun { task: String, feature: String },
    #[error("runs of task {task} with feature {feature} have no confusion data ({kind} tasks are scored per label)")]
    NoConfusion { task: String, feature: String, kind: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl ReportError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// A results store together with what the report needs to resolve tracks.
#[derive(Debug)]
pub struct ReportSource {
    pub results: Vec<RunResult>,
    /// Directory holding `results.jsonl`.
    pub output_dir: PathBuf,
    pub manifest: Option<RunManifest>,
}

impl ReportSource {
    pub fn open(results_path: &Path) -> Result<Self, ReportError> {
        let results = read_results(results_path)?;
        let output_dir = results_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let manifest_path = output_dir.join(RUN_MANIFEST);
        let manifest = if manifest_path.is_file() { Some(RunManifest::read(&manifest_path)?) } else { None };
        Ok(Self { results, output_dir, manifest })
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("report")
    }

    /// Datasets named in the run manifest; unreadable ones are skipped with a
    /// warning so the report degrades to text.
    pub fn datasets(&self) -> BTreeMap<String, Dataset> {
        let mut out = BTreeMap::new();
        let Some(m) = &self.manifest else {
            return out;
        };
        for (id, d) in &m.datasets {
            match load_manifest_with(&d.manifest, id, &d.tasks) {
                Ok(ds) => {
                    out.insert(id.clone(), ds);
                }
                Err(e) => log::warn!("dataset {id}: {e}"),
            }
        }
        out
    }
}

/// Writes `tables/<preset>.csv` and `tables/<preset>.md` under `report_dir`.
pub fn write_table(table: &Table, report_dir: &Path) -> Result<(PathBuf, PathBuf), ReportError> {
    let dir = report_dir.join("tables");
    fs::create_dir_all(&dir).map_err(|e| ReportError::io(&dir, e))?;
    let csv = dir.join(format!("{}.csv", table.preset.name()));
    let md = dir.join(format!("{}.md", table.preset.name()));
    fs::write(&csv, table.to_csv()).map_err(|e| ReportError::io(&csv, e))?;
    fs::write(&md, table.to_markdown()).map_err(|e| ReportError::io(&md, e))?;
    Ok((csv, md))
}
