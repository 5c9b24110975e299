//! The result store: `results.jsonl` (one RunResult per line) and its flat
//! projection `results.csv` (one row per run × metric).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::dataio::TaskKind;
use crate::metrics::ConfusionMatrix;
use crate::plan::RunSpec;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub stage: String,
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: RunSpec,
    pub task_kind: TaskKind,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    /// Wall seconds per stage, summed over the run's lineage.
    pub timing: BTreeMap<String, f64>,
    /// Every cache key the result depends on, itself first, datasets last.
    pub lineage: Vec<LineageEntry>,
}

pub const RESULTS_JSONL: &str = "results.jsonl";
pub const RESULTS_CSV: &str = "results.csv";

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), OrchestratorError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let io = |e| OrchestratorError::io(path, e);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

/// Writes both files under `out_dir`, replacing earlier versions atomically.
pub fn store_results(results: &[RunResult], out_dir: &Path) -> Result<(PathBuf, PathBuf), OrchestratorError> {
    fs::create_dir_all(out_dir).map_err(|e| OrchestratorError::io(out_dir, e))?;
    let mut jsonl = Vec::new();
    for r in results {
        serde_json::to_writer(&mut jsonl, r).expect("results serialize");
        jsonl.push(b'\n');
    }

    let mut csv = csv::Writer::from_writer(Vec::new());
    let header = [
        "dataset_id",
        "task_id",
        "feature_id",
        "deformation_id",
        "probe_id",
        "seed",
        "aggregation_mode",
        "metric",
        "value",
    ];
    csv.write_record(header).expect("in-memory write");
    for r in results {
        let seed = r.run.seed.to_string();
        for (metric, value) in &r.metrics {
            let value = value.to_string();
            csv.write_record([
                r.run.dataset_id.as_str(),
                &r.run.task_id,
                &r.run.feature_id,
                &r.run.deformation_id,
                &r.run.probe_id,
                &seed,
                r.run.aggregation_mode.as_str(),
                metric,
                &value,
            ])
            .expect("in-memory write");
        }
    }
    let csv = csv.into_inner().expect("in-memory flush");

    let jsonl_path = out_dir.join(RESULTS_JSONL);
    let csv_path = out_dir.join(RESULTS_CSV);
    write_atomic(&jsonl_path, &jsonl)?;
    write_atomic(&csv_path, &csv)?;
    Ok((jsonl_path, csv_path))
}

pub fn read_results(path: &Path) -> Result<Vec<RunResult>, OrchestratorError> {
    let text = fs::read_to_string(path).map_err(|e| OrchestratorError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| OrchestratorError::Corrupt(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
