//! End-to-end run of a plan: datasets, DAG, execution, result store and
//! materialized deformed audio.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::cache::{Cache, Lookup};
use super::codec::decode_tracks;
use super::dag::{build_dag, sha256_hex, Dag, Stage};
use super::datasets::{prepare_datasets, PreparedDataset};
use super::exec::{execute, stage_timing, Context, ExecOptions, ExecReport, ProgressEvent};
use super::kernels::EvalOutput;
use super::results::{store_results, LineageEntry, RunResult};
use super::OrchestratorError;
use crate::dataio::{write_wav, Signal, TaskDecl, WavEncoding};
use crate::plan::{expand_grid, ExperimentPlan, RunSpec};

/// Present in the output directory while a run is unfinished.
pub const IN_PROGRESS_MARKER: &str = ".run-in-progress";
pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Defaults to `<output_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// Overrides the plan's parallelism.
    pub parallelism: Option<usize>,
    /// Continue after an interrupted run in the same output directory.
    pub resume: bool,
    pub cancel: Option<Arc<AtomicBool>>,
    pub halt_after: Option<Stage>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub results: Vec<RunResult>,
    pub exec: ExecReport,
    pub total_runs: usize,
    /// `None` when execution was halted or cancelled before storing.
    pub results_path: Option<PathBuf>,
}

impl RunOutcome {
    pub fn complete(&self) -> bool {
        self.exec.failures.is_empty() && !self.exec.halted && !self.exec.cancelled
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifestDataset {
    pub manifest: PathBuf,
    pub tasks: Vec<TaskDecl>,
}

/// Written next to the results so the report can find datasets and audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub cache_dir: PathBuf,
    pub datasets: BTreeMap<String, RunManifestDataset>,
    /// Deformed evaluation audio, `<audio_dir>/<dataset>/<deformation>/<track>.wav`,
    /// relative to the output directory.
    pub audio_dir: PathBuf,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self, OrchestratorError> {
        let text = fs::read_to_string(path).map_err(|e| OrchestratorError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| OrchestratorError::Corrupt(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct DryRun {
    pub runs: Vec<RunSpec>,
    pub nodes: BTreeMap<Stage, usize>,
    pub total_nodes: usize,
}

/// Expands the grid and counts DAG nodes without touching data or cache.
/// Dataset content is unknown here, so each dataset gets a stand-in digest;
/// node counts depend only on the grid.
pub fn dry_run(plan: &ExperimentPlan) -> Result<DryRun, OrchestratorError> {
    let keys = plan.datasets.iter().map(|d| (d.id.clone(), sha256_hex(d.id.as_bytes()))).collect();
    let dag = build_dag(plan, &keys)?;
    Ok(DryRun {
        runs: expand_grid(plan),
        nodes: Stage::ALL.iter().map(|&s| (s, dag.count(s))).collect(),
        total_nodes: dag.nodes.len(),
    })
}

pub fn default_cache_dir(plan: &ExperimentPlan) -> PathBuf {
    plan.experiment.output_dir.join("cache")
}

pub fn run_experiment(
    plan: &ExperimentPlan,
    opts: &RunOptions,
    progress: &(dyn Fn(&ProgressEvent) + Sync),
) -> Result<RunOutcome, OrchestratorError> {
    let out_dir = &plan.experiment.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| OrchestratorError::io(out_dir, e))?;
    let marker = out_dir.join(IN_PROGRESS_MARKER);
    if marker.exists() && !opts.resume {
        return Err(OrchestratorError::Interrupted(out_dir.clone()));
    }
    fs::write(&marker, b"").map_err(|e| OrchestratorError::io(&marker, e))?;

    let datasets = prepare_datasets(plan)?;
    let digests = datasets.iter().map(|(id, d)| (id.clone(), d.digest.clone())).collect();
    let dag = build_dag(plan, &digests)?;
    let cache_dir = opts.cache_dir.clone().unwrap_or_else(|| default_cache_dir(plan));
    let cache = Cache::open(&cache_dir).map_err(|e| OrchestratorError::io(&cache_dir, e))?;
    let ctx = Context::new(plan, &datasets, &cache)?;
    let exec_opts = ExecOptions {
        parallelism: opts.parallelism.unwrap_or(plan.experiment.parallelism),
        cancel: opts.cancel.clone(),
        halt_after: opts.halt_after,
    };
    let exec = execute(&ctx, &dag, &exec_opts, progress);
    let results = collect_results(&dag, &datasets, &exec)?;
    let mut outcome = RunOutcome { results, total_runs: dag.runs.len(), results_path: None, exec };
    if outcome.exec.halted || outcome.exec.cancelled {
        return Ok(outcome);
    }

    let (jsonl, _) = store_results(&outcome.results, out_dir)?;
    outcome.results_path = Some(jsonl);
    materialize_audio(&dag, &cache, out_dir)?;
    write_run_manifest(plan, &datasets, &cache_dir)?;
    if outcome.complete() {
        fs::remove_file(&marker).map_err(|e| OrchestratorError::io(&marker, e))?;
    }
    Ok(outcome)
}

fn collect_results(
    dag: &Dag,
    datasets: &BTreeMap<String, PreparedDataset>,
    exec: &ExecReport,
) -> Result<Vec<RunResult>, OrchestratorError> {
    let mut out = Vec::new();
    for (run, vi) in &dag.runs {
        let Some(blob) = exec.outputs.get(vi) else {
            continue;
        };
        let eval: EvalOutput = serde_json::from_slice(&blob.body)
            .map_err(|e| OrchestratorError::Corrupt(format!("evaluate output: {e}")))?;
        let task_kind = datasets[&run.dataset_id].dataset.task(&run.task_id).expect("grid tasks are bound").kind;
        out.push(RunResult {
            run: run.clone(),
            task_kind,
            metrics: eval.metrics,
            confusion: eval.confusion,
            timing: stage_timing(blob, Stage::Evaluate),
            lineage: dag.lineage(*vi).into_iter().map(|(stage, key)| LineageEntry { stage, key }).collect(),
        });
    }
    Ok(out)
}

/// Writes every deformed evaluation signal as float32 WAV so reports and
/// users can listen to exactly what was evaluated.
fn materialize_audio(dag: &Dag, cache: &Cache, out_dir: &Path) -> Result<(), OrchestratorError> {
    let mut targets: BTreeMap<(String, String), String> = BTreeMap::new();
    for (run, vi) in &dag.runs {
        if run.is_clean() {
            continue;
        }
        // The evaluation side's deform node is the last one in lineage order.
        let eval_input = dag.nodes[*vi].deps[1];
        if let Some((_, key)) = dag.lineage(eval_input).into_iter().find(|(s, _)| s == "deform") {
            targets.insert((run.dataset_id.clone(), run.deformation_id.clone()), key);
        }
    }
    for ((dataset, deformation), key) in targets {
        let Lookup::Hit(blob) = cache.get(&key) else {
            continue;
        };
        let dir = out_dir.join("audio").join(&dataset).join(&deformation);
        fs::create_dir_all(&dir).map_err(|e| OrchestratorError::io(&dir, e))?;
        for t in decode_tracks(&blob.body)? {
            let samples = matrix_samples(t.matrix);
            write_wav(&dir.join(format!("{}.wav", t.track_id)), &Signal::new(samples, t.sr), WavEncoding::Float32)?;
        }
    }
    Ok(())
}

fn matrix_samples(m: Array2<f32>) -> Vec<f32> {
    m.into_raw_vec_and_offset().0
}

fn write_run_manifest(
    plan: &ExperimentPlan,
    datasets: &BTreeMap<String, PreparedDataset>,
    cache_dir: &Path,
) -> Result<(), OrchestratorError> {
    let manifest = RunManifest {
        name: plan.experiment.name.clone(),
        cache_dir: cache_dir.to_path_buf(),
        datasets: datasets
            .iter()
            .map(|(id, d)| {
                (id.clone(), RunManifestDataset { manifest: d.manifest.clone(), tasks: d.dataset.tasks.clone() })
            })
            .collect(),
        audio_dir: PathBuf::from("audio"),
    };
    let path = plan.experiment.output_dir.join(RUN_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| OrchestratorError::io(&path, e))
}
