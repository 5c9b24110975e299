//! Materializing the plan's datasets: synthetic generation, manifest
//! loading, split assignment and content digests.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::dag::{canonical_json, sha256_hex};
use super::OrchestratorError;
use crate::dataio::{load_manifest_with, split_dataset, synth_noiseband, synth_tonebank, synth_xor, Dataset, Split};
use crate::plan::{DatasetEntry, ExperimentPlan, SyntheticSpec};

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub dataset: Dataset,
    pub manifest: PathBuf,
    /// SHA-256 over tasks, labels, audio content and split assignment.
    pub digest: String,
}

impl PreparedDataset {
    pub fn tracks_in(&self, split: Split) -> Vec<&str> {
        self.dataset.splits.as_ref().map(|s| s.tracks_in(split)).unwrap_or_default()
    }
}

const STAMP: &str = "synth.json";

/// Generates a synthetic dataset unless an identical one is already on disk.
fn ensure_synthetic(spec: &SyntheticSpec, dir: &std::path::Path) -> Result<PathBuf, OrchestratorError> {
    let manifest = dir.join("manifest.csv");
    let mut stamp_spec = spec.clone();
    // The output location is not part of the content.
    let (SyntheticSpec::Tonebank { out_dir, .. }
    | SyntheticSpec::Noiseband { out_dir, .. }
    | SyntheticSpec::Xor { out_dir, .. }) = &mut stamp_spec;
    *out_dir = None;
    let stamp = canonical_json(&serde_json::to_value(&stamp_spec).expect("spec serializes"));
    let stamp_path = dir.join(STAMP);
    if manifest.is_file() && fs::read_to_string(&stamp_path).ok().as_deref() == Some(stamp.as_str()) {
        return Ok(manifest);
    }
    log::info!("generating {} dataset in {}", spec.kind_name(), dir.display());
    match spec {
        SyntheticSpec::Tonebank { seed, params, .. } => synth_tonebank(params, *seed, dir).map(drop)?,
        SyntheticSpec::Noiseband { seed, params, .. } => synth_noiseband(params, *seed, dir).map(drop)?,
        SyntheticSpec::Xor { seed, params, .. } => synth_xor(params, *seed, dir).map(drop)?,
    }
    fs::write(&stamp_path, stamp).map_err(|e| OrchestratorError::io(&stamp_path, e))?;
    Ok(manifest)
}

pub fn prepare_dataset(plan: &ExperimentPlan, entry: &DatasetEntry) -> Result<PreparedDataset, OrchestratorError> {
    let manifest = match (&entry.manifest, &entry.synthetic) {
        (Some(m), None) => m.clone(),
        (None, Some(s)) => ensure_synthetic(s, &plan.synthetic_dir(entry).expect("synthetic entry"))?,
        _ => {
            return Err(OrchestratorError::Plan(format!(
                "dataset {}: set exactly one of manifest or synthetic",
                entry.id
            )))
        }
    };
    let loaded = load_manifest_with(&manifest, &entry.id, &entry.bound_tasks())?;
    // Only the bound tasks take part; the first one drives split stratification.
    let bound = entry.bound_tasks();
    let tracks = loaded
        .tracks
        .into_iter()
        .map(|mut t| {
            t.labels.retain(|task, _| bound.iter().any(|b| &b.id == task));
            t
        })
        .collect();
    let dataset = Dataset::new(&entry.id, bound, tracks)?;
    let splits = split_dataset(&dataset, &entry.split)?;
    let dataset = dataset.with_splits(splits);
    let digest = dataset_digest(&dataset)?;
    Ok(PreparedDataset { dataset, manifest, digest })
}

pub fn prepare_datasets(plan: &ExperimentPlan) -> Result<BTreeMap<String, PreparedDataset>, OrchestratorError> {
    plan.datasets.iter().map(|e| Ok((e.id.clone(), prepare_dataset(plan, e)?))).collect()
}

pub fn dataset_digest(dataset: &Dataset) -> Result<String, OrchestratorError> {
    let splits = dataset.splits.as_ref();
    let mut tracks = Vec::with_capacity(dataset.tracks.len());
    for t in &dataset.tracks {
        let bytes = fs::read(&t.audio_path).map_err(|e| OrchestratorError::io(&t.audio_path, e))?;
        tracks.push(json!({
            "track_id": t.track_id,
            "labels": t.labels,
            "group": t.group,
            "audio": hex::encode(Sha256::digest(&bytes)),
            "split": splits.and_then(|s| s.split_of(&t.track_id)).map(|s| s.as_str()),
        }));
    }
    let doc = json!({ "tasks": dataset.tasks, "vocab": dataset.vocab, "tracks": tracks });
    Ok(sha256_hex(canonical_json(&doc).as_bytes()))
}
