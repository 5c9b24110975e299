//! External extractor protocol. The plugin is invoked once per batch with a
//! JSON-lines manifest and an output directory; it must exit 0 and write one
//! `<track_id>.mrt` matrix per manifest entry.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{read_tensor_file, FeatureError};
use crate::process;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginManifestEntry {
    pub track_id: String,
    pub audio_path: PathBuf,
    pub window_s: f64,
    pub hop_s: f64,
    pub target_sr: u32,
}

pub fn write_plugin_manifest(entries: &[PluginManifestEntry], path: &Path) -> Result<(), FeatureError> {
    let mut out = Vec::new();
    for e in entries {
        serde_json::to_writer(&mut out, e).expect("manifest entries serialize");
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| FeatureError::io(path, e))?;
    file.write_all(&out).map_err(|e| FeatureError::io(path, e))
}

pub fn read_plugin_manifest(path: &Path) -> Result<Vec<PluginManifestEntry>, FeatureError> {
    let text = fs::read_to_string(path).map_err(|e| FeatureError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| FeatureError::InvalidSpec(format!("{}: {e}", path.display()))))
        .collect()
}

/// Runs `command` (placeholders `{manifest}` and `{outdir}`) and checks its
/// output: every manifest track has a 2-D tensor, all with the same width
/// and only finite values.
pub fn run_plugin_extractor(
    command: &str,
    manifest_path: &Path,
    out_dir: &Path,
) -> Result<BTreeMap<String, Array2<f32>>, FeatureError> {
    let entries = read_plugin_manifest(manifest_path)?;
    fs::create_dir_all(out_dir).map_err(|e| FeatureError::io(out_dir, e))?;
    let output = process::run_template(command, &[("manifest", manifest_path), ("outdir", out_dir)])
        .map_err(|e| FeatureError::io(Path::new("sh"), e))?;
    if !output.status.success() {
        return Err(FeatureError::PluginFailed { code: output.status.code(), stderr: process::stderr_text(&output) });
    }

    let mut result = BTreeMap::new();
    let mut expected: Option<(String, usize)> = None;
    for entry in &entries {
        let path = out_dir.join(format!("{}.mrt", entry.track_id));
        if !path.exists() {
            return Err(FeatureError::MissingOutput(entry.track_id.clone()));
        }
        let matrix = read_tensor_file(&path)?;
        if matrix.nrows() == 0 {
            return Err(FeatureError::Tensor(format!("{}: zero windows", path.display())));
        }
        match &expected {
            None => expected = Some((entry.track_id.clone(), matrix.ncols())),
            Some((_, d)) if *d != matrix.ncols() => {
                return Err(FeatureError::InconsistentDimensionality {
                    track: entry.track_id.clone(),
                    found: matrix.ncols(),
                    expected: *d,
                })
            }
            Some(_) => {}
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(FeatureError::NonFinite(entry.track_id.clone()));
        }
        result.insert(entry.track_id.clone(), matrix);
    }
    Ok(result)
}
