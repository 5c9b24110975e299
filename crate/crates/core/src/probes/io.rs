//! Trained probe serialization: a JSON header followed by MRT1 tensors
//! (per layer: weights, biases; then standardizer mean and std if present).

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::{Layer, ProbeModel};
use super::train::{EpochRecord, Standardizer, TrainedProbe};
use super::{Architecture, ProbeError, ProbeSpec};
use crate::dataio::TaskKind;
use crate::features::{decode_tensor, encode_tensor, Tensor};

const MAGIC: &[u8; 4] = b"RPB1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHeader {
    pub probe_id: String,
    pub architecture: Architecture,
    /// Layer widths from input to output.
    pub dims: Vec<usize>,
    pub task_kind: TaskKind,
    pub seed: u64,
    pub standardized: bool,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochRecord>,
}

fn header(trained: &TrainedProbe, spec: &ProbeSpec) -> ProbeHeader {
    let mut dims = vec![trained.model.input_dim()];
    dims.extend(trained.model.layers.iter().map(|l| l.w.ncols()));
    ProbeHeader {
        probe_id: spec.id.clone(),
        architecture: spec.architecture.clone(),
        dims,
        task_kind: trained.model.task_kind,
        seed: trained.seed,
        standardized: trained.standardizer.is_some(),
        epochs_run: trained.epochs_run,
        best_epoch: trained.best_epoch,
        stopped_early: trained.stopped_early,
        history: trained.history.clone(),
    }
}

fn tensors(trained: &TrainedProbe) -> Vec<(String, Tensor)> {
    let vec1 = |v: &Array1<f32>| Tensor { dims: vec![v.len() as u32], data: v.to_vec() };
    let mut out = Vec::new();
    for (i, l) in trained.model.layers.iter().enumerate() {
        out.push((format!("layer{i}_w"), Tensor::from_matrix(&l.w)));
        out.push((format!("layer{i}_b"), vec1(&l.b)));
    }
    if let Some(s) = &trained.standardizer {
        out.push(("standardizer_mean".into(), vec1(&s.mean)));
        out.push(("standardizer_std".into(), vec1(&s.std)));
    }
    out
}

pub fn encode_probe(trained: &TrainedProbe, spec: &ProbeSpec) -> Vec<u8> {
    let json = serde_json::to_vec(&header(trained, spec)).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors(trained) {
        encode_tensor(&t, &mut out);
    }
    out
}

pub fn decode_probe(bytes: &[u8]) -> Result<(ProbeHeader, TrainedProbe), ProbeError> {
    let corrupt = |m: &str| ProbeError::Corrupt(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes.get(8..8 + n).ok_or_else(|| corrupt("truncated header"))?;
    let header: ProbeHeader = serde_json::from_slice(json).map_err(|e| ProbeError::Corrupt(e.to_string()))?;
    let mut pos = 8 + n;
    let mut next = || -> Result<Tensor, ProbeError> {
        let (t, used) = decode_tensor(&bytes[pos..]).map_err(|e| ProbeError::Corrupt(e.to_string()))?;
        pos += used;
        Ok(t)
    };

    let mut layers = Vec::new();
    for w in header.dims.windows(2) {
        let tw = next()?;
        let tb = next()?;
        if tw.dims != [w[0] as u32, w[1] as u32] || tb.dims != [w[1] as u32] {
            return Err(corrupt("layer shape does not match header"));
        }
        layers.push(Layer {
            w: Array2::from_shape_vec((w[0], w[1]), tw.data).expect("checked"),
            b: Array1::from(tb.data),
        });
    }
    let standardizer = if header.standardized {
        let mean = next()?;
        let std = next()?;
        Some(Standardizer { mean: Array1::from(mean.data), std: Array1::from(std.data) })
    } else {
        None
    };
    let trained = TrainedProbe {
        model: ProbeModel { layers, task_kind: header.task_kind },
        standardizer,
        history: header.history.clone(),
        epochs_run: header.epochs_run,
        best_epoch: header.best_epoch,
        stopped_early: header.stopped_early,
        seed: header.seed,
    };
    Ok((header, trained))
}

/// Writes `probe.json` plus one `.mrt` file per tensor into `dir`.
pub fn write_probe_files(dir: &Path, trained: &TrainedProbe, spec: &ProbeSpec) -> Result<(), ProbeError> {
    let io = |path: &Path, source| ProbeError::Io { path: path.to_path_buf(), source };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let json = serde_json::to_vec_pretty(&header(trained, spec)).expect("header serializes");
    let path = dir.join("probe.json");
    std::fs::write(&path, json).map_err(|e| io(&path, e))?;
    for (name, t) in tensors(trained) {
        let mut buf = Vec::new();
        encode_tensor(&t, &mut buf);
        let path = dir.join(format!("{name}.mrt"));
        std::fs::write(&path, buf).map_err(|e| io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::read_tensor_file;
    use crate::probes::build_probe;
    use ndarray::array;

    fn sample() -> (TrainedProbe, ProbeSpec) {
        let spec = ProbeSpec::new("m", Architecture::Mlp { hidden: vec![3] });
        let trained = TrainedProbe {
            model: build_probe(&spec, 4, 2, TaskKind::Multilabel, 11),
            standardizer: Some(Standardizer { mean: array![0.1, 0.2, 0.3, 0.4], std: array![1.0, 2.0, 0.5, 1.5] }),
            history: vec![EpochRecord { epoch: 1, train_loss: 0.1 + 0.2, val_loss: 1.0 / 3.0 }],
            epochs_run: 1,
            best_epoch: 1,
            stopped_early: false,
            seed: 11,
        };
        (trained, spec)
    }

    #[test]
    fn bytes_roundtrip_exactly() {
        let (t, spec) = sample();
        let (h, back) = decode_probe(&encode_probe(&t, &spec)).unwrap();
        assert_eq!(back, t);
        assert_eq!(h.dims, vec![4, 3, 2]);
        assert_eq!(h.architecture, spec.architecture);
    }

    #[test]
    fn corruption_is_detected() {
        let (t, spec) = sample();
        let bytes = encode_probe(&t, &spec);
        assert!(decode_probe(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_probe(b"nope").is_err());
    }

    #[test]
    fn files_are_readable_mrt1() {
        let (t, spec) = sample();
        let dir = tempfile::tempdir().unwrap();
        write_probe_files(dir.path(), &t, &spec).unwrap();
        let w = read_tensor_file(&dir.path().join("layer0_w.mrt")).unwrap();
        assert_eq!(w, t.model.layers[0].w);
        let h: ProbeHeader = serde_json::from_slice(&std::fs::read(dir.path().join("probe.json")).unwrap()).unwrap();
        assert_eq!(h.seed, 11);
    }
}
