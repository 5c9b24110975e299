//! Stage kernels: each turns its inputs' cached bodies into its own body.

use std::collections::BTreeMap;
use std::fs;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::codec::{decode_tracks, encode_tracks, TrackData};
use super::dag::{NodeTask, Scope, StageNode, CONFUSION_CAP};
use super::datasets::PreparedDataset;
use super::exec::Context;
use super::OrchestratorError;
use crate::dataio::{read_wav, write_wav, Signal, Split, TaskDecl, TaskKind, WavEncoding};
use crate::deform::{apply_deformation, track_seed};
use crate::dsp::resample;
use crate::features::{
    aggregate_representation, extract_builtin, run_plugin_extractor, write_plugin_manifest, AggregationMode,
    AggregationSpec, FeatureSource, FeatureSpec, PluginManifestEntry, RepresentationOp,
};
use crate::metrics::{
    classification_metrics, confusion, key_weighted_score, multilabel_metrics, ConfusionMatrix, Key, DEFAULT_THRESHOLD,
};
use crate::plan::CLEAN;
use crate::probes::{build_probe, decode_probe, encode_probe, predict, train, training_rows, Standardizer};

/// Body of an evaluate node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    pub n_test: usize,
}

pub(crate) fn run_node(ctx: &Context, node: &StageNode, inputs: &[&[u8]]) -> Result<Vec<u8>, OrchestratorError> {
    match &node.task {
        NodeTask::Deform { dataset, deformation, scope } => deform(ctx, dataset, deformation, *scope),
        NodeTask::Extract { dataset, feature, condition, scope } => {
            extract(ctx, dataset, feature, condition, *scope, inputs.first().copied())
        }
        NodeTask::Aggregate { .. } => aggregate(&ctx.plan.aggregation, inputs[0]),
        NodeTask::Train { dataset, task, probe, seed, .. } => train_probe(ctx, dataset, task, probe, *seed, inputs[0]),
        NodeTask::Evaluate { dataset, task } => evaluate(ctx, dataset, task, inputs[0], inputs[1]),
    }
}

fn prepared<'c>(ctx: &'c Context, id: &str) -> Result<&'c PreparedDataset, OrchestratorError> {
    ctx.datasets.get(id).ok_or_else(|| OrchestratorError::Plan(format!("dataset {id} was not prepared")))
}

fn scoped_tracks<'d>(ds: &'d PreparedDataset, scope: Scope) -> Vec<&'d str> {
    match scope {
        Scope::All => ds.dataset.tracks.iter().map(|t| t.track_id.as_str()).collect(),
        Scope::Test => ds.tracks_in(Split::Test),
    }
}

fn deform(ctx: &Context, dataset: &str, deformation: &str, scope: Scope) -> Result<Vec<u8>, OrchestratorError> {
    let ds = prepared(ctx, dataset)?;
    let spec = &ctx.deformations[deformation];
    let mut out = Vec::new();
    for id in scoped_tracks(ds, scope) {
        let track = ds.dataset.track(id).expect("split ids belong to the dataset");
        let signal = read_wav(&track.audio_path)?;
        let deformed = apply_deformation(&signal, spec, track_seed(id))?;
        if deformed.clipped > 0 {
            log::warn!("{deformation}: {} samples clipped in {id}", deformed.clipped);
        }
        let n = deformed.signal.samples.len();
        out.push(TrackData {
            track_id: id.to_string(),
            sr: deformed.signal.sr,
            matrix: Array2::from_shape_vec((1, n), deformed.signal.samples).expect("1 x n"),
        });
    }
    Ok(encode_tracks(&out))
}

/// The audio a feature node reads: files on disk when clean, the deform
/// node's body otherwise.
enum AudioSource {
    Files(Vec<(String, std::path::PathBuf)>),
    Decoded(Vec<TrackData>),
}

fn extract(
    ctx: &Context,
    dataset: &str,
    feature: &str,
    condition: &str,
    scope: Scope,
    input: Option<&[u8]>,
) -> Result<Vec<u8>, OrchestratorError> {
    let ds = prepared(ctx, dataset)?;
    let spec = &ctx.features[feature];
    let source = if condition == CLEAN {
        AudioSource::Files(
            scoped_tracks(ds, scope)
                .into_iter()
                .map(|id| (id.to_string(), ds.dataset.track(id).unwrap().audio_path.clone()))
                .collect(),
        )
    } else {
        AudioSource::Decoded(decode_tracks(input.expect("deformed extraction has an input"))?)
    };
    let out = match &spec.source {
        FeatureSource::Builtin(_) => extract_with_builtin(spec, condition, source)?,
        FeatureSource::Plugin(command) => extract_with_plugin(ctx, spec, command, source)?,
    };
    Ok(encode_tracks(&out))
}

fn to_target_rate(signal: Signal, target_sr: u32) -> Result<Signal, OrchestratorError> {
    if signal.sr == target_sr {
        return Ok(signal);
    }
    let samples = resample(&signal.samples, signal.sr, target_sr).map_err(crate::features::FeatureError::from)?;
    Ok(Signal::new(samples, target_sr))
}

fn extract_with_builtin(
    spec: &FeatureSpec,
    condition: &str,
    source: AudioSource,
) -> Result<Vec<TrackData>, OrchestratorError> {
    let signals: Box<dyn Iterator<Item = Result<(String, Signal), OrchestratorError>>> = match source {
        AudioSource::Files(files) => Box::new(files.into_iter().map(|(id, path)| Ok((id, read_wav(&path)?)))),
        AudioSource::Decoded(tracks) => Box::new(
            tracks.into_iter().map(|t| Ok((t.track_id, Signal::new(t.matrix.into_raw_vec_and_offset().0, t.sr)))),
        ),
    };
    signals
        .map(|item| {
            let (id, signal) = item?;
            let signal = to_target_rate(signal, spec.target_sr)?;
            let seq = extract_builtin(&id, condition, &signal, spec)?;
            Ok(TrackData { track_id: id, sr: 0, matrix: seq.matrix })
        })
        .collect()
}

fn extract_with_plugin(
    ctx: &Context,
    spec: &FeatureSpec,
    command: &str,
    source: AudioSource,
) -> Result<Vec<TrackData>, OrchestratorError> {
    let scratch = ctx.cache.scratch_dir("plugin").map_err(|e| OrchestratorError::io(ctx.cache.root(), e))?;
    let result = (|| {
        let files = match source {
            AudioSource::Files(files) => files,
            AudioSource::Decoded(tracks) => {
                let audio_dir = scratch.join("audio");
                fs::create_dir_all(&audio_dir).map_err(|e| OrchestratorError::io(&audio_dir, e))?;
                let mut files = Vec::new();
                for t in tracks {
                    let path = audio_dir.join(format!("{}.wav", t.track_id));
                    let signal = Signal::new(t.matrix.into_raw_vec_and_offset().0, t.sr);
                    write_wav(&path, &signal, WavEncoding::Float32)?;
                    files.push((t.track_id, path));
                }
                files
            }
        };
        let entries: Vec<PluginManifestEntry> = files
            .into_iter()
            .map(|(track_id, audio_path)| PluginManifestEntry {
                track_id,
                audio_path,
                window_s: spec.window_s,
                hop_s: spec.hop_s,
                target_sr: spec.target_sr,
            })
            .collect();
        let manifest = scratch.join("manifest.jsonl");
        write_plugin_manifest(&entries, &manifest)?;
        let matrices = run_plugin_extractor(command, &manifest, &scratch.join("out"))?;
        Ok(entries
            .iter()
            .map(|e| TrackData { track_id: e.track_id.clone(), sr: 0, matrix: matrices[&e.track_id].clone() })
            .collect())
    })();
    if let Err(e) = fs::remove_dir_all(&scratch) {
        log::warn!("could not remove {}: {e}", scratch.display());
    }
    result
}

fn aggregate(spec: &AggregationSpec, input: &[u8]) -> Result<Vec<u8>, OrchestratorError> {
    let mut tracks = decode_tracks(input)?;
    if spec.mode == AggregationMode::Representation {
        for t in &mut tracks {
            t.matrix = aggregate_representation(&t.matrix, spec.representation_op).insert_axis(Axis(0));
        }
    }
    Ok(encode_tracks(&tracks))
}

/// Aggregation as seen by the probe: representation rows arrive already
/// pooled, so pooling them again must be the identity.
fn probe_aggregation(spec: &AggregationSpec) -> AggregationSpec {
    AggregationSpec { representation_op: RepresentationOp::Mean, ..spec.clone() }
}

fn task_decl<'d>(ds: &'d PreparedDataset, task: &str) -> Result<&'d TaskDecl, OrchestratorError> {
    ds.dataset
        .task(task)
        .ok_or_else(|| OrchestratorError::Plan(format!("dataset {} has no task {task}", ds.dataset.id)))
}

/// Class indices of a track's label for `task`, or `None` if unlabelled.
fn label_indices(ds: &PreparedDataset, task: &str, track_id: &str) -> Option<Vec<usize>> {
    let label = ds.dataset.track(track_id)?.labels.get(task)?;
    Some(
        label
            .values()
            .into_iter()
            .map(|v| ds.dataset.class_index(task, v).expect("labels are in the vocabulary"))
            .collect(),
    )
}

struct Labelled<'m> {
    ids: Vec<String>,
    matrices: Vec<&'m Array2<f32>>,
    labels: Vec<Vec<usize>>,
}

fn labelled<'m>(
    ds: &PreparedDataset,
    task: &str,
    split: Split,
    features: &'m BTreeMap<String, Array2<f32>>,
) -> Result<Labelled<'m>, OrchestratorError> {
    let mut out = Labelled { ids: vec![], matrices: vec![], labels: vec![] };
    for id in ds.tracks_in(split) {
        let Some(labels) = label_indices(ds, task, id) else {
            continue;
        };
        let m = features.get(id).ok_or_else(|| OrchestratorError::Corrupt(format!("no features for track {id}")))?;
        out.ids.push(id.to_string());
        out.matrices.push(m);
        out.labels.push(labels);
    }
    Ok(out)
}

fn targets(labels: &[Vec<usize>], n_classes: usize) -> Array2<f32> {
    let mut y = Array2::zeros((labels.len(), n_classes));
    for (i, ls) in labels.iter().enumerate() {
        for &l in ls {
            y[[i, l]] = 1.0;
        }
    }
    y
}

fn feature_map(bytes: &[u8]) -> Result<BTreeMap<String, Array2<f32>>, OrchestratorError> {
    Ok(decode_tracks(bytes)?.into_iter().map(|t| (t.track_id, t.matrix)).collect())
}

fn train_probe(
    ctx: &Context,
    dataset: &str,
    task: &str,
    probe: &str,
    seed: u64,
    input: &[u8],
) -> Result<Vec<u8>, OrchestratorError> {
    let ds = prepared(ctx, dataset)?;
    let decl = task_decl(ds, task)?;
    let n_classes = ds.dataset.vocab(task).len();
    let features = feature_map(input)?;
    let agg = probe_aggregation(&ctx.plan.aggregation);

    let tr = labelled(ds, task, Split::Train, &features)?;
    let va = labelled(ds, task, Split::Val, &features)?;
    let (mut x_tr, y_tr) = training_rows(&tr.matrices, targets(&tr.labels, n_classes).view(), &agg);
    let (mut x_va, y_va) = training_rows(&va.matrices, targets(&va.labels, n_classes).view(), &agg);
    let standardizer = if agg.standardize && x_tr.nrows() > 0 {
        let s = Standardizer::fit(x_tr.view());
        x_tr = s.apply(x_tr.view());
        if x_va.nrows() > 0 {
            x_va = s.apply(x_va.view());
        }
        Some(s)
    } else {
        None
    };
    let spec = &ctx.probes[probe];
    let d = tr.matrices.first().map_or(0, |m| m.ncols());
    let model = build_probe::<f32>(spec, d, n_classes, decl.kind, seed);
    let trained = train(
        model,
        x_tr.view(),
        y_tr.view(),
        x_va.view(),
        y_va.view(),
        &ctx.plan.optimizer,
        spec.dropout,
        standardizer,
        seed,
    )?;
    Ok(encode_probe(&trained, spec))
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn evaluate(
    ctx: &Context,
    dataset: &str,
    task: &str,
    probe_bytes: &[u8],
    features: &[u8],
) -> Result<Vec<u8>, OrchestratorError> {
    let ds = prepared(ctx, dataset)?;
    let decl = task_decl(ds, task)?;
    let vocab = ds.dataset.vocab(task);
    let (_, trained) = decode_probe(probe_bytes)?;
    let features = feature_map(features)?;
    let agg = probe_aggregation(&ctx.plan.aggregation);
    let test = labelled(ds, task, Split::Test, &features)?;
    let probs: Vec<Vec<f32>> = test.matrices.iter().map(|m| predict(&trained, m, &agg).to_vec()).collect();

    let mut metrics = BTreeMap::new();
    let mut matrix = None;
    match decl.kind {
        TaskKind::Multiclass | TaskKind::Key => {
            let refs: Vec<usize> = test.labels.iter().map(|l| l[0]).collect();
            let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            let m = classification_metrics(&refs, &preds, vocab.len())?;
            metrics.insert("accuracy".to_string(), m.accuracy);
            metrics.insert("macro_f1".to_string(), m.macro_f1);
            if decl.kind == TaskKind::Key {
                let mut total = 0.0;
                for (&r, &p) in refs.iter().zip(&preds) {
                    total += key_weighted_score(Key::parse(&vocab[r])?, Key::parse(&vocab[p])?);
                }
                metrics.insert("key_weighted_score".to_string(), total / refs.len() as f64);
            }
            matrix = Some(confusion(&refs, &preds, &test.ids, vocab, CONFUSION_CAP)?);
        }
        TaskKind::Multilabel => {
            let scores: Vec<Vec<f64>> = probs.iter().map(|p| p.iter().map(|&v| v as f64).collect()).collect();
            let m = multilabel_metrics(&test.labels, &scores, DEFAULT_THRESHOLD)?;
            match m.macro_roc_auc {
                Some(auc) => {
                    metrics.insert("macro_roc_auc".to_string(), auc);
                }
                None => log::warn!("{dataset}/{task}: ROC-AUC undefined, every label is constant on the test split"),
            }
            metrics.insert("macro_f1".to_string(), m.macro_f1);
        }
    }
    let out = EvalOutput { metrics, confusion: matrix, n_test: test.ids.len() };
    Ok(serde_json::to_vec(&out).expect("eval output serializes"))
}
