//! Dataset manifests, split assignment, deterministic synthetic datasets
//! and WAV input/output.

mod manifest;
mod split;
mod synth;
mod wav;

pub use manifest::{load_manifest, load_manifest_with, write_manifest_csv};
pub use split::{split_dataset, Split, SplitAssignment, SplitPolicy};
pub use synth::{
    midi_to_hz, render_note, synth_noiseband, synth_tonebank, synth_xor, tonebank_notes, xor_points, NoiseBandSpec,
    Timbre, ToneBankSpec, ToneNote, XorPoint, XorSpec, PITCH_CLASSES,
};
pub use wav::{read_wav, read_wav_bytes, write_wav, Signal, WavEncoding};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed WAV ({reason})")]
    MalformedWav { path: PathBuf, reason: String },
    #[error("{path}: unsupported WAV codec ({detail})")]
    UnsupportedCodec { path: PathBuf, detail: String },
    #[error("{path}: missing required column {column}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("duplicate track_id {0}")]
    DuplicateTrack(String),
    #[error("empty dataset {0}")]
    EmptyDataset(String),
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("track {track} has a label for undeclared task {task}")]
    UndeclaredTask { track: String, task: String },
    #[error("track {track}: invalid key label {label:?}")]
    InvalidKeyLabel { track: String, label: String },
    #[error("dataset too small to populate all three splits: {0}")]
    TooSmall(String),
    #[error("invalid split policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSynthSpec(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Multiclass,
    Multilabel,
    Key,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Multiclass => "multiclass",
            TaskKind::Multilabel => "multilabel",
            TaskKind::Key => "key",
        }
    }

    /// Single-label kinds are trained with softmax cross-entropy.
    pub fn is_single_label(self) -> bool {
        !matches!(self, TaskKind::Multilabel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDecl {
    pub id: String,
    pub kind: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Single(String),
    Multi(BTreeSet<String>),
}

impl Label {
    pub fn values(&self) -> Vec<&str> {
        match self {
            Label::Single(s) => vec![s.as_str()],
            Label::Multi(set) => set.iter().map(String::as_str).collect(),
        }
    }

    /// Label used for stratification: the single label, or the first of a set.
    pub fn stratum(&self) -> &str {
        match self {
            Label::Single(s) => s,
            Label::Multi(set) => set.iter().next().map_or("", String::as_str),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub track_id: String,
    pub audio_path: PathBuf,
    pub labels: BTreeMap<String, Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub id: String,
    /// Tasks in declaration order.
    pub tasks: Vec<TaskDecl>,
    /// Sorted label vocabulary per task.
    pub vocab: BTreeMap<String, Vec<String>>,
    pub tracks: Vec<TrackRecord>,
    pub splits: Option<SplitAssignment>,
}

impl Dataset {
    /// Builds a dataset, checking track uniqueness and task declarations and
    /// deriving the sorted label vocabularies.
    pub fn new(id: impl Into<String>, tasks: Vec<TaskDecl>, tracks: Vec<TrackRecord>) -> Result<Self, DataError> {
        let id = id.into();
        if tracks.is_empty() {
            return Err(DataError::EmptyDataset(id));
        }
        let mut seen = HashSet::new();
        for t in &tracks {
            if !seen.insert(t.track_id.as_str()) {
                return Err(DataError::DuplicateTrack(t.track_id.clone()));
            }
        }
        let declared: HashSet<&str> = tasks.iter().map(|t| t.id.as_str()).collect();
        let mut vocab: BTreeMap<String, BTreeSet<String>> =
            tasks.iter().map(|t| (t.id.clone(), BTreeSet::new())).collect();
        for track in &tracks {
            for (task, label) in &track.labels {
                if !declared.contains(task.as_str()) {
                    return Err(DataError::UndeclaredTask { track: track.track_id.clone(), task: task.clone() });
                }
                let entry = vocab.get_mut(task).expect("declared task");
                entry.extend(label.values().into_iter().map(str::to_owned));
            }
        }
        Ok(Self {
            id,
            tasks,
            vocab: vocab.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect(),
            tracks,
            splits: None,
        })
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskDecl> {
        self.tasks.iter().find(|t| t.id == task_id)
    }

    pub fn vocab(&self, task_id: &str) -> &[String] {
        self.vocab.get(task_id).map_or(&[], Vec::as_slice)
    }

    pub fn class_index(&self, task_id: &str, label: &str) -> Option<usize> {
        self.vocab(task_id).binary_search_by(|v| v.as_str().cmp(label)).ok()
    }

    pub fn track(&self, track_id: &str) -> Option<&TrackRecord> {
        self.tracks.iter().find(|t| t.track_id == track_id)
    }

    pub fn with_splits(mut self, splits: SplitAssignment) -> Self {
        self.splits = Some(splits);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(id: &str, genre: &str) -> TrackRecord {
        TrackRecord {
            track_id: id.into(),
            audio_path: PathBuf::from(format!("{id}.wav")),
            labels: BTreeMap::from([("genre".to_string(), Label::Single(genre.into()))]),
            group: None,
            duration_s: None,
        }
    }

    fn genre_task() -> Vec<TaskDecl> {
        vec![TaskDecl { id: "genre".into(), kind: TaskKind::Multiclass }]
    }

    #[test]
    fn vocab_is_sorted_and_indexed() {
        let ds =
            Dataset::new("d", genre_task(), vec![track("a", "rock"), track("b", "jazz"), track("c", "rock")]).unwrap();
        assert_eq!(ds.vocab("genre"), ["jazz", "rock"]);
        assert_eq!(ds.class_index("genre", "rock"), Some(1));
        assert_eq!(ds.class_index("genre", "pop"), None);
    }

    #[test]
    fn rejects_undeclared_task() {
        let err = Dataset::new("d", vec![], vec![track("a", "rock")]).unwrap_err();
        assert!(matches!(err, DataError::UndeclaredTask { .. }));
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(Dataset::new("d", genre_task(), vec![]), Err(DataError::EmptyDataset(_))));
    }
}
