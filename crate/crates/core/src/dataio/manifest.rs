use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::{DataError, Dataset, Label, TaskDecl, TaskKind, TrackRecord};
use crate::metrics::Key;

const RESERVED: [&str; 4] = ["track_id", "audio_path", "group", "duration_s"];

/// Loads a CSV or JSON-lines manifest, inferring task kinds: list-valued
/// labels (JSON arrays, `|`-separated CSV cells) make a task multilabel,
/// everything else is multiclass. The dataset id is the file stem.
pub fn load_manifest(path: &Path) -> Result<Dataset, DataError> {
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into());
    load_manifest_with(path, &id, &[])
}

/// Loads a manifest with explicit task bindings. Bound tasks must be present
/// as columns; their declared kind overrides inference. Key-task labels are
/// normalized to canonical key names.
pub fn load_manifest_with(path: &Path, dataset_id: &str, bindings: &[TaskDecl]) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let is_jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl") | Some("json") | Some("ndjson"));
    let rows = if is_jsonl { parse_jsonl(&text, path)? } else { parse_csv(&text, path)? };

    let mut tasks: Vec<TaskDecl> = Vec::new();
    for row in &rows {
        for (task, (_, is_list)) in &row.cells {
            match tasks.iter_mut().find(|t| &t.id == task) {
                Some(t) if *is_list => t.kind = TaskKind::Multilabel,
                Some(_) => {}
                None => tasks.push(TaskDecl {
                    id: task.clone(),
                    kind: if *is_list { TaskKind::Multilabel } else { TaskKind::Multiclass },
                }),
            }
        }
    }
    // Column order from the first row, which carries every column for CSV.
    if let Some(first) = rows.first() {
        tasks.sort_by_key(|t| first.order.iter().position(|c| c == &t.id).unwrap_or(usize::MAX));
    }
    for binding in bindings {
        match tasks.iter_mut().find(|t| t.id == binding.id) {
            Some(t) => t.kind = binding.kind,
            None => return Err(DataError::MissingColumn { path: path.to_path_buf(), column: binding.id.clone() }),
        }
    }

    let mut tracks = Vec::with_capacity(rows.len());
    for row in rows {
        let mut labels = BTreeMap::new();
        for (task, (values, _)) in row.cells {
            let kind = tasks.iter().find(|t| t.id == task).expect("collected").kind;
            let label = match kind {
                TaskKind::Multilabel => Label::Multi(values.into_iter().collect()),
                TaskKind::Multiclass => match values.len() {
                    0 => continue,
                    1 => Label::Single(values.into_iter().next().unwrap()),
                    _ => {
                        return Err(DataError::Parse {
                            path: path.to_path_buf(),
                            line: row.line,
                            message: format!("task {task} is single-label but has several values"),
                        })
                    }
                },
                TaskKind::Key => {
                    let raw = match values.as_slice() {
                        [] => continue,
                        [one] => one.clone(),
                        _ => values.join("|"),
                    };
                    let key = Key::parse(&raw)
                        .map_err(|_| DataError::InvalidKeyLabel { track: row.track_id.clone(), label: raw.clone() })?;
                    Label::Single(key.to_string())
                }
            };
            labels.insert(task, label);
        }
        let audio_path = if row.audio_path.is_absolute() { row.audio_path } else { base.join(row.audio_path) };
        tracks.push(TrackRecord {
            track_id: row.track_id,
            audio_path,
            labels,
            group: row.group,
            duration_s: row.duration_s,
        });
    }
    Dataset::new(dataset_id, tasks, tracks)
}

struct Row {
    line: usize,
    track_id: String,
    audio_path: PathBuf,
    group: Option<String>,
    duration_s: Option<f64>,
    /// task id -> (values, written as a list)
    cells: BTreeMap<String, (Vec<String>, bool)>,
    order: Vec<String>,
}

fn parse_csv(text: &str, path: &Path) -> Result<Vec<Row>, DataError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(path, 1, e))?.clone();
    let column = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn { path: path.to_path_buf(), column: name.to_string() })
    };
    let id_col = column("track_id")?;
    let audio_col = column("audio_path")?;
    let group_col = headers.iter().position(|h| h == "group");
    let dur_col = headers.iter().position(|h| h == "duration_s");
    let task_cols: Vec<(usize, String)> =
        headers.iter().enumerate().filter(|(_, h)| !RESERVED.contains(h)).map(|(i, h)| (i, h.to_string())).collect();

    let mut rows = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let line = n + 2;
        let record = record.map_err(|e| csv_error(path, line, e))?;
        let get = |i: usize| record.get(i).unwrap_or("").to_string();
        let duration_s = match dur_col.map(get).filter(|s| !s.is_empty()) {
            Some(s) => Some(s.parse::<f64>().map_err(|e| DataError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duration_s: {e}"),
            })?),
            None => None,
        };
        let mut cells = BTreeMap::new();
        for (i, task) in &task_cols {
            let cell = get(*i);
            let is_list = cell.contains('|');
            let values: Vec<String> =
                cell.split('|').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect();
            cells.insert(task.clone(), (values, is_list));
        }
        rows.push(Row {
            line,
            track_id: get(id_col),
            audio_path: PathBuf::from(get(audio_col)),
            group: group_col.map(get).filter(|s| !s.is_empty()),
            duration_s,
            cells,
            order: task_cols.iter().map(|(_, t)| t.clone()).collect(),
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, line: usize, err: csv::Error) -> DataError {
    DataError::Parse { path: path.to_path_buf(), line, message: err.to_string() }
}

fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<Row>, DataError> {
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| DataError::Parse { path: path.to_path_buf(), line, message };
        let value: Value = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        let Value::Object(map) = value else {
            return Err(parse_err("expected a JSON object".into()));
        };
        let string_field = |key: &str| -> Result<String, DataError> {
            match map.get(key) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(parse_err(format!("{key} must be a string"))),
                None => Err(DataError::MissingColumn { path: path.to_path_buf(), column: key.to_string() }),
            }
        };
        let track_id = string_field("track_id")?;
        let audio_path = PathBuf::from(string_field("audio_path")?);
        let group = match map.get("group") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(parse_err("group must be a string".into())),
        };
        let duration_s = match map.get("duration_s") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| parse_err("duration_s must be a number".into()))?),
        };
        let mut cells = BTreeMap::new();
        let mut order = Vec::new();
        for (key, value) in &map {
            if RESERVED.contains(&key.as_str()) {
                continue;
            }
            let cell = match value {
                Value::String(s) => (vec![s.clone()], false),
                Value::Array(items) => {
                    let values: BTreeSet<String> = items
                        .iter()
                        .map(|v| {
                            v.as_str()
                                .map(str::to_owned)
                                .ok_or_else(|| parse_err(format!("{key}: labels must be strings")))
                        })
                        .collect::<Result<_, _>>()?;
                    (values.into_iter().collect(), true)
                }
                Value::Null => (vec![], false),
                other => (vec![other.to_string()], false),
            };
            order.push(key.clone());
            cells.insert(key.clone(), cell);
        }
        rows.push(Row { line, track_id, audio_path, group, duration_s, cells, order });
    }
    Ok(rows)
}

/// Writes a CSV manifest with audio paths relative to the manifest directory
/// when possible. Multilabel cells are `|`-joined.
pub fn write_manifest_csv(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let has_group = dataset.tracks.iter().any(|t| t.group.is_some());
    let mut header = vec!["track_id".to_string(), "audio_path".to_string()];
    header.extend(dataset.tasks.iter().map(|t| t.id.clone()));
    if has_group {
        header.push("group".into());
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let write_err = |e: csv::Error| DataError::Parse { path: path.to_path_buf(), line: 0, message: e.to_string() };
    writer.write_record(&header).map_err(write_err)?;
    for track in &dataset.tracks {
        let audio = track.audio_path.strip_prefix(base).unwrap_or(&track.audio_path).to_string_lossy().into_owned();
        let mut record = vec![track.track_id.clone(), audio];
        for task in &dataset.tasks {
            record.push(track.labels.get(&task.id).map(|l| l.values().join("|")).unwrap_or_default());
        }
        if has_group {
            record.push(track.group.clone().unwrap_or_default());
        }
        writer.write_record(&record).map_err(write_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| DataError::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn csv_multiclass() {
        let dir = tempfile::tempdir().unwrap();
        let p =
            write(dir.path(), "m.csv", "track_id,audio_path,genre\nt1,a.wav,rock\nt2,b.wav,jazz\nt3,/abs/c.wav,rock\n");
        let ds = load_manifest(&p).unwrap();
        assert_eq!(ds.id, "m");
        assert_eq!(ds.tasks[0].kind, TaskKind::Multiclass);
        assert_eq!(ds.vocab("genre"), ["jazz", "rock"]);
        assert_eq!(ds.tracks[0].audio_path, dir.path().join("a.wav"));
        assert_eq!(ds.tracks[2].audio_path, PathBuf::from("/abs/c.wav"));
    }

    #[test]
    fn jsonl_multilabel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            "{\"track_id\":\"t1\",\"audio_path\":\"a.wav\",\"tags\":[\"rock\",\"loud\"]}\n",
        );
        let ds = load_manifest(&p).unwrap();
        assert_eq!(ds.tasks[0].kind, TaskKind::Multilabel);
        match &ds.tracks[0].labels["tags"] {
            Label::Multi(set) => assert_eq!(set.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_pipe_cells_are_multilabel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "track_id,audio_path,tags,group\nt1,a.wav,rock|loud,x\nt2,b.wav,calm,y\n");
        let ds = load_manifest(&p).unwrap();
        assert_eq!(ds.tasks.len(), 1);
        assert_eq!(ds.tasks[0].kind, TaskKind::Multilabel);
        assert_eq!(ds.vocab("tags"), ["calm", "loud", "rock"]);
        assert_eq!(ds.tracks[0].group.as_deref(), Some("x"));
    }

    #[test]
    fn duplicate_track_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "track_id,audio_path,genre\nt1,a.wav,rock\nt1,b.wav,jazz\n");
        let err = load_manifest(&p).unwrap_err();
        assert_eq!(err.to_string(), "duplicate track_id t1");
    }

    #[test]
    fn missing_column_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "track_id,genre\nt1,rock\n");
        assert!(matches!(load_manifest(&p), Err(DataError::MissingColumn { .. })));
    }

    #[test]
    fn header_only_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "track_id,audio_path,genre\n");
        assert!(matches!(load_manifest(&p), Err(DataError::EmptyDataset(_))));
    }

    #[test]
    fn key_binding_normalizes_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "k.csv", "track_id,audio_path,key\nt1,a.wav,Db major\nt2,b.wav,a minor\n");
        let ds = load_manifest_with(&p, "beatport", &[TaskDecl { id: "key".into(), kind: TaskKind::Key }]).unwrap();
        assert_eq!(ds.vocab("key"), ["A minor", "C# major"]);

        let bad = write(dir.path(), "bad.csv", "track_id,audio_path,key\nt1,a.wav,H major\n");
        let bindings = [TaskDecl { id: "key".into(), kind: TaskKind::Key }];
        assert!(matches!(load_manifest_with(&bad, "b", &bindings), Err(DataError::InvalidKeyLabel { .. })));
    }

    #[test]
    fn vocab_is_stable_across_reloads_and_rewrites() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "m.csv", "track_id,audio_path,genre,tags\nt1,a.wav,rock,x|y\nt2,b.wav,jazz,z\n");
        let first = load_manifest(&p).unwrap();
        let second = load_manifest(&p).unwrap();
        assert_eq!(first.vocab, second.vocab);

        let out = dir.path().join("copy.csv");
        write_manifest_csv(&first, &out).unwrap();
        let third = load_manifest(&out).unwrap();
        assert_eq!(third.vocab, first.vocab);
        assert_eq!(third.tracks, first.tracks);
    }
}
