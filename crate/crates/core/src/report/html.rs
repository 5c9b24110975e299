//! Static, self-contained confusion report with links to the evaluated
//! audio and pre-rendered spectrograms.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Component, Path, PathBuf};

use super::png::spectrogram_png;
use super::ReportError;
use crate::dataio::{read_wav, Dataset};
use crate::metrics::ConfusionMatrix;
use crate::orchestrator::RunResult;

pub struct ConfusionInputs<'a> {
    pub results: &'a [RunResult],
    pub datasets: &'a BTreeMap<String, Dataset>,
    /// The run's output directory (holds `audio/`).
    pub output_dir: &'a Path,
    /// Root of generated report files.
    pub report_dir: &'a Path,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionPage {
    pub path: PathBuf,
    pub warnings: Vec<String>,
    pub spectrograms: usize,
}

pub fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Percent-encodes a relative path for use in `href`/`src`.
fn url_path(p: &Path) -> String {
    let mut out = String::new();
    for (i, comp) in p.components().enumerate() {
        if i > 0 {
            out.push('/');
        }
        for b in comp.as_os_str().to_string_lossy().bytes() {
            if b.is_ascii_alphanumeric() || b"-._~".contains(&b) {
                out.push(b as char);
            } else {
                let _ = write!(out, "%{b:02X}");
            }
        }
    }
    out
}

/// `target` relative to directory `base`.
pub fn relative_path(target: &Path, base: &Path) -> PathBuf {
    fn parts(p: &Path) -> Vec<OsString> {
        let p = std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
        let mut v = Vec::new();
        for c in p.components() {
            match c {
                Component::ParentDir => {
                    v.pop();
                }
                Component::Normal(s) => v.push(s.to_os_string()),
                _ => {}
            }
        }
        v
    }
    let (t, b) = (parts(target), parts(base));
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    out.extend(&t[common..]);
    out
}

struct Example {
    track_id: String,
    audio: Option<PathBuf>,
    spectrogram: Option<PathBuf>,
}

const STYLE: &str = "body{font-family:sans-serif;margin:2em}table.cm{border-collapse:collapse;margin:1em 0}\
table.cm td,table.cm th{border:1px solid #999;padding:.3em .6em;text-align:right}\
td.diag{background:#e6f2e6}td.off{background:#f7e3e3}td[data-target]{cursor:pointer;text-decoration:underline}\
.examples{border-left:3px solid #999;padding-left:1em;margin:.5em 0}footer{margin-top:2em;color:#555}";

const SCRIPT: &str = "document.querySelectorAll('td[data-target]').forEach(function(td){\
td.addEventListener('click',function(){var d=document.getElementById(td.getAttribute('data-target'));\
d.hidden=!d.hidden;});});";

/// Writes `report/<task>/<feature>/confusion.html` covering every stored run
/// of that task and feature which carries confusion data.
pub fn confusion_report(inputs: &ConfusionInputs, task: &str, feature: &str) -> Result<ConfusionPage, ReportError> {
    let matching: Vec<&RunResult> =
        inputs.results.iter().filter(|r| r.run.task_id == task && r.run.feature_id == feature).collect();
    if matching.is_empty() {
        return Err(ReportError::NoSuchRun { task: task.to_string(), feature: feature.to_string() });
    }
    let mut runs: Vec<(&RunResult, &ConfusionMatrix)> =
        matching.iter().filter_map(|r| r.confusion.as_ref().map(|c| (*r, c))).collect();
    if runs.is_empty() {
        return Err(ReportError::NoConfusion {
            task: task.to_string(),
            feature: feature.to_string(),
            kind: matching[0].task_kind.as_str().to_string(),
        });
    }
    runs.sort_by(|a, b| a.0.run.cmp(&b.0.run));

    let page_dir = inputs.report_dir.join(task).join(feature);
    fs::create_dir_all(&page_dir).map_err(|e| ReportError::io(&page_dir, e))?;
    let spectro_root = inputs.report_dir.join("spectrograms");
    let mut warnings = BTreeSet::new();
    // (audio, png) pairs to render
    let mut renders: BTreeMap<PathBuf, PathBuf> = BTreeMap::new();

    let mut resolve = |r: &RunResult, id: &str| -> Example {
        let Some(ds) = inputs.datasets.get(&r.run.dataset_id) else {
            warnings.insert(format!("dataset {} is not available", r.run.dataset_id));
            return Example { track_id: id.to_string(), audio: None, spectrogram: None };
        };
        let Some(track) = ds.track(id) else {
            warnings.insert(format!("track {id} is not in dataset {}", r.run.dataset_id));
            return Example { track_id: id.to_string(), audio: None, spectrogram: None };
        };
        let (audio, png) = if r.run.is_clean() {
            (track.audio_path.clone(), spectro_root.join(format!("{id}.png")))
        } else {
            (
                inputs
                    .output_dir
                    .join("audio")
                    .join(&r.run.dataset_id)
                    .join(&r.run.deformation_id)
                    .join(format!("{id}.wav")),
                spectro_root.join(&r.run.deformation_id).join(format!("{id}.png")),
            )
        };
        if !audio.is_file() {
            warnings.insert(format!("audio for {id} ({}) not found: {}", r.run.deformation_id, audio.display()));
            return Example { track_id: id.to_string(), audio: None, spectrogram: None };
        }
        renders.insert(png.clone(), audio.clone());
        Example { track_id: id.to_string(), audio: Some(audio), spectrogram: Some(png) }
    };

    let mut body = String::new();
    for (s, (r, cm)) in runs.iter().enumerate() {
        let run = &r.run;
        let _ = write!(
            body,
            "<section>\n<h2>{} / {} / {} / seed {}</h2>\n",
            html_escape(&run.dataset_id),
            html_escape(&run.deformation_id),
            html_escape(&run.probe_id),
            run.seed
        );
        let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{} = {v:.4}", html_escape(k))).collect();
        let _ = writeln!(
            body,
            "<p>{}; {} of {} test tracks on the diagonal</p>",
            metrics.join(", "),
            cm.trace(),
            cm.total()
        );
        body.push_str("<table class=\"cm\">\n<tr><th>reference \\ predicted</th>");
        for l in &cm.labels {
            let _ = write!(body, "<th>{}</th>", html_escape(l));
        }
        body.push_str("</tr>\n");
        let mut lists = String::new();
        for (i, row) in cm.counts.iter().enumerate() {
            let _ = write!(body, "<tr><th>{}</th>", html_escape(&cm.labels[i]));
            for (j, &count) in row.iter().enumerate() {
                let class = if i == j { "diag" } else { "off" };
                if count == 0 {
                    let _ = write!(body, "<td class=\"{class}\">0</td>");
                    continue;
                }
                let id = format!("s{s}-{i}-{j}");
                let _ = write!(body, "<td class=\"{class}\" data-target=\"{id}\">{count}</td>");
                let _ = write!(
                    lists,
                    "<div class=\"examples\" id=\"{id}\" hidden>\n<h3>{} predicted as {} ({count}, showing up to {})</h3>\n<ul>\n",
                    html_escape(&cm.labels[i]),
                    html_escape(&cm.labels[j]),
                    cm.cap
                );
                for track in &cm.examples[i][j] {
                    let ex = resolve(r, track);
                    let _ = write!(lists, "<li>{}", html_escape(&ex.track_id));
                    if let Some(a) = &ex.audio {
                        let _ = write!(
                            lists,
                            " <a href=\"{}\">audio</a>",
                            html_escape(&url_path(&relative_path(a, &page_dir)))
                        );
                    }
                    if let Some(p) = &ex.spectrogram {
                        let _ = write!(
                            lists,
                            " <a href=\"{}\">spectrogram</a>",
                            html_escape(&url_path(&relative_path(p, &page_dir)))
                        );
                    }
                    lists.push_str("</li>\n");
                }
                lists.push_str("</ul>\n</div>\n");
            }
            body.push_str("</tr>\n");
        }
        body.push_str("</table>\n");
        body.push_str(&lists);
        body.push_str("</section>\n");
    }

    let rendered = render_spectrograms(&renders, &mut warnings);

    let title = format!("Confusion: {} / {}", task, feature);
    let mut html = String::new();
    let _ = write!(
        html,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{t}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{t}</h1>\n<p>Click a non-zero cell to list example tracks.</p>\n",
        t = html_escape(&title)
    );
    html.push_str(&body);
    html.push_str("<footer>\n<h2>Warnings</h2>\n");
    if warnings.is_empty() {
        html.push_str("<p>None.</p>\n");
    } else {
        html.push_str("<ul>\n");
        for w in &warnings {
            let _ = writeln!(html, "<li>{}</li>", html_escape(w));
        }
        html.push_str("</ul>\n");
    }
    let _ = write!(html, "</footer>\n<script>{SCRIPT}</script>\n</body>\n</html>\n");

    let path = page_dir.join("confusion.html");
    fs::write(&path, html).map_err(|e| ReportError::io(&path, e))?;
    Ok(ConfusionPage { path, warnings: warnings.into_iter().collect(), spectrograms: rendered })
}

/// Renders PNGs in parallel across tracks; failures become warnings.
fn render_spectrograms(jobs: &BTreeMap<PathBuf, PathBuf>, warnings: &mut BTreeSet<String>) -> usize {
    let jobs: Vec<(&PathBuf, &PathBuf)> = jobs.iter().collect();
    if jobs.is_empty() {
        return 0;
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len());
    let per = jobs.len().div_ceil(threads);
    let outcomes: Vec<Result<(), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(per)
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|(png, audio)| {
                            let signal = read_wav(audio).map_err(|e| e.to_string())?;
                            let bytes = spectrogram_png(&signal).map_err(|e| format!("{}: {e}", audio.display()))?;
                            if let Some(dir) = png.parent() {
                                fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
                            }
                            fs::write(png, bytes).map_err(|e| format!("{}: {e}", png.display()))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("render thread")).collect()
    });
    let mut ok = 0;
    for o in outcomes {
        match o {
            Ok(()) => ok += 1,
            Err(e) => {
                warnings.insert(format!("spectrogram not rendered: {e}"));
            }
        }
    }
    ok
}
