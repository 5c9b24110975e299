//! Preset comparison tables computed purely from stored results.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use super::ReportError;
use crate::dataio::TaskKind;
use crate::orchestrator::RunResult;
use crate::plan::CLEAN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Preset {
    Overall,
    Robustness,
    BestProbe,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Overall, Preset::Robustness, Preset::BestProbe];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Overall => "overall",
            Preset::Robustness => "robustness",
            Preset::BestProbe => "best_probe",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| ReportError::UnknownPreset(s.to_string()))
    }
}

/// The metric a table reports for each task kind.
pub fn primary_metric(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Multiclass => "macro_f1",
        TaskKind::Multilabel => "macro_roc_auc",
        TaskKind::Key => "key_weighted_score",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub preset: Preset,
    pub corner: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<String>)>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn fixed3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// `0.850` for one value, `0.850 ± 0.050` for several.
pub fn format_cell(values: &[f64]) -> String {
    if values.is_empty() {
        return String::new();
    }
    let (mean, std) = mean_std(values);
    if values.len() > 1 {
        format!("{} ± {}", fixed3(mean), fixed3(std))
    } else {
        fixed3(mean)
    }
}

/// Row label: the feature, qualified by dataset and task when the results
/// span more than one.
struct Labeler {
    qualify: bool,
}

impl Labeler {
    fn new(results: &[RunResult]) -> Self {
        let tasks: BTreeSet<_> = results.iter().map(|r| (&r.run.dataset_id, &r.run.task_id)).collect();
        Self { qualify: tasks.len() > 1 }
    }

    fn row(&self, r: &RunResult) -> String {
        if self.qualify {
            format!("{}/{}: {}", r.run.dataset_id, r.run.task_id, r.run.feature_id)
        } else {
            r.run.feature_id.clone()
        }
    }
}

/// Per-seed primary metric values keyed by (row, column), in seed order.
type Cells = BTreeMap<(String, String), Vec<(u64, f64)>>;

fn metric_of(r: &RunResult) -> Option<f64> {
    r.metrics.get(primary_metric(r.task_kind)).copied()
}

fn values(v: &[(u64, f64)]) -> Vec<f64> {
    v.iter().map(|(_, x)| *x).collect()
}

fn build(preset: Preset, corner: &str, columns: Vec<String>, cells: &BTreeMap<(String, String), String>) -> Table {
    let rows: BTreeSet<&String> = cells.keys().map(|(r, _)| r).collect();
    Table {
        preset,
        corner: corner.to_string(),
        rows: rows
            .into_iter()
            .map(|r| {
                let row =
                    columns.iter().map(|c| cells.get(&(r.clone(), c.clone())).cloned().unwrap_or_default()).collect();
                (r.clone(), row)
            })
            .collect(),
        columns,
    }
}

/// Clean per-seed metrics keyed by (row label, probe).
fn clean_by_probe(results: &[RunResult], labels: &Labeler) -> Cells {
    let mut cells: Cells = BTreeMap::new();
    for r in results.iter().filter(|r| r.run.is_clean()) {
        if let Some(m) = metric_of(r) {
            cells.entry((labels.row(r), r.run.probe_id.clone())).or_default().push((r.run.seed, m));
        }
    }
    for v in cells.values_mut() {
        v.sort_by_key(|(s, _)| *s);
    }
    cells
}

/// Probe with the highest mean clean metric for a row; ties go to the
/// lexicographically first probe id.
fn best_probe(clean: &Cells, row: &str) -> Option<String> {
    let mut best: Option<(String, f64)> = None;
    for ((r, probe), v) in clean {
        if r != row {
            continue;
        }
        let (m, _) = mean_std(&values(v));
        if best.as_ref().is_none_or(|(_, b)| m > *b) {
            best = Some((probe.clone(), m));
        }
    }
    best.map(|(p, _)| p)
}

pub fn results_table(results: &[RunResult], preset: Preset) -> Result<Table, ReportError> {
    if results.is_empty() {
        return Err(ReportError::EmptyResults);
    }
    let labels = Labeler::new(results);
    let clean = clean_by_probe(results, &labels);
    if clean.is_empty() {
        return Err(ReportError::AbsentCondition(CLEAN.to_string()));
    }
    match preset {
        Preset::Overall => {
            let columns: BTreeSet<String> = clean.keys().map(|(_, p)| p.clone()).collect();
            let cells = clean.iter().map(|(k, v)| (k.clone(), format_cell(&values(v)))).collect();
            Ok(build(preset, "feature", columns.into_iter().collect(), &cells))
        }
        Preset::Robustness => {
            let deformed: Vec<&RunResult> = results.iter().filter(|r| !r.run.is_clean()).collect();
            if deformed.is_empty() {
                return Err(ReportError::AbsentCondition("any deformation".to_string()));
            }
            let rows: BTreeSet<String> = clean.keys().map(|(r, _)| r.clone()).collect();
            let mut columns = BTreeSet::new();
            let mut cells = BTreeMap::new();
            for row in rows {
                let Some(probe) = best_probe(&clean, &row) else {
                    continue;
                };
                let base: BTreeMap<u64, f64> = clean[&(row.clone(), probe.clone())].iter().copied().collect();
                let mut deltas: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
                for r in &deformed {
                    if labels.row(r) != row || r.run.probe_id != probe {
                        continue;
                    }
                    if let (Some(m), Some(b)) = (metric_of(r), base.get(&r.run.seed)) {
                        deltas.entry(r.run.deformation_id.clone()).or_default().push((r.run.seed, m - b));
                    }
                }
                for (deformation, mut v) in deltas {
                    v.sort_by_key(|(s, _)| *s);
                    columns.insert(deformation.clone());
                    cells.insert((row.clone(), deformation), format_cell(&values(&v)));
                }
            }
            Ok(build(preset, "feature", columns.into_iter().collect(), &cells))
        }
        Preset::BestProbe => {
            let mut columns = BTreeSet::new();
            let mut cells = BTreeMap::new();
            let features: BTreeSet<&String> = results.iter().map(|r| &r.run.feature_id).collect();
            let tasks: BTreeSet<String> =
                results.iter().map(|r| format!("{}/{}", r.run.dataset_id, r.run.task_id)).collect();
            for task in &tasks {
                let subset: Vec<RunResult> = results
                    .iter()
                    .filter(|r| &format!("{}/{}", r.run.dataset_id, r.run.task_id) == task)
                    .cloned()
                    .collect();
                let clean = clean_by_probe(&subset, &Labeler { qualify: false });
                for feature in &features {
                    if let Some(probe) = best_probe(&clean, feature) {
                        let v = &clean[&((*feature).clone(), probe.clone())];
                        columns.insert(task.clone());
                        cells.insert(
                            ((*feature).clone(), task.clone()),
                            format!("{} ({probe})", format_cell(&values(v))),
                        );
                    }
                }
            }
            Ok(build(preset, "feature", columns.into_iter().collect(), &cells))
        }
    }
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![self.corner.clone()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (label, cells) in &self.rows {
            let mut rec = vec![label.clone()];
            rec.extend(cells.iter().cloned());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    /// Markdown with every column padded to its widest cell.
    pub fn to_markdown(&self) -> String {
        let mut grid: Vec<Vec<String>> = Vec::new();
        let mut header = vec![self.corner.clone()];
        header.extend(self.columns.iter().cloned());
        grid.push(header);
        for (label, cells) in &self.rows {
            let mut row = vec![label.clone()];
            row.extend(cells.iter().map(|c| c.replace('|', "\\|")));
            grid.push(row);
        }
        let width = |s: &str| s.chars().count();
        let widths: Vec<usize> =
            (0..grid[0].len()).map(|c| grid.iter().map(|r| width(&r[c])).max().unwrap_or(0).max(3)).collect();
        let line = |row: &[String]| {
            let cells: Vec<String> =
                row.iter().zip(&widths).map(|(cell, &w)| format!("{cell}{}", " ".repeat(w - width(cell)))).collect();
            format!("| {} |\n", cells.join(" | "))
        };
        let mut out = line(&grid[0]);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        out.push_str(&format!("| {} |\n", rule.join(" | ")));
        for row in &grid[1..] {
            out.push_str(&line(row));
        }
        out
    }
}
