//! Evaluation metrics: single-label classification scores, multilabel
//! ROC-AUC/F1, the weighted key score and confusion matrices with example
//! track ids.

mod key;

pub use key::{key_weighted_score, Key, Mode};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} references vs {1} predictions")]
    LengthMismatch(usize, usize),
    #[error("no items to evaluate")]
    Empty,
    #[error("class index {index} out of range for {n_classes} classes")]
    ClassOutOfRange { index: usize, n_classes: usize },
    #[error("unparseable key {0:?}")]
    UnparseableKey(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    /// Classes that appear in neither references nor predictions; they count
    /// as F1 = 0 in the macro average.
    pub absent_classes: Vec<usize>,
}

/// Accuracy, macro-F1 and per-class precision/recall/F1. Undefined
/// precision or recall (zero denominator) is taken as 0.
pub fn classification_metrics(
    refs: &[usize],
    preds: &[usize],
    n_classes: usize,
) -> Result<ClassificationMetrics, MetricError> {
    check_pairs(refs, preds, n_classes)?;
    let mut tp = vec![0usize; n_classes];
    let mut ref_count = vec![0usize; n_classes];
    let mut pred_count = vec![0usize; n_classes];
    for (&r, &p) in refs.iter().zip(preds) {
        ref_count[r] += 1;
        pred_count[p] += 1;
        if r == p {
            tp[r] += 1;
        }
    }
    let per_class: Vec<ClassScores> =
        (0..n_classes).map(|c| precision_recall_f1(tp[c], pred_count[c], ref_count[c])).collect();
    let absent_classes = (0..n_classes).filter(|&c| ref_count[c] == 0 && pred_count[c] == 0).collect();
    let correct: usize = tp.iter().sum();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / refs.len() as f64,
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n_classes as f64,
        per_class,
        absent_classes,
    })
}

fn precision_recall_f1(tp: usize, predicted: usize, actual: usize) -> ClassScores {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, actual);
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    ClassScores { precision, recall, f1, support: actual }
}

fn check_pairs(refs: &[usize], preds: &[usize], n_classes: usize) -> Result<(), MetricError> {
    if refs.len() != preds.len() {
        return Err(MetricError::LengthMismatch(refs.len(), preds.len()));
    }
    if refs.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(&index) = refs.iter().chain(preds).find(|&&c| c >= n_classes) {
        return Err(MetricError::ClassOutOfRange { index, n_classes });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScores {
    /// `None` when the label's references are all positive or all negative.
    pub roc_auc: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilabelMetrics {
    /// Mean AUC over labels with both classes present; `None` if there are none.
    pub macro_roc_auc: Option<f64>,
    pub macro_f1: f64,
    pub per_label: Vec<LabelScores>,
    pub excluded_labels: Vec<usize>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-label ROC-AUC (Mann-Whitney rank statistic, ties count one half) and
/// F1 at `threshold`. `refs[i]` holds the positive label indices of item `i`;
/// `scores[i][l]` is the score of label `l`.
pub fn multilabel_metrics(
    refs: &[Vec<usize>],
    scores: &[Vec<f64>],
    threshold: f64,
) -> Result<MultilabelMetrics, MetricError> {
    if refs.len() != scores.len() {
        return Err(MetricError::LengthMismatch(refs.len(), scores.len()));
    }
    if refs.is_empty() {
        return Err(MetricError::Empty);
    }
    let n_labels = scores[0].len();
    if let Some(row) = scores.iter().find(|r| r.len() != n_labels) {
        return Err(MetricError::LengthMismatch(n_labels, row.len()));
    }
    if let Some(&index) = refs.iter().flatten().find(|&&l| l >= n_labels) {
        return Err(MetricError::ClassOutOfRange { index, n_classes: n_labels });
    }

    let mut per_label = Vec::with_capacity(n_labels);
    let mut excluded_labels = Vec::new();
    for l in 0..n_labels {
        let truth: Vec<bool> = refs.iter().map(|r| r.contains(&l)).collect();
        let column: Vec<f64> = scores.iter().map(|r| r[l]).collect();
        let positives = truth.iter().filter(|&&t| t).count();
        let roc_auc = rank_auc(&truth, &column);
        if roc_auc.is_none() {
            excluded_labels.push(l);
        }
        let tp = truth.iter().zip(&column).filter(|(t, s)| **t && **s >= threshold).count();
        let predicted = column.iter().filter(|&&s| s >= threshold).count();
        let prf = precision_recall_f1(tp, predicted, positives);
        per_label.push(LabelScores { roc_auc, precision: prf.precision, recall: prf.recall, f1: prf.f1, positives });
    }
    let aucs: Vec<f64> = per_label.iter().filter_map(|l| l.roc_auc).collect();
    Ok(MultilabelMetrics {
        macro_roc_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        macro_f1: per_label.iter().map(|l| l.f1).sum::<f64>() / n_labels.max(1) as f64,
        per_label,
        excluded_labels,
    })
}

/// AUC from average ranks: (R_pos - P(P+1)/2) / (P·N).
fn rank_auc(truth: &[bool], scores: &[f64]) -> Option<f64> {
    let p = truth.iter().filter(|&&t| t).count();
    let n = truth.len() - p;
    if p == 0 || n == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = truth.iter().zip(&ranks).filter(|(t, _)| **t).map(|(_, r)| r).sum();
    Some((rank_sum - (p * (p + 1)) as f64 / 2.0) / (p * n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[reference][predicted]`.
    pub counts: Vec<Vec<usize>>,
    /// Up to `cap` track ids per cell, in input order.
    pub examples: Vec<Vec<Vec<String>>>,
    pub cap: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion(
    refs: &[usize],
    preds: &[usize],
    track_ids: &[String],
    labels: &[String],
    cap: usize,
) -> Result<ConfusionMatrix, MetricError> {
    check_pairs(refs, preds, labels.len())?;
    if track_ids.len() != refs.len() {
        return Err(MetricError::LengthMismatch(refs.len(), track_ids.len()));
    }
    let n = labels.len();
    let mut counts = vec![vec![0usize; n]; n];
    let mut examples = vec![vec![Vec::new(); n]; n];
    for ((&r, &p), id) in refs.iter().zip(preds).zip(track_ids) {
        counts[r][p] += 1;
        if examples[r][p].len() < cap {
            examples[r][p].push(id.clone());
        }
    }
    Ok(ConfusionMatrix { labels: labels.to_vec(), counts, examples, cap })
}
