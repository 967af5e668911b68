//! Evaluation: confusion matrix, per-class and macro precision/recall/F1.

use crate::dataio::ProcessedSample;
use crate::error::{Error, Result};
use crate::model::{eval_logits, ModelParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Metrics over a confusion matrix with rows = true class, columns =
/// predicted class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub metrics: MetricSet,
    pub confusion: Vec<Vec<u64>>,
    pub samples: usize,
}

/// Count `(true, predicted)` pairs into a `C x C` matrix.
pub fn confusion_matrix(pairs: &[(usize, usize)], classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for &(truth, pred) in pairs {
        m[truth][pred] += 1;
    }
    m
}

/// Per-class precision/recall/F1 and their unweighted macro means. A zero
/// denominator yields a zero metric.
pub fn metrics(confusion: &[Vec<u64>]) -> MetricSet {
    let c = confusion.len();
    let mut precision = vec![0.0; c];
    let mut recall = vec![0.0; c];
    let mut f1 = vec![0.0; c];
    for k in 0..c {
        let col: u64 = (0..c).map(|i| confusion[i][k]).sum();
        let row: u64 = confusion[k].iter().sum();
        let tp = confusion[k][k];
        precision[k] = if col > 0 { tp as f64 / col as f64 } else { 0.0 };
        recall[k] = if row > 0 { tp as f64 / row as f64 } else { 0.0 };
        f1[k] = if precision[k] + recall[k] > 0.0 {
            2.0 * precision[k] * recall[k] / (precision[k] + recall[k])
        } else {
            0.0
        };
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / c as f64;
    MetricSet {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
    }
}

pub fn report_from_confusion(confusion: Vec<Vec<u64>>) -> EvalReport {
    let total: u64 = confusion.iter().map(|r| r.iter().sum::<u64>()).sum();
    let trace: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    EvalReport {
        accuracy: if total > 0 { trace as f64 / total as f64 } else { 0.0 },
        metrics: metrics(&confusion),
        confusion,
        samples: total as usize,
    }
}

/// Argmax with ties broken toward the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode evaluation of a parameter set over a dataset.
pub fn evaluate(params: &ModelParams, data: &[ProcessedSample]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Data("evaluate called on an empty dataset".into()));
    }
    let classes = params.config.classes;
    let mut pairs = Vec::with_capacity(data.len());
    for sample in data {
        let logits = eval_logits(params, sample)?;
        pairs.push((sample.label, argmax(&logits)));
    }
    Ok(report_from_confusion(confusion_matrix(&pairs, classes)))
}

/// Confusion matrix as CSV: header row of class ids, then one row per true
/// class.
pub fn confusion_to_csv(confusion: &[Vec<u64>]) -> String {
    let c = confusion.len();
    let mut out = (0..c).map(|k| k.to_string()).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in confusion {
        out.push_str(
            &row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
        );
        out.push('\n');
    }
    out
}
