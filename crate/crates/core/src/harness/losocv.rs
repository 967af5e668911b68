//! Leave-one-subject-out cross validation.
//!
//! All subjects (train and validation lists combined) are pooled; each
//! fold holds one subject out as the test set and trains on the rest.
//! Preprocessing statistics are recomputed per fold from that fold's
//! training subjects, and entirely missing streams in the held-out subject
//! fall back to the global-mean fill (labels are never consulted on the
//! test side). The reported metrics come from the final parameters of each
//! fold; no checkpoint selection touches the held-out subject.

use crate::dataio::{preprocess_split, ActionSample};
use crate::error::{Error, Result};
use crate::harness::metrics::{evaluate, EvalReport};
use crate::harness::{load_data, resolve_model_config, train_processed, RunConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub subject: u32,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosocvReport {
    pub folds: Vec<FoldResult>,
    /// Unweighted means over folds.
    pub mean_accuracy: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
}

/// Run one fold per subject of the pooled dataset described by `run.data`.
pub fn losocv(run: &RunConfig) -> Result<LosocvReport> {
    run.validate()?;
    let (mut samples, val) = load_data(&run.data)?;
    samples.extend(val);
    losocv_on_samples(run, &samples)
}

pub fn losocv_on_samples(run: &RunConfig, samples: &[ActionSample]) -> Result<LosocvReport> {
    let subjects: BTreeSet<u32> = samples.iter().map(|s| s.subject).collect();
    if subjects.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-subject-out needs >= 2 subjects, found {}",
            subjects.len()
        )));
    }

    let mut folds = Vec::new();
    for (fold, &held_out) in subjects.iter().enumerate() {
        let train_samples: Vec<ActionSample> = samples
            .iter()
            .filter(|s| s.subject != held_out)
            .cloned()
            .collect();
        let test_samples: Vec<ActionSample> = samples
            .iter()
            .filter(|s| s.subject == held_out)
            .cloned()
            .collect();

        let model_cfg = resolve_model_config(&run.model, &run.pre, &train_samples)?;
        let mut pre = run.pre.clone();
        pre.seed = run.seed;
        let (train_proc, test_proc, stats) =
            preprocess_split(&train_samples, &test_samples, &pre)?;
        if stats.train_subjects.contains(&held_out) {
            return Err(Error::Data(format!(
                "fold {fold}: held-out subject {held_out} leaked into fold statistics"
            )));
        }
        let outcome = train_processed(run, &model_cfg, &train_proc, &[], stats)?;
        let report = evaluate(&outcome.params, &test_proc)?;
        folds.push(FoldResult {
            fold,
            subject: held_out,
            report,
        });
    }

    let n = folds.len() as f64;
    let mean = |f: &dyn Fn(&FoldResult) -> f64| folds.iter().map(f).sum::<f64>() / n;
    Ok(LosocvReport {
        mean_accuracy: mean(&|r| r.report.accuracy),
        mean_precision: mean(&|r| r.report.metrics.macro_precision),
        mean_recall: mean(&|r| r.report.metrics.macro_recall),
        mean_f1: mean(&|r| r.report.metrics.macro_f1),
        folds,
    })
}

/// CSV rows `fold,subject,accuracy,precision_macro,recall_macro,f1_macro`
/// plus per-class `f1_class_<k>` columns and a trailing `mean` row.
pub fn losocv_to_csv(report: &LosocvReport) -> String {
    let classes = report
        .folds
        .first()
        .map(|f| f.report.metrics.f1.len())
        .unwrap_or(0);
    let mut out = String::from("fold,subject,accuracy,precision_macro,recall_macro,f1_macro");
    for k in 0..classes {
        out.push_str(&format!(",f1_class_{k}"));
    }
    out.push('\n');
    for f in &report.folds {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            f.fold,
            f.subject,
            f.report.accuracy,
            f.report.metrics.macro_precision,
            f.report.metrics.macro_recall,
            f.report.metrics.macro_f1
        ));
        for v in &f.report.metrics.f1 {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out.push_str(&format!(
        "mean,all,{},{},{},{}",
        report.mean_accuracy, report.mean_precision, report.mean_recall, report.mean_f1
    ));
    for _ in 0..classes {
        out.push(',');
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tests::tiny_run;
    use crate::model::Variant;

    #[test]
    fn every_sample_tested_exactly_once_without_leakage() {
        let run = tiny_run(Variant::Accel, 1, false);
        let (mut samples, val) = load_data(&run.data).unwrap();
        samples.extend(val);
        let report = losocv_on_samples(&run, &samples).unwrap();

        let subjects: BTreeSet<u32> = samples.iter().map(|s| s.subject).collect();
        assert_eq!(report.folds.len(), subjects.len());
        // each sample lands in the test fold of its own subject exactly once
        let tested: usize = report.folds.iter().map(|f| f.report.samples).sum();
        assert_eq!(tested, samples.len());
        for f in &report.folds {
            let expected = samples.iter().filter(|s| s.subject == f.subject).count();
            assert_eq!(f.report.samples, expected, "fold {}", f.fold);
        }
    }

    #[test]
    fn single_subject_is_rejected() {
        let run = tiny_run(Variant::Accel, 1, false);
        let (samples, _) = load_data(&run.data).unwrap();
        let one: Vec<ActionSample> = samples
            .iter()
            .filter(|s| s.subject == 0)
            .cloned()
            .collect();
        assert!(losocv_on_samples(&run, &one).is_err());
    }

    #[test]
    fn csv_has_fold_rows_plus_mean() {
        let run = tiny_run(Variant::Accel, 0, false);
        let (mut samples, val) = load_data(&run.data).unwrap();
        samples.extend(val);
        let report = losocv_on_samples(&run, &samples).unwrap();
        let csv = losocv_to_csv(&report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + report.folds.len() + 1);
        assert!(lines[0].starts_with("fold,subject,accuracy"));
        assert!(lines.last().unwrap().starts_with("mean,all,"));
    }
}
