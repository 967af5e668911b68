//! Modality/optimizer ablation grid: the four variants crossed with ASAM
//! on/off, under matched seeds, data, and epoch budgets.

use crate::dataio::preprocess_split;
use crate::error::Result;
use crate::harness::metrics::EvalReport;
use crate::harness::{load_data, resolve_model_config, train_processed, RunConfig};
use crate::model::Variant;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub asam: bool,
    pub report: EvalReport,
}

/// Train all eight cells on identically preprocessed data. Every cell
/// shares the base config's optimization budget so differences come from
/// the modality mix and the sharpness-aware step alone.
pub fn ablation_suite(run: &RunConfig) -> Result<Vec<AblationRow>> {
    run.validate()?;
    let (train_samples, val_samples) = load_data(&run.data)?;
    let mut pre = run.pre.clone();
    pre.seed = run.seed;
    let (train_proc, val_proc, stats) = preprocess_split(&train_samples, &val_samples, &pre)?;

    let mut rows = Vec::with_capacity(8);
    for variant in Variant::ALL {
        for asam in [true, false] {
            let mut cell = run.clone();
            cell.model.variant = variant;
            cell.optim.asam_enabled = asam;
            let model_cfg = resolve_model_config(&cell.model, &cell.pre, &train_samples)?;
            let outcome =
                train_processed(&cell, &model_cfg, &train_proc, &val_proc, stats.clone())?;
            rows.push(AblationRow {
                variant: variant.to_string(),
                asam,
                report: outcome.log.final_report,
            });
        }
    }
    Ok(rows)
}

/// CSV with header
/// `variant,asam,accuracy,precision_macro,recall_macro,f1_macro` plus
/// per-class `f1_class_<k>` columns.
pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let classes = rows
        .first()
        .map(|r| r.report.metrics.f1.len())
        .unwrap_or(0);
    let mut out = String::from("variant,asam,accuracy,precision_macro,recall_macro,f1_macro");
    for k in 0..classes {
        out.push_str(&format!(",f1_class_{k}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}",
            r.variant,
            r.asam,
            r.report.accuracy,
            r.report.metrics.macro_precision,
            r.report.metrics.macro_recall,
            r.report.metrics.macro_f1
        ));
        for v in &r.report.metrics.f1 {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
