//! Training loop, evaluation harness, leave-one-subject-out validation and
//! the modality/optimizer ablation grid.

pub mod ablation;
pub mod losocv;
pub mod metrics;

pub use ablation::{ablation_suite, ablation_to_csv, AblationRow};
pub use losocv::{losocv, losocv_on_samples, losocv_to_csv, LosocvReport};
pub use metrics::{confusion_to_csv, evaluate, metrics, EvalReport, MetricSet};

use crate::dataio::{
    generate_synthetic, load_samples, preprocess_split, ActionSample, DatasetStats,
    PreprocessConfig, ProcessedSample, SynthConfig,
};
use crate::error::{Error, Result};
use crate::model::{batch_loss, loss_and_grads, ModelConfig, ModelParams};
use crate::numerics::{Rng, Tape, Tensor};
use crate::optim::{asam_step, cosine_lr, sgd_step, OptimConfig, OptimState};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::time::Instant;

const STREAM_SHUFFLE: u64 = 0x53485546; // "SHUF"
const STREAM_STEP: u64 = 0x53544550; // "STEP"

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// CSV manifests on disk; validation is optional.
    Manifest {
        train: PathBuf,
        #[serde(default)]
        val: Option<PathBuf>,
    },
    Synthetic(SynthConfig),
}

/// Full specification of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Architecture template; `joints`, `classes`, `frames` and
    /// `accel_tokens` are confirmed against the data and the preprocessing
    /// grid before training (see [`resolve_model_config`]).
    pub model: ModelConfig,
    /// `total_steps` is derived from the epoch budget at train time.
    pub optim: OptimConfig,
    pub pre: PreprocessConfig,
    pub data: DataSpec,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        self.model.validate()?;
        self.optim.validate()?;
        self.pre.validate()?;
        if let DataSpec::Synthetic(s) = &self.data {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub lr: f64,
    /// Wall-clock time; excluded from the determinism contract.
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    Completed,
    /// Training stopped before the budget: the loss or a gradient went
    /// non-finite. Parameters from the last completed step are retained.
    AbortedNonFinite { step: u64, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub variant: String,
    pub seed: u64,
    pub epochs: Vec<EpochStat>,
    pub steps: u64,
    pub grad_evals: u64,
    pub final_report: EvalReport,
    pub status: TrainStatus,
}

impl RunLog {
    /// JSON with wall-clock fields zeroed: the value that must be
    /// bit-identical across reruns of the same config and seed.
    pub fn canonical_json(&self) -> String {
        let mut clone = self.clone();
        for e in &mut clone.epochs {
            e.wall_ms = 0;
        }
        serde_json::to_string_pretty(&clone).expect("runlog serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("runlog serializes")
    }
}

pub struct TrainOutcome {
    pub log: RunLog,
    /// Resolved architecture actually trained.
    pub model_config: ModelConfig,
    /// Parameters after the last completed step.
    pub params: ModelParams,
    /// Parameters at the best validation accuracy (training accuracy when
    /// no validation split exists); ties keep the earliest epoch.
    pub best: ModelParams,
    pub best_epoch: usize,
    pub stats: DatasetStats,
    pub optim_state: OptimState,
}

/// Materialize the data specification into `(train, val)` sample lists.
pub fn load_data(spec: &DataSpec) -> Result<(Vec<ActionSample>, Vec<ActionSample>)> {
    match spec {
        DataSpec::Manifest { train, val } => {
            let train_samples = load_samples(train)?;
            if train_samples.is_empty() {
                return Err(Error::Data(format!(
                    "manifest {} references no samples",
                    train.display()
                )));
            }
            let val_samples = match val {
                Some(path) => load_samples(path)?,
                None => Vec::new(),
            };
            Ok((train_samples, val_samples))
        }
        DataSpec::Synthetic(cfg) => generate_synthetic(cfg),
    }
}

/// Confirm the architecture template against the observed data and the
/// preprocessing grid: token geometry comes from the preprocessing config,
/// joints and the class count from the samples.
pub fn resolve_model_config(
    template: &ModelConfig,
    pre: &PreprocessConfig,
    samples: &[ActionSample],
) -> Result<ModelConfig> {
    let mut cfg = template.clone();
    cfg.frames = pre.target_frames;
    cfg.accel_tokens = pre.accel_tokens;
    let joints = samples
        .first()
        .map(|s| s.skeleton.num_joints)
        .ok_or_else(|| Error::Data("no samples to train on".into()))?;
    if let Some(bad) = samples.iter().find(|s| s.skeleton.num_joints != joints) {
        return Err(Error::Data(format!(
            "sample {} has {} joints, dataset has {joints}",
            bad.id, bad.skeleton.num_joints
        )));
    }
    cfg.joints = joints;
    let max_label = samples.iter().map(|s| s.label).max().unwrap_or(0);
    if max_label + 1 > cfg.classes {
        cfg.classes = max_label + 1;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// No training-time statistic may come from outside the training subjects.
fn assert_stats_provenance(stats: &DatasetStats, train: &[ActionSample]) -> Result<()> {
    let subjects: BTreeSet<u32> = train.iter().map(|s| s.subject).collect();
    if stats.train_subjects != subjects {
        return Err(Error::Data(format!(
            "normalization statistics provenance {:?} does not match training subjects {:?}",
            stats.train_subjects, subjects
        )));
    }
    Ok(())
}

/// Train per the run configuration. Deterministic given the seed: batch
/// shuffles, dropout sites, fills and initialization all derive from it.
pub fn train(run: &RunConfig) -> Result<TrainOutcome> {
    run.validate()?;
    let (train_samples, val_samples) = load_data(&run.data)?;
    let model_cfg = resolve_model_config(&run.model, &run.pre, &train_samples)?;
    let mut pre = run.pre.clone();
    pre.seed = run.seed;
    let (train_proc, val_proc, stats) = preprocess_split(&train_samples, &val_samples, &pre)?;
    assert_stats_provenance(&stats, &train_samples)?;
    train_processed(run, &model_cfg, &train_proc, &val_proc, stats)
}

/// Core loop over already-preprocessed data.
pub fn train_processed(
    run: &RunConfig,
    model_cfg: &ModelConfig,
    train_proc: &[ProcessedSample],
    val_proc: &[ProcessedSample],
    stats: DatasetStats,
) -> Result<TrainOutcome> {
    let n = train_proc.len();
    if n == 0 {
        return Err(Error::Data("no training samples".into()));
    }
    let batches_per_epoch = n.div_ceil(run.batch_size);
    let mut optim = run.optim.clone();
    optim.total_steps = (run.epochs * batches_per_epoch).max(1);

    let mut params = ModelParams::init(model_cfg, run.seed)?;
    let mut state = OptimState::new(&params.set);
    let root = Rng::new(run.seed);

    let mut epochs = Vec::with_capacity(run.epochs);
    let mut grad_evals: u64 = 0;
    let mut status = TrainStatus::Completed;
    let mut best: Option<(f64, usize, ModelParams)> = None;
    // parameters from the last step whose loss and update stayed finite;
    // restored on numerical aborts
    let mut last_finite = params.clone();

    'outer: for epoch in 0..run.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        root.stream(&[STREAM_SHUFFLE, epoch as u64]).shuffle(&mut order);

        let lr_epoch = cosine_lr(state.step, &optim);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(run.batch_size) {
            let batch: Vec<&ProcessedSample> = chunk.iter().map(|&i| &train_proc[i]).collect();
            let step_rng = root.stream(&[STREAM_STEP, state.step as u64]);
            let lr = cosine_lr(state.step, &optim);

            let (config, layout) = (params.config.clone(), params.layout.clone());
            let mut closure = |ps: &crate::numerics::ParamSet| -> Result<(f64, Vec<Tensor>)> {
                grad_evals += 1;
                let view = ModelParams {
                    config: config.clone(),
                    set: ps.clone(),
                    layout: layout.clone(),
                };
                loss_and_grads(&view, &batch, &step_rng, true)
            };

            let stepped: Result<f64> = if optim.asam_enabled {
                asam_step(&mut params.set, &mut state, lr, &optim, &mut closure)
            } else {
                match closure(&params.set) {
                    Ok((loss, grads)) => {
                        sgd_step(&mut params.set, &grads, &mut state, lr, &optim).map(|_| loss)
                    }
                    Err(e) => Err(e),
                }
            };
            match stepped {
                Ok(loss) if params.set.assert_finite().is_ok() => {
                    loss_sum += loss * batch.len() as f64;
                    last_finite = params.clone();
                }
                Ok(_) => {
                    status = TrainStatus::AbortedNonFinite {
                        step: state.step as u64,
                        detail: "parameter update overflowed".into(),
                    };
                    params = last_finite.clone();
                    break 'outer;
                }
                Err(e) if e.exit_code() == 2 => {
                    status = TrainStatus::AbortedNonFinite {
                        step: state.step as u64,
                        detail: e.to_string(),
                    };
                    params = last_finite.clone();
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }

        let epoch_eval: Result<(EvalReport, Option<f64>)> = evaluate(&params, train_proc)
            .and_then(|tr| {
                if val_proc.is_empty() {
                    Ok((tr, None))
                } else {
                    Ok((tr, Some(evaluate(&params, val_proc)?.accuracy)))
                }
            });
        match epoch_eval {
            Ok((train_report, val_acc)) => {
                let selection = val_acc.unwrap_or(train_report.accuracy);
                if best.as_ref().is_none_or(|(acc, _, _)| selection > *acc) {
                    best = Some((selection, epoch, params.clone()));
                }
                epochs.push(EpochStat {
                    epoch,
                    train_loss: loss_sum / n as f64,
                    train_acc: train_report.accuracy,
                    val_acc,
                    lr: lr_epoch,
                    wall_ms: started.elapsed().as_millis() as u64,
                });
            }
            Err(e) if e.exit_code() == 2 => {
                status = TrainStatus::AbortedNonFinite {
                    step: state.step as u64,
                    detail: format!("evaluation overflowed: {e}"),
                };
                params = last_finite.clone();
                break 'outer;
            }
            Err(e) => return Err(e),
        }
    }

    let eval_set = if val_proc.is_empty() { train_proc } else { val_proc };
    let final_report = match evaluate(&params, eval_set) {
        Ok(r) => r,
        // a numerically aborted run may be unable to evaluate at all; the
        // status already marks the log as failed
        Err(e) if e.exit_code() == 2 && status != TrainStatus::Completed => {
            metrics::report_from_confusion(vec![vec![0; model_cfg.classes]; model_cfg.classes])
        }
        Err(e) => return Err(e),
    };
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params.clone()),
    };
    Ok(TrainOutcome {
        log: RunLog {
            variant: model_cfg.variant.to_string(),
            seed: run.seed,
            epochs,
            steps: state.step as u64,
            grad_evals,
            final_report,
            status,
        },
        model_config: model_cfg.clone(),
        params,
        best: best_params,
        best_epoch,
        stats,
        optim_state: state,
    })
}

/// Loss of one batch without stepping; test and diagnostic probe.
pub fn batch_loss_value(
    params: &ModelParams,
    batch: &[&ProcessedSample],
    rng: &Rng,
    training: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = batch_loss(&mut tape, params, batch, rng, training)?;
    Ok(tape.value(loss)[0])
}
