//! Command-line front end.
//!
//! Exit codes: 0 success, 1 configuration/data error, 2 numerical failure.
//! Artifacts are written atomically (temp file + rename) and only on
//! success, with one exception: a numerically aborted training run (exit
//! 2) still writes its last-good checkpoint, run log and resolved config.
//! Every successful run writes `resolved_config.txt`, the fully-resolved
//! flat configuration sufficient to reproduce it.

pub mod config;

pub use config::{load_config, to_flat};

use crate::dataio::csv::write_atomic;
use crate::dataio::{preprocess_split, write_samples};
use crate::error::{Error, Result};
use crate::harness::{
    ablation_suite, ablation_to_csv, confusion_to_csv, evaluate, load_data, losocv,
    losocv_to_csv, train, RunConfig, TrainStatus,
};
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "actfuse",
    version,
    about = "Multimodal transformer activity recognition: synthesis, preprocessing, training, evaluation",
    after_help = "Precedence: defaults < --config file < --set key=value < dedicated flags (--seed)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file (see the config module docs for keys)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed override (beats train.seed from the config)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Config override `section.key=value`; repeatable
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dual-modality dataset as manifest + CSV files
    Synth {
        /// Generator mode: separable | xor
        #[arg(long)]
        mode: Option<String>,
    },
    /// Load and preprocess a dataset; write statistics and token grids
    Preprocess,
    /// Train a model; write run log, checkpoints and resolved config
    Train,
    /// Evaluate a checkpoint on a manifest; write report and confusion CSV
    Evaluate {
        /// Checkpoint written by `train`
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest of the evaluation samples
        #[arg(long)]
        data: PathBuf,
    },
    /// Leave-one-subject-out cross validation over the pooled dataset
    Losocv,
    /// Train all four variants with ASAM on/off; write the comparison table
    Ablate,
}

/// Run the CLI; returns the process exit code.
pub fn run(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are success; anything else is a usage error
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let overrides: Vec<(String, String)> = cli
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))
        })
        .collect::<Result<_>>()?;
    let out = &cli.out;

    match cli.command {
        Command::Synth { mode } => {
            let mut overrides = overrides;
            if let Some(m) = mode {
                overrides.push(("data.synth_mode".into(), m));
            }
            let run_cfg = load_config(cli.config.as_deref(), &overrides, cli.seed)?;
            cmd_synth(&run_cfg, out)
        }
        Command::Preprocess => {
            let run_cfg = load_config(cli.config.as_deref(), &overrides, cli.seed)?;
            cmd_preprocess(&run_cfg, out)
        }
        Command::Train => {
            let run_cfg = load_config(cli.config.as_deref(), &overrides, cli.seed)?;
            cmd_train(&run_cfg, out)
        }
        Command::Evaluate { checkpoint, data } => cmd_evaluate(&checkpoint, &data, out),
        Command::Losocv => {
            let run_cfg = load_config(cli.config.as_deref(), &overrides, cli.seed)?;
            cmd_losocv(&run_cfg, out)
        }
        Command::Ablate => {
            let run_cfg = load_config(cli.config.as_deref(), &overrides, cli.seed)?;
            cmd_ablate(&run_cfg, out)
        }
    }
}

fn write_resolved_config(run: &RunConfig, out: &Path) -> Result<()> {
    write_atomic(&out.join("resolved_config.txt"), to_flat(run).as_bytes())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?;
    write_atomic(path, json.as_bytes())
}

fn cmd_synth(run: &RunConfig, out: &Path) -> Result<i32> {
    let spec = match &run.data {
        crate::harness::DataSpec::Synthetic(s) => s.clone(),
        _ => {
            return Err(Error::Config(
                "synth requires a synthetic data spec (data.synth_mode)".into(),
            ))
        }
    };
    let (train_samples, val_samples) = crate::dataio::generate_synthetic(&spec)?;
    let train_manifest = write_samples(&out.join("train"), &train_samples)?;
    println!(
        "wrote {} training samples: {}",
        train_samples.len(),
        train_manifest.display()
    );
    if !val_samples.is_empty() {
        let val_manifest = write_samples(&out.join("val"), &val_samples)?;
        println!(
            "wrote {} validation samples: {}",
            val_samples.len(),
            val_manifest.display()
        );
    }
    write_resolved_config(run, out)?;
    Ok(0)
}

fn cmd_preprocess(run: &RunConfig, out: &Path) -> Result<i32> {
    let (train_samples, val_samples) = load_data(&run.data)?;
    let mut pre = run.pre.clone();
    pre.seed = run.seed;
    let (train_proc, val_proc, stats) = preprocess_split(&train_samples, &val_samples, &pre)?;
    write_json(&out.join("stats.json"), &stats)?;
    write_json(&out.join("processed_train.json"), &train_proc)?;
    if !val_proc.is_empty() {
        write_json(&out.join("processed_val.json"), &val_proc)?;
    }
    write_resolved_config(run, out)?;
    println!(
        "preprocessed {} train / {} val samples into {}",
        train_proc.len(),
        val_proc.len(),
        out.display()
    );
    Ok(0)
}

fn cmd_train(run: &RunConfig, out: &Path) -> Result<i32> {
    let outcome = train(run)?;
    let aborted = !matches!(outcome.log.status, TrainStatus::Completed);

    let mut ckpt = Checkpoint::from_params(&outcome.params, run.seed, outcome.log.steps);
    ckpt.preprocess = Some(run.pre.clone());
    ckpt.stats = Some(outcome.stats.clone());
    let ckpt_name = if aborted {
        "checkpoint_last_good.json"
    } else {
        "checkpoint.json"
    };
    save_checkpoint(&out.join(ckpt_name), &ckpt)?;

    if !aborted {
        let mut best = Checkpoint::from_params(&outcome.best, run.seed, outcome.log.steps);
        best.preprocess = Some(run.pre.clone());
        best.stats = Some(outcome.stats.clone());
        save_checkpoint(&out.join("checkpoint_best.json"), &best)?;
    }
    write_atomic(&out.join("runlog.json"), outcome.log.to_json().as_bytes())?;
    write_resolved_config(run, out)?;

    if aborted {
        eprintln!(
            "training aborted: {:?}; last good checkpoint at {}",
            outcome.log.status,
            out.join(ckpt_name).display()
        );
        return Ok(2);
    }
    println!(
        "trained {} for {} epochs; final accuracy {:.4} (best epoch {}) -> {}",
        outcome.log.variant,
        outcome.log.epochs.len(),
        outcome.log.final_report.accuracy,
        outcome.best_epoch,
        out.display()
    );
    Ok(0)
}

fn cmd_evaluate(checkpoint: &Path, data: &Path, out: &Path) -> Result<i32> {
    let ckpt = load_checkpoint(checkpoint)?;
    let params = ckpt.to_params()?;
    let stats = ckpt.stats.clone().ok_or_else(|| {
        Error::Config("checkpoint lacks preprocessing statistics; re-train to regenerate".into())
    })?;
    let mut pre = ckpt
        .preprocess
        .clone()
        .ok_or_else(|| Error::Config("checkpoint lacks a preprocessing config".into()))?;
    pre.seed = ckpt.seed;

    let samples = crate::dataio::load_samples(data)?;
    if samples.is_empty() {
        return Err(Error::Data(format!(
            "manifest {} references no samples",
            data.display()
        )));
    }
    let proc = crate::dataio::preprocess_eval(&samples, &pre, &stats)?;
    let report = evaluate(&params, &proc)?;
    write_json(&out.join("eval_report.json"), &report)?;
    write_atomic(
        &out.join("confusion.csv"),
        confusion_to_csv(&report.confusion).as_bytes(),
    )?;
    println!(
        "evaluated {} samples: accuracy {:.4}, macro F1 {:.4} -> {}",
        report.samples,
        report.accuracy,
        report.metrics.macro_f1,
        out.display()
    );
    Ok(0)
}

fn cmd_losocv(run: &RunConfig, out: &Path) -> Result<i32> {
    let report = losocv(run)?;
    write_atomic(&out.join("losocv.csv"), losocv_to_csv(&report).as_bytes())?;
    write_resolved_config(run, out)?;
    println!(
        "{} folds; mean accuracy {:.4}, mean macro F1 {:.4} -> {}",
        report.folds.len(),
        report.mean_accuracy,
        report.mean_f1,
        out.display()
    );
    Ok(0)
}

fn cmd_ablate(run: &RunConfig, out: &Path) -> Result<i32> {
    let rows = ablation_suite(run)?;
    write_atomic(&out.join("ablation.csv"), ablation_to_csv(&rows).as_bytes())?;
    write_resolved_config(run, out)?;
    for row in &rows {
        println!(
            "{:<18} asam={:<5} accuracy {:.4} macro-F1 {:.4}",
            row.variant, row.asam, row.report.accuracy, row.report.metrics.macro_f1
        );
    }
    println!("comparison table -> {}", out.join("ablation.csv").display());
    Ok(0)
}
