//! End-to-end command-line flows, exercised in-process through
//! `cli::run`.

use actfuse::cli::run;
use std::collections::BTreeMap;
use std::path::Path;
use tempfile::TempDir;

fn argv(args: &[&str]) -> Vec<String> {
    std::iter::once("actfuse".to_string())
        .chain(args.iter().map(|s| s.to_string()))
        .collect()
}

/// Tiny synthetic spec shared by the flows below.
fn synth_args(out: &Path, seed: &str) -> Vec<String> {
    argv(&[
        "synth",
        "--mode",
        "xor",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        seed,
        "--set",
        "synth.subjects=2",
        "--set",
        "synth.samples_per_subject_per_class=4",
        "--set",
        "synth.joints=3",
        "--set",
        "synth.skeleton_hz=12",
        "--set",
        "synth.duration_s=1",
    ])
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn synth_is_byte_deterministic_across_reruns() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert_eq!(run(synth_args(a.path(), "9")), 0);
    assert_eq!(run(synth_args(b.path(), "9")), 0);
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert!(!fa.is_empty());
    assert_eq!(
        fa.keys().collect::<Vec<_>>(),
        fb.keys().collect::<Vec<_>>()
    );
    for (name, bytes) in &fa {
        assert_eq!(bytes, &fb[name], "file {name} differs between reruns");
    }
    // a different seed must change the data
    let c = TempDir::new().unwrap();
    assert_eq!(run(synth_args(c.path(), "10")), 0);
    let fc = dir_bytes(c.path());
    assert!(fa.iter().any(|(name, bytes)| fc.get(name) != Some(bytes)));
}

#[test]
fn train_on_missing_manifest_exits_one_without_artifacts() {
    let out = TempDir::new().unwrap();
    let target = out.path().join("run");
    let code = run(argv(&[
        "train",
        "--out",
        target.to_str().unwrap(),
        "--set",
        "data.train_manifest=/definitely/not/here.csv",
    ]));
    assert_eq!(code, 1);
    assert!(!target.exists(), "failure paths must not write artifacts");
}

#[test]
fn unknown_set_key_is_rejected() {
    let out = TempDir::new().unwrap();
    let code = run(argv(&[
        "train",
        "--out",
        out.path().to_str().unwrap(),
        "--set",
        "model.bogus=1",
    ]));
    assert_eq!(code, 1);
}

#[test]
fn unknown_flag_is_rejected() {
    let code = run(argv(&["train", "--definitely-not-a-flag"]));
    assert_eq!(code, 1);
}

fn tiny_train_args(data: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let manifest = data.join("train/manifest.csv");
    let val = data.join("val/manifest.csv");
    let mut args = vec![
        "train".to_string(),
        "--out".into(),
        out.to_str().unwrap().into(),
        "--seed".into(),
        "5".into(),
        "--set".into(),
        format!("data.train_manifest={}", manifest.display()),
        "--set".into(),
        format!("data.val_manifest={}", val.display()),
    ];
    for kv in [
        "train.epochs=1",
        "train.batch_size=4",
        "pre.target_frames=6",
        "pre.accel_tokens=6",
        "pre.window=3",
        "model.d_spatial=4",
        "model.d_model=8",
        "model.heads=2",
        "model.depth_spatial=1",
        "model.depth_temporal=1",
        "model.depth_accel=1",
        "model.classes=2",
    ]
    .iter()
    .chain(extra)
    {
        args.push("--set".into());
        args.push((*kv).into());
    }
    std::iter::once("actfuse".to_string()).chain(args).collect()
}

#[test]
fn train_then_evaluate_round_trip() {
    let data = TempDir::new().unwrap();
    assert_eq!(run(synth_args(data.path(), "5")), 0);

    let out = TempDir::new().unwrap();
    let code = run(tiny_train_args(data.path(), out.path(), &[]));
    assert_eq!(code, 0);
    for artifact in [
        "checkpoint.json",
        "checkpoint_best.json",
        "runlog.json",
        "resolved_config.txt",
    ] {
        assert!(out.path().join(artifact).exists(), "{artifact} missing");
    }
    // the resolved config is itself a loadable config
    let reloaded = actfuse::cli::load_config(
        Some(&out.path().join("resolved_config.txt")),
        &[],
        None,
    )
    .unwrap();
    assert_eq!(reloaded.seed, 5);
    assert_eq!(reloaded.epochs, 1);

    let eval_out = TempDir::new().unwrap();
    let code = run(argv(&[
        "evaluate",
        "--checkpoint",
        out.path().join("checkpoint_best.json").to_str().unwrap(),
        "--data",
        data.path().join("val/manifest.csv").to_str().unwrap(),
        "--out",
        eval_out.path().to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    assert!(eval_out.path().join("eval_report.json").exists());
    let confusion = std::fs::read_to_string(eval_out.path().join("confusion.csv")).unwrap();
    assert_eq!(confusion.lines().count(), 3); // header + 2 classes
}

#[test]
fn divergent_training_exits_two_with_last_good_checkpoint() {
    let data = TempDir::new().unwrap();
    assert_eq!(run(synth_args(data.path(), "6")), 0);
    let out = TempDir::new().unwrap();
    let code = run(tiny_train_args(
        data.path(),
        out.path(),
        &["optim.base_lr=1e12", "optim.asam=false", "train.epochs=3"],
    ));
    assert_eq!(code, 2);
    assert!(out.path().join("checkpoint_last_good.json").exists());
    assert!(out.path().join("runlog.json").exists());
}

#[test]
fn ablate_writes_eight_row_table() {
    let out = TempDir::new().unwrap();
    let mut args = vec![
        "ablate".to_string(),
        "--out".into(),
        out.path().to_str().unwrap().into(),
        "--seed".into(),
        "4".into(),
    ];
    for kv in [
        "data.synth_mode=xor",
        "synth.subjects=2",
        "synth.samples_per_subject_per_class=4",
        "synth.joints=3",
        "synth.skeleton_hz=12",
        "synth.duration_s=1",
        "train.epochs=1",
        "train.batch_size=4",
        "pre.target_frames=6",
        "pre.accel_tokens=6",
        "pre.window=3",
        "model.d_spatial=4",
        "model.d_model=8",
        "model.heads=2",
        "model.depth_spatial=1",
        "model.depth_temporal=1",
        "model.depth_accel=1",
    ] {
        args.push("--set".into());
        args.push(kv.into());
    }
    let argv: Vec<String> = std::iter::once("actfuse".to_string()).chain(args).collect();
    assert_eq!(run(argv), 0);
    let table = std::fs::read_to_string(out.path().join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 9, "header + 8 cells:\n{table}");
    assert!(table.starts_with("variant,asam,accuracy"));
}

#[test]
fn losocv_command_writes_per_fold_rows() {
    let out = TempDir::new().unwrap();
    let mut args = vec![
        "losocv".to_string(),
        "--out".into(),
        out.path().to_str().unwrap().into(),
        "--seed".into(),
        "4".into(),
    ];
    for kv in [
        "data.synth_mode=separable",
        "synth.classes=2",
        "synth.subjects=3",
        "synth.samples_per_subject_per_class=2",
        "synth.joints=3",
        "synth.skeleton_hz=12",
        "synth.duration_s=1",
        "model.variant=accel",
        "train.epochs=1",
        "train.batch_size=4",
        "pre.target_frames=6",
        "pre.accel_tokens=6",
        "pre.window=3",
        "model.d_spatial=4",
        "model.d_model=8",
        "model.heads=2",
        "model.depth_spatial=1",
        "model.depth_temporal=1",
        "model.depth_accel=1",
    ] {
        args.push("--set".into());
        args.push(kv.into());
    }
    let argv: Vec<String> = std::iter::once("actfuse".to_string()).chain(args).collect();
    assert_eq!(run(argv), 0);
    let table = std::fs::read_to_string(out.path().join("losocv.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 3 + 1, "header + 3 folds + mean:\n{table}");
}
