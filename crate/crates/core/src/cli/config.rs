//! Flat `key = value` run configuration.
//!
//! One key per line, `#` comments, blank lines ignored. Section-prefixed
//! keys; unknown keys are errors. Defaults follow the published training
//! table: the variant decides learning rate and drop profile
//! (single-modality 0.02 / drops 0, simple fusion 0.0025 / drop 0.05 /
//! attn 0.05, crossview 0.0025 / drops 0), stochastic depth 0.2, weight
//! decay 5e-4, ASAM rho 0.5 on a cosine schedule to 0.
//!
//! Keys (defaults in parentheses):
//!
//! ```text
//! model.variant            (crossview_fusion)  skeleton|accel|simple_fusion|crossview_fusion
//! model.joints             (29)     confirmed against the data at train time
//! model.classes            (6)      grown if the data has more labels
//! model.d_spatial          (16)
//! model.d_model            (64)
//! model.heads              (4)
//! model.depth_spatial      (2)
//! model.depth_temporal     (3)
//! model.depth_accel        (3)
//! model.mlp_ratio          (2)
//! model.drop               (variant row)
//! model.attn_drop          (variant row)
//! model.stochastic_depth   (0.2)
//! optim.base_lr            (variant row)
//! optim.weight_decay       (5e-4)
//! optim.momentum           (0.9)
//! optim.asam               (true)
//! optim.asam_rho           (0.5)
//! optim.min_lr             (0)
//! pre.target_frames        (120)    skeleton frames F; also model input geometry
//! pre.accel_tokens         (120)    acceleration tokens N_a
//! pre.window               (40)     moving-average window
//! pre.root_joint           (0)
//! pre.normalize            (standard) standard|off
//! train.batch_size         (16)
//! train.epochs             (30)
//! train.seed               (42)     --seed flag takes precedence
//! data.train_manifest      (unset)  path; relative to the config file
//! data.val_manifest        (unset)
//! data.synth_mode          (separable when no manifest) separable|xor
//! synth.classes            (6)
//! synth.subjects           (8)
//! synth.samples_per_subject_per_class (6)
//! synth.val_fraction       (0.25)
//! synth.joints             (8)
//! synth.skeleton_hz        (100)
//! synth.accel_hz           (4)
//! synth.duration_s         (3)
//! synth.noise              (0.05)
//! ```
//!
//! Precedence: defaults, then the config file, then repeated `--set
//! key=value` flags, then dedicated flags (`--seed`).

use crate::dataio::{NormalizeMode, PreprocessConfig, SynthConfig, SynthMode};
use crate::error::{Error, Result};
use crate::harness::{DataSpec, RunConfig};
use crate::model::{ModelConfig, Variant};
use crate::optim::OptimConfig;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const KNOWN_KEYS: &[&str] = &[
    "model.variant",
    "model.joints",
    "model.classes",
    "model.d_spatial",
    "model.d_model",
    "model.heads",
    "model.depth_spatial",
    "model.depth_temporal",
    "model.depth_accel",
    "model.mlp_ratio",
    "model.drop",
    "model.attn_drop",
    "model.stochastic_depth",
    "optim.base_lr",
    "optim.weight_decay",
    "optim.momentum",
    "optim.asam",
    "optim.asam_rho",
    "optim.min_lr",
    "pre.target_frames",
    "pre.accel_tokens",
    "pre.window",
    "pre.root_joint",
    "pre.normalize",
    "train.batch_size",
    "train.epochs",
    "train.seed",
    "data.train_manifest",
    "data.val_manifest",
    "data.synth_mode",
    "synth.classes",
    "synth.subjects",
    "synth.samples_per_subject_per_class",
    "synth.val_fraction",
    "synth.joints",
    "synth.skeleton_hz",
    "synth.accel_hz",
    "synth.duration_s",
    "synth.noise",
    "synth.seed",
];

type KvMap = BTreeMap<String, String>;

/// Parse `key = value` text; unknown keys and malformed lines are errors
/// naming the line.
pub fn parse_config_text(text: &str, file: &Path) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            file: file.to_path_buf(),
            line: i + 1,
            msg: format!("expected `key = value`, found `{line}`"),
        })?;
        let key = key.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(Error::Parse {
                file: file.to_path_buf(),
                line: i + 1,
                msg: format!("unknown key `{key}`"),
            });
        }
        map.insert(key.to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(map: &KvMap, key: &str, default: T) -> Result<T> {
    match map.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Config(format!("cannot parse {key} from `{raw}`"))),
    }
}

fn get_bool(map: &KvMap, key: &str, default: bool) -> Result<bool> {
    match map.get(key).map(String::as_str) {
        None => Ok(default),
        Some("true") | Some("on") | Some("1") => Ok(true),
        Some("false") | Some("off") | Some("0") => Ok(false),
        Some(raw) => Err(Error::Config(format!(
            "cannot parse {key} from `{raw}` (use true/false)"
        ))),
    }
}

/// Build the fully-resolved run configuration from a parsed map.
/// Relative manifest paths resolve against `base_dir`.
pub fn build_run_config(map: &KvMap, base_dir: &Path) -> Result<RunConfig> {
    let variant: Variant = match map.get("model.variant") {
        Some(raw) => raw.parse()?,
        None => Variant::CrossViewFusion,
    };
    let table = ModelConfig::defaults(variant);
    let pre = PreprocessConfig {
        target_frames: get(map, "pre.target_frames", 120)?,
        accel_tokens: get(map, "pre.accel_tokens", 120)?,
        window: get(map, "pre.window", 40)?,
        root_joint: get(map, "pre.root_joint", 0)?,
        mode: match map.get("pre.normalize").map(String::as_str) {
            None | Some("standard") => NormalizeMode::Standard,
            Some("off") => NormalizeMode::Off,
            Some(raw) => {
                return Err(Error::Config(format!(
                    "cannot parse pre.normalize from `{raw}` (use standard|off)"
                )))
            }
        },
        seed: 0, // tied to train.seed at train time
    };
    let seed = get(map, "train.seed", 42u64)?;

    let model = ModelConfig {
        variant,
        joints: get(map, "model.joints", table.joints)?,
        frames: pre.target_frames,
        accel_tokens: pre.accel_tokens,
        classes: get(map, "model.classes", table.classes)?,
        d_spatial: get(map, "model.d_spatial", table.d_spatial)?,
        d_model: get(map, "model.d_model", table.d_model)?,
        heads: get(map, "model.heads", table.heads)?,
        depth_spatial: get(map, "model.depth_spatial", table.depth_spatial)?,
        depth_temporal: get(map, "model.depth_temporal", table.depth_temporal)?,
        depth_accel: get(map, "model.depth_accel", table.depth_accel)?,
        mlp_ratio: get(map, "model.mlp_ratio", table.mlp_ratio)?,
        drop: get(map, "model.drop", table.drop)?,
        attn_drop: get(map, "model.attn_drop", table.attn_drop)?,
        stochastic_depth: get(map, "model.stochastic_depth", table.stochastic_depth)?,
    };

    let optim_table = OptimConfig::defaults(variant.is_fusion());
    let optim = OptimConfig {
        base_lr: get(map, "optim.base_lr", optim_table.base_lr)?,
        weight_decay: get(map, "optim.weight_decay", optim_table.weight_decay)?,
        momentum: get(map, "optim.momentum", optim_table.momentum)?,
        asam_rho: get(map, "optim.asam_rho", optim_table.asam_rho)?,
        asam_enabled: get_bool(map, "optim.asam", optim_table.asam_enabled)?,
        total_steps: 1,
        min_lr: get(map, "optim.min_lr", optim_table.min_lr)?,
    };

    let data = match (map.get("data.train_manifest"), map.get("data.synth_mode")) {
        (Some(_), Some(_)) => {
            return Err(Error::Config(
                "set either data.train_manifest or data.synth_mode, not both".into(),
            ))
        }
        (Some(train), None) => DataSpec::Manifest {
            train: base_dir.join(train),
            val: map
                .get("data.val_manifest")
                .map(|v| base_dir.join(v)),
        },
        (None, mode) => {
            let mode = match mode.map(String::as_str) {
                None | Some("separable") => SynthMode::Separable,
                Some("xor") => SynthMode::Xor,
                Some(raw) => {
                    return Err(Error::Config(format!(
                        "cannot parse data.synth_mode from `{raw}` (use separable|xor)"
                    )))
                }
            };
            let default_classes = if mode == SynthMode::Xor { 2 } else { 6 };
            DataSpec::Synthetic(SynthConfig {
                mode,
                classes: get(map, "synth.classes", default_classes)?,
                subjects: get(map, "synth.subjects", 8)?,
                samples_per_subject_per_class: get(
                    map,
                    "synth.samples_per_subject_per_class",
                    6,
                )?,
                val_fraction: get(map, "synth.val_fraction", 0.25)?,
                joints: get(map, "synth.joints", 8)?,
                skeleton_hz: get(map, "synth.skeleton_hz", 100.0)?,
                accel_hz: get(map, "synth.accel_hz", 4.0)?,
                duration_s: get(map, "synth.duration_s", 3.0)?,
                noise: get(map, "synth.noise", 0.05)?,
                seed: get(map, "synth.seed", seed)?,
            })
        }
    };

    let run = RunConfig {
        model,
        optim,
        pre,
        data,
        batch_size: get(map, "train.batch_size", 16)?,
        epochs: get(map, "train.epochs", 30)?,
        seed,
    };
    run.validate()?;
    Ok(run)
}

/// Load a config file (or all defaults when `path` is `None`), then apply
/// `key=value` overrides and the optional seed flag.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
    seed_flag: Option<u64>,
) -> Result<RunConfig> {
    let (mut map, base_dir) = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let dir = p.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
            (parse_config_text(&text, p)?, dir)
        }
        None => (KvMap::new(), PathBuf::from(".")),
    };
    for (key, value) in overrides {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown key `{key}` in --set")));
        }
        map.insert(key.clone(), value.clone());
    }
    if let Some(seed) = seed_flag {
        map.insert("train.seed".into(), seed.to_string());
    }
    build_run_config(&map, &base_dir)
}

/// Render a resolved configuration back to the flat format; parsing the
/// result reproduces the run exactly.
pub fn to_flat(run: &RunConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("model.variant", run.model.variant.to_string());
    kv("model.joints", run.model.joints.to_string());
    kv("model.classes", run.model.classes.to_string());
    kv("model.d_spatial", run.model.d_spatial.to_string());
    kv("model.d_model", run.model.d_model.to_string());
    kv("model.heads", run.model.heads.to_string());
    kv("model.depth_spatial", run.model.depth_spatial.to_string());
    kv("model.depth_temporal", run.model.depth_temporal.to_string());
    kv("model.depth_accel", run.model.depth_accel.to_string());
    kv("model.mlp_ratio", run.model.mlp_ratio.to_string());
    kv("model.drop", run.model.drop.to_string());
    kv("model.attn_drop", run.model.attn_drop.to_string());
    kv(
        "model.stochastic_depth",
        run.model.stochastic_depth.to_string(),
    );
    kv("optim.base_lr", run.optim.base_lr.to_string());
    kv("optim.weight_decay", run.optim.weight_decay.to_string());
    kv("optim.momentum", run.optim.momentum.to_string());
    kv("optim.asam", run.optim.asam_enabled.to_string());
    kv("optim.asam_rho", run.optim.asam_rho.to_string());
    kv("optim.min_lr", run.optim.min_lr.to_string());
    kv("pre.target_frames", run.pre.target_frames.to_string());
    kv("pre.accel_tokens", run.pre.accel_tokens.to_string());
    kv("pre.window", run.pre.window.to_string());
    kv("pre.root_joint", run.pre.root_joint.to_string());
    kv(
        "pre.normalize",
        match run.pre.mode {
            NormalizeMode::Standard => "standard".to_string(),
            NormalizeMode::Off => "off".to_string(),
        },
    );
    kv("train.batch_size", run.batch_size.to_string());
    kv("train.epochs", run.epochs.to_string());
    kv("train.seed", run.seed.to_string());
    match &run.data {
        DataSpec::Manifest { train, val } => {
            kv("data.train_manifest", train.display().to_string());
            if let Some(v) = val {
                kv("data.val_manifest", v.display().to_string());
            }
        }
        DataSpec::Synthetic(s) => {
            kv(
                "data.synth_mode",
                match s.mode {
                    SynthMode::Separable => "separable".to_string(),
                    SynthMode::Xor => "xor".to_string(),
                },
            );
            kv("synth.classes", s.classes.to_string());
            kv("synth.subjects", s.subjects.to_string());
            kv(
                "synth.samples_per_subject_per_class",
                s.samples_per_subject_per_class.to_string(),
            );
            kv("synth.val_fraction", s.val_fraction.to_string());
            kv("synth.joints", s.joints.to_string());
            kv("synth.skeleton_hz", s.skeleton_hz.to_string());
            kv("synth.accel_hz", s.accel_hz.to_string());
            kv("synth.duration_s", s.duration_s.to_string());
            kv("synth.noise", s.noise.to_string());
            kv("synth.seed", s.seed.to_string());
        }
    }
    out
}
