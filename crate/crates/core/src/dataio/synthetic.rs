//! Synthetic dual-modality datasets.
//!
//! Two generator modes:
//!
//! - `separable`: each class owns a distinct skeleton motion template and a
//!   distinct acceleration template; samples are templates plus Gaussian
//!   noise, so either modality alone identifies the class.
//! - `xor`: two skeleton templates (bit `s`) and two acceleration templates
//!   (bit `a`); the label is `s XOR a`. Quadrants are emitted in equal
//!   counts, so either modality alone carries zero label information while
//!   the pair determines the label exactly.
//!
//! Templates are subject-independent; subjects only tag samples (which is
//! what leave-one-subject-out validation needs). Rates mimic the multirate
//! regime of the target sensors: skeleton frame rate far above the
//! acceleration rate.

use crate::dataio::{AccelerationSequence, ActionSample, SkeletonSequence};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthMode {
    Separable,
    Xor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub mode: SynthMode,
    /// Class count; `xor` mode requires exactly 2.
    pub classes: usize,
    pub subjects: usize,
    /// Samples generated per subject per class (train + val together).
    pub samples_per_subject_per_class: usize,
    /// Fraction of each stratum routed to the validation list.
    pub val_fraction: f64,
    pub joints: usize,
    pub skeleton_hz: f64,
    pub accel_hz: f64,
    pub duration_s: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            mode: SynthMode::Separable,
            classes: 6,
            subjects: 8,
            samples_per_subject_per_class: 6,
            val_fraction: 0.25,
            joints: 8,
            skeleton_hz: 100.0,
            accel_hz: 4.0,
            duration_s: 3.0,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == SynthMode::Xor && self.classes != 2 {
            return Err(Error::Config(
                "synth.classes must be 2 in xor mode (two pattern bits)".into(),
            ));
        }
        if self.classes == 0 || self.subjects == 0 || self.samples_per_subject_per_class == 0 {
            return Err(Error::Config(
                "synth.classes, synth.subjects and synth.samples_per_subject_per_class must be positive".into(),
            ));
        }
        if self.mode == SynthMode::Xor && !self.samples_per_subject_per_class.is_multiple_of(2) {
            return Err(Error::Config(
                "xor mode needs an even samples_per_subject_per_class so quadrants balance".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("synth.val_fraction must be in [0, 1)".into()));
        }
        if self.joints == 0 || self.skeleton_hz <= 0.0 || self.accel_hz <= 0.0 || self.duration_s <= 0.0 {
            return Err(Error::Config("synth geometry fields must be positive".into()));
        }
        Ok(())
    }

    fn skeleton_frames(&self) -> usize {
        ((self.skeleton_hz * self.duration_s).round() as usize).max(2)
    }

    fn accel_points(&self) -> usize {
        ((self.accel_hz * self.duration_s).round() as usize).max(2)
    }
}

/// Per-sample generation record, exposed so tests can verify the xor
/// construction without re-deriving pattern bits from raw signals.
#[derive(Debug, Clone, Copy)]
pub struct SampleMeta {
    pub subject: u32,
    pub label: usize,
    pub skeleton_pattern: usize,
    pub accel_pattern: usize,
    pub validation: bool,
}

/// Generate `(train, val)` sample lists.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Vec<ActionSample>, Vec<ActionSample>)> {
    let (train, val, _) = generate_with_meta(cfg)?;
    Ok((train, val))
}

/// Like [`generate_synthetic`] but also returns generation metadata for
/// every emitted sample (train entries first, then val).
pub fn generate_with_meta(
    cfg: &SynthConfig,
) -> Result<(Vec<ActionSample>, Vec<ActionSample>, Vec<SampleMeta>)> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    // xor mode: one template per modality, the two pattern bits are its
    // mirror images (maximally contrastive while keeping the marginals
    // balanced); separable mode: an independent template per class
    let (skel_templates, accel_templates): (Vec<MotionTemplate>, Vec<TrackTemplate>) =
        match cfg.mode {
            SynthMode::Separable => (
                (0..cfg.classes)
                    .map(|p| MotionTemplate::draw(cfg.joints, &mut root.stream(&[1, p as u64])))
                    .collect(),
                (0..cfg.classes)
                    .map(|p| TrackTemplate::draw(&mut root.stream(&[2, p as u64])))
                    .collect(),
            ),
            SynthMode::Xor => {
                let skel = MotionTemplate::draw(cfg.joints, &mut root.stream(&[1, 0]));
                let accel = TrackTemplate::draw(&mut root.stream(&[2, 0]));
                (
                    vec![skel.mirrored(false), skel.mirrored(true)],
                    vec![accel.mirrored(false), accel.mirrored(true)],
                )
            }
        };

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut meta = Vec::new();
    // Proportional split per balance stratum (quadrant in xor mode, class
    // otherwise), so both splits keep the constructions exact: the i-th
    // member of a stratum goes to validation when the running quota
    // floor((i+1) * frac) advances.
    let strata = match cfg.mode {
        SynthMode::Separable => cfg.classes,
        SynthMode::Xor => 4,
    };
    let mut seen = vec![0usize; strata];

    for subject in 0..cfg.subjects {
        for class in 0..cfg.classes {
            for rep in 0..cfg.samples_per_subject_per_class {
                let (skel_bit, accel_bit, label, stratum) = match cfg.mode {
                    SynthMode::Separable => (class, class, class, class),
                    SynthMode::Xor => {
                        // label = s ^ a equals the stratum class
                        let s = rep % 2;
                        let a = s ^ class;
                        (s, a, class, s * 2 + a)
                    }
                };
                let mut rng = root.stream(&[3, subject as u64, class as u64, rep as u64]);
                let sample = emit_sample(
                    cfg,
                    &skel_templates[skel_bit],
                    &accel_templates[accel_bit],
                    subject as u32,
                    label,
                    &format!("s{subject}c{class}r{rep}"),
                    &mut rng,
                );
                let i = seen[stratum];
                seen[stratum] += 1;
                let to_val = ((i + 1) as f64 * cfg.val_fraction).floor()
                    > (i as f64 * cfg.val_fraction).floor();
                meta.push(SampleMeta {
                    subject: subject as u32,
                    label,
                    skeleton_pattern: skel_bit,
                    accel_pattern: accel_bit,
                    validation: to_val,
                });
                if to_val {
                    val.push(sample);
                } else {
                    train.push(sample);
                }
            }
        }
    }
    // train-first ordering for the returned metadata
    meta.sort_by_key(|m| m.validation);
    Ok((train, val, meta))
}

/// Smooth per-joint trajectories: two low-frequency sinusoids per axis.
struct MotionTemplate {
    // per joint, per axis: (amplitude1, freq1, phase1, amplitude2, freq2, phase2, offset)
    coeffs: Vec<[[f64; 7]; 3]>,
}

impl MotionTemplate {
    fn draw(joints: usize, rng: &mut Rng) -> Self {
        let coeffs = (0..joints)
            .map(|_| {
                let mut per_axis = [[0.0; 7]; 3];
                for axis in per_axis.iter_mut() {
                    *axis = [
                        0.3 + 0.7 * rng.next_f64(),
                        0.25 + 0.75 * rng.next_f64(),
                        std::f64::consts::TAU * rng.next_f64(),
                        0.1 + 0.3 * rng.next_f64(),
                        1.0 + 1.0 * rng.next_f64(),
                        std::f64::consts::TAU * rng.next_f64(),
                        rng.normal() * 0.5,
                    ];
                }
                per_axis
            })
            .collect();
        MotionTemplate { coeffs }
    }

    fn eval(&self, joint: usize, axis: usize, t: f64) -> f64 {
        let [a1, f1, p1, a2, f2, p2, off] = self.coeffs[joint][axis];
        off + a1 * (std::f64::consts::TAU * f1 * t + p1).sin()
            + a2 * (std::f64::consts::TAU * f2 * t + p2).sin()
    }

    fn mirrored(&self, flip: bool) -> Self {
        let sign = if flip { -1.0 } else { 1.0 };
        let coeffs = self
            .coeffs
            .iter()
            .map(|per_axis| {
                let mut m = *per_axis;
                for axis in m.iter_mut() {
                    axis[0] *= sign;
                    axis[3] *= sign;
                    axis[6] *= sign;
                }
                m
            })
            .collect();
        MotionTemplate { coeffs }
    }
}

/// Smooth triaxial acceleration profile: one low-frequency sinusoid plus
/// offset per axis (low frequency so moving-average denoising keeps it).
struct TrackTemplate {
    coeffs: [[f64; 4]; 3], // amplitude, freq, phase, offset
}

impl TrackTemplate {
    fn draw(rng: &mut Rng) -> Self {
        let mut coeffs = [[0.0; 4]; 3];
        for axis in coeffs.iter_mut() {
            *axis = [
                0.5 + 1.0 * rng.next_f64(),
                0.15 + 0.35 * rng.next_f64(),
                std::f64::consts::TAU * rng.next_f64(),
                rng.normal(),
            ];
        }
        TrackTemplate { coeffs }
    }

    fn eval(&self, axis: usize, t: f64) -> f64 {
        let [a, f, p, off] = self.coeffs[axis];
        off + a * (std::f64::consts::TAU * f * t + p).sin()
    }

    fn mirrored(&self, flip: bool) -> Self {
        let sign = if flip { -1.0 } else { 1.0 };
        let mut coeffs = self.coeffs;
        for axis in coeffs.iter_mut() {
            axis[0] *= sign;
            axis[3] *= sign;
        }
        TrackTemplate { coeffs }
    }
}

fn emit_sample(
    cfg: &SynthConfig,
    skel: &MotionTemplate,
    accel: &TrackTemplate,
    subject: u32,
    label: usize,
    id: &str,
    rng: &mut Rng,
) -> ActionSample {
    let frames_n = cfg.skeleton_frames();
    let mut frames = Vec::with_capacity(frames_n * cfg.joints);
    for f in 0..frames_n {
        let t = f as f64 / cfg.skeleton_hz;
        for q in 0..cfg.joints {
            frames.push([
                skel.eval(q, 0, t) + rng.normal() * cfg.noise,
                skel.eval(q, 1, t) + rng.normal() * cfg.noise,
                skel.eval(q, 2, t) + rng.normal() * cfg.noise,
            ]);
        }
    }
    let skeleton = SkeletonSequence::new(
        frames,
        frames_n,
        cfg.joints,
        cfg.skeleton_hz,
        vec![true; cfg.joints],
    )
    .expect("generated dims are consistent");

    let points_n = cfg.accel_points();
    let timestamps: Vec<f64> = (0..points_n).map(|i| i as f64 / cfg.accel_hz).collect();
    let values: Vec<[f64; 3]> = timestamps
        .iter()
        .map(|&t| {
            [
                accel.eval(0, t) + rng.normal() * cfg.noise,
                accel.eval(1, t) + rng.normal() * cfg.noise,
                accel.eval(2, t) + rng.normal() * cfg.noise,
            ]
        })
        .collect();
    let acceleration = AccelerationSequence::new(timestamps, values, cfg.accel_hz)
        .expect("generated timestamps increase");

    ActionSample {
        id: id.to_string(),
        skeleton,
        acceleration,
        label,
        subject,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counting_example() {
        let cfg = SynthConfig {
            classes: 6,
            subjects: 8,
            samples_per_subject_per_class: 6,
            val_fraction: 0.0,
            ..SynthConfig::default()
        };
        let (train, val) = generate_synthetic(&cfg).unwrap();
        assert_eq!(train.len() + val.len(), 288);
        assert!(val.is_empty());
        for c in 0..6 {
            assert_eq!(train.iter().filter(|s| s.label == c).count(), 48);
        }
    }

    #[test]
    fn xor_marginals_carry_no_label_information() {
        let cfg = SynthConfig {
            mode: SynthMode::Xor,
            classes: 2,
            subjects: 8,
            samples_per_subject_per_class: 20,
            val_fraction: 0.25,
            ..SynthConfig::default()
        };
        let (train, val, meta) = generate_with_meta(&cfg).unwrap();
        assert_eq!(train.len(), 240);
        assert_eq!(val.len(), 80);
        // joint counts over (skeleton bit, label): exactly balanced in both
        // splits, so I(label; skeleton bit) = 0 by construction; same for
        // the acceleration bit.
        for part in [false, true] {
            let mut counts = [[0usize; 2]; 2];
            let mut accel_counts = [[0usize; 2]; 2];
            for m in meta.iter().filter(|m| m.validation == part) {
                counts[m.skeleton_pattern][m.label] += 1;
                accel_counts[m.accel_pattern][m.label] += 1;
            }
            for bit in 0..2 {
                assert_eq!(counts[bit][0], counts[bit][1], "split {part} skel bit {bit}");
                assert_eq!(
                    accel_counts[bit][0], accel_counts[bit][1],
                    "split {part} accel bit {bit}"
                );
            }
        }
        // and xor determines the label exactly
        for m in &meta {
            assert_eq!(m.label, m.skeleton_pattern ^ m.accel_pattern);
        }
    }

    #[test]
    fn zero_noise_separable_classified_by_nearest_exemplar() {
        let cfg = SynthConfig {
            classes: 4,
            subjects: 3,
            samples_per_subject_per_class: 3,
            val_fraction: 0.0,
            noise: 0.0,
            skeleton_hz: 20.0,
            duration_s: 1.0,
            ..SynthConfig::default()
        };
        let (train, _) = generate_synthetic(&cfg).unwrap();
        // nearest-exemplar oracle: first sample of each class is the anchor
        let mut anchors: Vec<&ActionSample> = Vec::new();
        for c in 0..4 {
            anchors.push(train.iter().find(|s| s.label == c).unwrap());
        }
        let skel_dist = |a: &ActionSample, b: &ActionSample| -> f64 {
            a.skeleton
                .frames
                .iter()
                .zip(&b.skeleton.frames)
                .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
                .sum()
        };
        let accel_dist = |a: &ActionSample, b: &ActionSample| -> f64 {
            a.acceleration
                .values
                .iter()
                .zip(&b.acceleration.values)
                .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
                .sum()
        };
        for s in &train {
            let by_skel = (0..4)
                .min_by(|&a, &b| {
                    skel_dist(s, anchors[a])
                        .partial_cmp(&skel_dist(s, anchors[b]))
                        .unwrap()
                })
                .unwrap();
            let by_accel = (0..4)
                .min_by(|&a, &b| {
                    accel_dist(s, anchors[a])
                        .partial_cmp(&accel_dist(s, anchors[b]))
                        .unwrap()
                })
                .unwrap();
            assert_eq!(by_skel, s.label);
            assert_eq!(by_accel, s.label);
        }
    }

    #[test]
    fn same_seed_reproduces_samples() {
        let cfg = SynthConfig {
            subjects: 2,
            samples_per_subject_per_class: 2,
            classes: 2,
            skeleton_hz: 10.0,
            duration_s: 1.0,
            ..SynthConfig::default()
        };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn xor_requires_two_classes() {
        let cfg = SynthConfig {
            mode: SynthMode::Xor,
            classes: 3,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn multirate_regime_preserved() {
        let cfg = SynthConfig::default();
        let (train, _) = generate_synthetic(&cfg).unwrap();
        let s = &train[0];
        assert_eq!(s.skeleton.num_frames, 300); // 100 Hz * 3 s
        assert_eq!(s.acceleration.len(), 12); // 4 Hz * 3 s
    }
}
