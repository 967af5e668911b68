//! Dual-modality action samples: loading, validation, multirate
//! preprocessing and synthesis.
//!
//! The acceleration pipeline order is fixed: linear interpolation onto a
//! uniform token grid, moving-average denoising, class-mean fill for
//! entirely missing streams, then normalization with training-split
//! statistics. Skeleton sequences are resampled to a fixed frame count and
//! root-centered.

pub mod csv;
pub mod preprocess;
pub mod synthetic;

pub use csv::{load_samples, write_samples};
pub use preprocess::{
    fill_missing, interpolate_linear, moving_average, normalize, preprocess_eval,
    preprocess_split, resample_frames, DatasetStats, NormalizeMode, PreprocessConfig,
};
pub use synthetic::{generate_synthetic, SynthConfig, SynthMode};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::{Deserialize, Serialize};

/// Motion-capture stream: `num_frames` frames of `num_joints` 3-d joints.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    /// Frame-major joint positions, `num_frames * num_joints` entries.
    pub frames: Vec<[f64; 3]>,
    pub num_frames: usize,
    pub num_joints: usize,
    pub frame_rate_hz: f64,
    /// `false` marks a joint absent from the entire sequence; its
    /// positions are zeros.
    pub joint_mask: Vec<bool>,
}

impl SkeletonSequence {
    pub fn new(
        frames: Vec<[f64; 3]>,
        num_frames: usize,
        num_joints: usize,
        frame_rate_hz: f64,
        joint_mask: Vec<bool>,
    ) -> Result<Self> {
        if num_frames == 0 || frames.len() != num_frames * num_joints {
            return Err(Error::Data(format!(
                "skeleton sequence with {} points does not match {num_frames} frames x {num_joints} joints",
                frames.len()
            )));
        }
        if joint_mask.len() != num_joints {
            return Err(Error::Data("joint mask length != joint count".into()));
        }
        Ok(SkeletonSequence {
            frames,
            num_frames,
            num_joints,
            frame_rate_hz,
            joint_mask,
        })
    }

    pub fn at(&self, frame: usize, joint: usize) -> [f64; 3] {
        self.frames[frame * self.num_joints + joint]
    }
}

/// Triaxial acceleration stream with explicit timestamps.
///
/// A missing value inside a row is stored as NaN and listed in `gaps` as
/// `(row, axis)`; a stream that is entirely absent has zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelerationSequence {
    pub timestamps: Vec<f64>,
    pub values: Vec<[f64; 3]>,
    pub rate_hz: f64,
    pub gaps: Vec<(usize, usize)>,
}

impl AccelerationSequence {
    pub fn new(timestamps: Vec<f64>, values: Vec<[f64; 3]>, rate_hz: f64) -> Result<Self> {
        if timestamps.len() != values.len() {
            return Err(Error::Data(
                "acceleration timestamps and values differ in length".into(),
            ));
        }
        if timestamps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data(
                "acceleration timestamps must be strictly increasing".into(),
            ));
        }
        let gaps = values
            .iter()
            .enumerate()
            .flat_map(|(i, v)| {
                (0..3)
                    .filter(move |&a| !v[a].is_finite())
                    .map(move |a| (i, a))
            })
            .collect();
        Ok(AccelerationSequence {
            timestamps,
            values,
            rate_hz,
            gaps,
        })
    }

    pub fn empty() -> Self {
        AccelerationSequence {
            timestamps: Vec::new(),
            values: Vec::new(),
            rate_hz: 0.0,
            gaps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when every axis has at least two finite points, i.e. the
    /// stream can be interpolated without a fill.
    pub fn has_data(&self) -> bool {
        if self.len() < 2 {
            return false;
        }
        (0..3).all(|axis| self.values.iter().filter(|v| v[axis].is_finite()).count() >= 2)
    }
}

/// One labeled action instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub id: String,
    pub skeleton: SkeletonSequence,
    pub acceleration: AccelerationSequence,
    pub label: usize,
    pub subject: u32,
}

/// Model-ready sample: fixed-size token grids for both modalities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessedSample {
    /// Shape `[F, J, 3]`.
    pub skeleton_tokens: Tensor,
    /// Shape `[N_a, 3]`.
    pub accel_tokens: Tensor,
    pub label: usize,
    pub subject: u32,
}

impl ProcessedSample {
    pub fn frames(&self) -> usize {
        self.skeleton_tokens.shape()[0]
    }

    pub fn joints(&self) -> usize {
        self.skeleton_tokens.shape()[1]
    }

    pub fn accel_token_count(&self) -> usize {
        self.accel_tokens.shape()[0]
    }
}
