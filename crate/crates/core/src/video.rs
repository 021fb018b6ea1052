//! Frame sampling under the frame-count and frame-rate caps, temporal
//! packaging of adjacent frames, and the training-time augmentation of
//! package size and frame rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_FRAMES: usize = 1080;
pub const DEFAULT_MAX_FPS: f64 = 10.0;
/// Largest package size drawn by [`augment`].
pub const MAX_AUGMENT_PACKAGE: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum VideoError {
    #[error("invalid sampling spec: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSamplingSpec {
    pub duration_s: f64,
    pub native_fps: f64,
    pub max_frames: usize,
    pub max_fps: f64,
}

impl FrameSamplingSpec {
    /// Spec with the default caps.
    pub fn new(duration_s: f64, native_fps: f64) -> Self {
        Self {
            duration_s,
            native_fps,
            max_frames: DEFAULT_MAX_FRAMES,
            max_fps: DEFAULT_MAX_FPS,
        }
    }

    pub fn validate(&self) -> Result<(), VideoError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.duration_s) {
            return Err(VideoError::Input(format!(
                "duration must be > 0 s, got {}",
                self.duration_s
            )));
        }
        if !positive(self.native_fps) {
            return Err(VideoError::Input(format!(
                "native fps must be > 0, got {}",
                self.native_fps
            )));
        }
        if !positive(self.max_fps) {
            return Err(VideoError::Input(format!(
                "max fps must be > 0, got {}",
                self.max_fps
            )));
        }
        if self.max_frames == 0 {
            return Err(VideoError::Input("max_frames must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_fps(&self) -> f64 {
        self.native_fps.min(self.max_fps)
    }

    /// Number of frames [`sample_frames`] returns.
    pub fn frame_count(&self) -> usize {
        let n = (self.duration_s * self.effective_fps()).floor() as usize;
        n.clamp(1, self.max_frames)
    }
}

/// Midpoint timestamps of `n` equal sub-intervals of `[0, duration]`.
pub fn sample_frames(spec: &FrameSamplingSpec) -> Result<Vec<f64>, VideoError> {
    spec.validate()?;
    let n = spec.frame_count();
    let step = spec.duration_s / n as f64;
    Ok((0..n).map(|i| (i as f64 + 0.5) * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramePackage {
    pub package_index: usize,
    pub frame_indices: Vec<usize>,
    /// Empty when packing bare frame counts.
    pub timestamps_s: Vec<f64>,
}

impl FramePackage {
    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }
}

/// Splits `frame_count` frames into packages of `package_size` adjacent
/// frames. Only the last package may be short; it is kept as is.
pub fn pack(frame_count: usize, package_size: usize) -> Result<Vec<FramePackage>, VideoError> {
    if frame_count == 0 || package_size == 0 {
        return Err(VideoError::Input(format!(
            "frame_count ({frame_count}) and package_size ({package_size}) must be >= 1"
        )));
    }
    Ok((0..frame_count)
        .collect::<Vec<_>>()
        .chunks(package_size)
        .enumerate()
        .map(|(package_index, idx)| FramePackage {
            package_index,
            frame_indices: idx.to_vec(),
            timestamps_s: Vec::new(),
        })
        .collect())
}

/// [`pack`] with each package carrying its frames' timestamps.
pub fn pack_timestamps(
    timestamps: &[f64],
    package_size: usize,
) -> Result<Vec<FramePackage>, VideoError> {
    let mut packages = pack(timestamps.len(), package_size)?;
    for p in &mut packages {
        p.timestamps_s = p.frame_indices.iter().map(|&i| timestamps[i]).collect();
    }
    Ok(packages)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub package_size: usize,
    pub fps: f64,
}

/// Seeded draw of package size in `1..=6` and an integer frame rate in
/// `1..=floor(min(max_fps, native_fps))`. Sources slower than 1 fps keep
/// their native rate.
pub fn augment(spec: &FrameSamplingSpec, seed: u64) -> Augmentation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let package_size = rng.gen_range(1..=MAX_AUGMENT_PACKAGE);
    let cap = spec.max_fps.min(spec.native_fps);
    let fps = if cap < 1.0 {
        cap
    } else {
        rng.gen_range(1..=cap.floor() as u64) as f64
    };
    Augmentation { package_size, fps }
}
