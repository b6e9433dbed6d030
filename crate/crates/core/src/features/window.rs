//! Chunk-wise arousal/valence handling: window counting, centering, and
//! alignment to the frame grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::interpolate_stream;
use crate::Matrix;

/// Sliding analysis window, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_s: f64,
    pub hop_s: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_s: 0.5,
            hop_s: 0.25,
        }
    }
}

impl WindowSpec {
    pub fn new(window_s: f64, hop_s: f64) -> Result<Self> {
        if !(hop_s > 0.0 && hop_s <= window_s && window_s.is_finite()) {
            return Err(Error::Domain(format!(
                "window spec needs 0 < hop <= window, got window={window_s} hop={hop_s}"
            )));
        }
        Ok(Self { window_s, hop_s })
    }
}

/// Number of analysis windows over a clip. Clips shorter than one window
/// yield a single chunk covering the whole clip.
pub fn window_count(duration_s: f64, spec: &WindowSpec) -> Result<usize> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Domain(format!(
            "clip duration must be positive, got {duration_s}"
        )));
    }
    if duration_s < spec.window_s {
        return Ok(1);
    }
    // Tolerance absorbs decimal durations like 0.7 - 0.5 = 0.19999...
    let steps = ((duration_s - spec.window_s) / spec.hop_s + 1e-9).floor();
    Ok(steps as usize + 1)
}

/// Seconds to frames at `fps`, rounded to the nearest frame. All
/// second/frame conversions go through here.
pub fn seconds_to_frames(seconds: f64, fps: f64) -> usize {
    (seconds * fps).round().max(0.0) as usize
}

pub fn frames_to_seconds(frames: usize, fps: f64) -> f64 {
    frames as f64 / fps
}

/// Per-chunk values over a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSeries {
    pub values: Matrix,
    pub spec: WindowSpec,
    pub origin_duration_s: f64,
}

impl ChunkSeries {
    /// Wrap detector output, checking the chunk count against the clip length.
    pub fn new(values: Matrix, spec: WindowSpec, origin_duration_s: f64) -> Result<Self> {
        let k = window_count(origin_duration_s, &spec)?;
        if values.ncols() != k {
            return Err(Error::Shape(format!(
                "{} chunks for a {origin_duration_s}s clip, expected {k}",
                values.ncols()
            )));
        }
        Ok(Self {
            values,
            spec,
            origin_duration_s,
        })
    }
}

/// Shift extractor outputs from `[0, 1]` to `[-0.5, 0.5]`. Only the arousal
/// and valence rows are accepted.
pub fn center_arousal_valence(raw: &Matrix) -> Result<Matrix> {
    if raw.nrows() != 2 {
        return Err(Error::Validation(format!(
            "expected 2 rows (arousal, valence), got {}",
            raw.nrows()
        )));
    }
    if let Some(v) = raw.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Validation(format!(
            "arousal/valence value {v} outside [0, 1]"
        )));
    }
    Ok(raw.mapv(|v| v - 0.5))
}

pub fn uncenter_arousal_valence(centered: &Matrix) -> Matrix {
    centered.mapv(|v| v + 0.5)
}

/// Resample chunk values onto `frames` frames.
pub fn align_to_frames(chunks: &ChunkSeries, frames: usize) -> Result<Matrix> {
    if chunks.values.ncols() == 0 {
        return Err(Error::Domain("no chunks to align".into()));
    }
    interpolate_stream(&chunks.values, frames)
}
