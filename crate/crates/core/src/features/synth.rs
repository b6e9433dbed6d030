//! Synthetic oracle corpora standing in for the external detectors.
//!
//! Features follow a fixed law of the conditions, per frame `τ`:
//!
//! ```text
//! ŝ[:, τ] = (1 + arousal[τ]) · base + ‖nv[:, τ]‖ · PATTERN_GAIN · pattern
//! base[f] = 1 + 0.5·cos(2πf/F),  pattern[f] = sin(2πf/F)
//! ```
//!
//! `base` and `pattern` are orthogonal for `F ≥ 3`, so the amplitude of a
//! frame (its projection on `base`) recovers `1 + arousal` exactly.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::FlowRng;
use crate::seqmodel::{EMO_DIM, NV_DIM};
use crate::Matrix;

pub const PATTERN_GAIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    Constant,
    Ramp,
    Step,
    Sinusoid,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Self::Constant),
            "ramp" => Ok(Self::Ramp),
            "step" => Ok(Self::Step),
            "sinusoid" => Ok(Self::Sinusoid),
            other => Err(Error::Config(format!("unknown synth kind '{other}'"))),
        }
    }
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Ramp => "ramp",
            Self::Step => "step",
            Self::Sinusoid => "sinusoid",
        }
    }
}

/// One generated sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleExample {
    pub emo: Matrix,
    pub nv: Matrix,
    pub features: Matrix,
    pub phonemes: Vec<u32>,
}

pub fn base_profile(feature_dim: usize) -> Vec<f64> {
    (0..feature_dim)
        .map(|f| 1.0 + 0.5 * (2.0 * PI * f as f64 / feature_dim as f64).cos())
        .collect()
}

pub fn pattern_profile(feature_dim: usize) -> Vec<f64> {
    (0..feature_dim)
        .map(|f| (2.0 * PI * f as f64 / feature_dim as f64).sin())
        .collect()
}

/// Apply the generator law to condition streams.
pub fn render_features(emo: &Matrix, nv: &Matrix, feature_dim: usize) -> Matrix {
    let base = base_profile(feature_dim);
    let pattern = pattern_profile(feature_dim);
    let frames = emo.ncols();
    let mut out = Matrix::zeros((feature_dim, frames));
    for tau in 0..frames {
        let scale = 1.0 + emo[(0, tau)];
        let gate = nv.column(tau).iter().map(|v| v * v).sum::<f64>().sqrt();
        for f in 0..feature_dim {
            out[(f, tau)] = scale * base[f] + gate * PATTERN_GAIN * pattern[f];
        }
    }
    out
}

/// Projection of each frame onto the base profile: `1 + arousal` for
/// frames produced by [`render_features`].
pub fn frame_amplitude(features: &Matrix) -> Vec<f64> {
    let base = base_profile(features.nrows());
    let norm: f64 = base.iter().map(|b| b * b).sum();
    features
        .columns()
        .into_iter()
        .map(|c| c.iter().zip(&base).map(|(v, b)| v * b).sum::<f64>() / norm)
        .collect()
}

/// A `T`-frame trajectory of the given shape in `[-0.5, 0.5]`.
pub fn trajectory(kind: SynthKind, frames: usize, rng: &mut FlowRng) -> Vec<f64> {
    let level = |rng: &mut FlowRng| rng.random_range(-0.45..=0.45);
    let v: Vec<f64> = match kind {
        SynthKind::Constant => vec![level(rng); frames],
        SynthKind::Ramp => {
            let (a, b) = (level(rng), level(rng));
            (0..frames)
                .map(|i| {
                    let x = if frames > 1 {
                        i as f64 / (frames - 1) as f64
                    } else {
                        0.0
                    };
                    a + (b - a) * x
                })
                .collect()
        }
        SynthKind::Step => {
            let a = level(rng);
            let jump = rng.random_range(0.3..=0.6) * if a > 0.0 { -1.0 } else { 1.0 };
            let b = (a + jump).clamp(-0.45, 0.45);
            let at = if frames >= 2 {
                rng.random_range((frames / 4).max(1)..=(3 * frames / 4).clamp(1, frames - 1))
            } else {
                frames
            };
            (0..frames).map(|i| if i < at { a } else { b }).collect()
        }
        SynthKind::Sinusoid => {
            let amp = rng.random_range(0.25..=0.45);
            let period = rng.random_range(20.0..=60.0);
            let phase = rng.random_range(0.0..2.0 * PI);
            (0..frames)
                .map(|i| amp * (2.0 * PI * i as f64 / period + phase).sin())
                .collect()
        }
    };
    v.into_iter().map(|x| x.clamp(-0.5, 0.5)).collect()
}

/// Emotion stream with arousal and valence drawn independently from `kind`.
pub fn emo_stream(kind: SynthKind, frames: usize, rng: &mut FlowRng) -> Matrix {
    let arousal = trajectory(kind, frames, rng);
    let valence = trajectory(kind, frames, rng);
    let mut emo = Matrix::zeros((EMO_DIM, frames));
    emo.row_mut(0).assign(&ndarray::Array1::from(arousal));
    emo.row_mut(1).assign(&ndarray::Array1::from(valence));
    emo
}

/// With probability one half, a unit-norm 32-dim burst over a random span;
/// otherwise all zeros.
pub fn nv_stream(frames: usize, rng: &mut FlowRng) -> Matrix {
    let mut nv = Matrix::zeros((NV_DIM, frames));
    if rng.random_bool(0.5) {
        let dir: Vec<f64> = (0..NV_DIM).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let len = rng.random_range((frames / 8).max(1)..=(frames / 3).max(1));
        let start = rng.random_range(0..=frames - len);
        for tau in start..start + len {
            for (i, d) in dir.iter().enumerate() {
                nv[(i, tau)] = d / norm;
            }
        }
    }
    nv
}

/// Runs of random phoneme ids, 3 to 8 frames each.
pub fn phoneme_stream(frames: usize, n_phonemes: usize, rng: &mut FlowRng) -> Vec<u32> {
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let id = rng.random_range(0..n_phonemes as u32);
        let run = rng.random_range(3..=8);
        out.extend(std::iter::repeat_n(id, run));
    }
    out.truncate(frames);
    out
}

/// Draw one oracle sequence of `frames` frames.
pub fn synth_condition_oracle(
    kind: SynthKind,
    frames: usize,
    feature_dim: usize,
    n_phonemes: usize,
    rng: &mut FlowRng,
) -> Result<OracleExample> {
    if frames == 0 {
        return Err(Error::Domain(
            "oracle sequence needs at least one frame".into(),
        ));
    }
    if n_phonemes == 0 || feature_dim == 0 {
        return Err(Error::Config(
            "feature_dim and n_phonemes must be positive".into(),
        ));
    }
    let emo = emo_stream(kind, frames, rng);
    let nv = nv_stream(frames, rng);
    let phonemes = phoneme_stream(frames, n_phonemes, rng);
    let features = render_features(&emo, &nv, feature_dim);
    Ok(OracleExample {
        emo,
        nv,
        features,
        phonemes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn constant_arousal_scales_amplitude() {
        let mut emo = Matrix::zeros((2, 5));
        emo.row_mut(0).fill(0.5);
        let nv = Matrix::zeros((NV_DIM, 5));
        let s = render_features(&emo, &nv, 8);
        let base = base_profile(8);
        for tau in 0..5 {
            for f in 0..8 {
                assert!((s[(f, tau)] - 1.5 * base[f]).abs() < 1e-15);
            }
        }
        for a in frame_amplitude(&s) {
            assert!((a - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn amplitude_ignores_nv_pattern() {
        let mut rng = seeded(2);
        let ex = synth_condition_oracle(SynthKind::Sinusoid, 80, 8, 16, &mut rng).unwrap();
        for (a, e) in frame_amplitude(&ex.features).iter().zip(ex.emo.row(0)) {
            assert!((a - 1.0 - e).abs() < 1e-12);
        }
    }

    #[test]
    fn step_has_one_discontinuity() {
        for seed in 0..50 {
            let mut rng = seeded(seed);
            let a = trajectory(SynthKind::Step, 40, &mut rng);
            let jumps = a.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(jumps, 1, "seed {seed}");
        }
    }

    #[test]
    fn zero_nv_has_no_pattern() {
        let mut emo = Matrix::zeros((2, 3));
        emo.row_mut(0).fill(-0.2);
        let s = render_features(&emo, &Matrix::zeros((NV_DIM, 3)), 8);
        let pattern = pattern_profile(8);
        for c in s.columns() {
            let dot: f64 = c.iter().zip(&pattern).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn reproducible_and_in_range() {
        for kind in [
            SynthKind::Constant,
            SynthKind::Ramp,
            SynthKind::Step,
            SynthKind::Sinusoid,
        ] {
            let a = synth_condition_oracle(kind, 37, 8, 10, &mut seeded(5)).unwrap();
            let b = synth_condition_oracle(kind, 37, 8, 10, &mut seeded(5)).unwrap();
            assert_eq!(a, b);
            assert!(a.emo.iter().all(|v| (-0.5..=0.5).contains(v)));
            assert_eq!(a.phonemes.len(), 37);
            assert!(a.phonemes.iter().all(|p| *p < 10));
        }
        assert!(synth_condition_oracle(SynthKind::Ramp, 0, 8, 10, &mut seeded(1)).is_err());
    }
}
