//! Time-varying emotion similarity: align two trajectories in length,
//! take the cosine per frame, and average. Used for both embedding
//! sequences (Emo SIM) and arousal-valence series (Aro-Val SIM).
//!
//! The shorter sequence is interpolated up to the longer one. Utterance-level
//! embeddings are accepted as `D×1` sequences, which broadcast to a constant
//! trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::interpolate_stream;
use crate::seqmodel::EMO_DIM;
use crate::Matrix;

/// Per-pair result with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSimilarity {
    pub score: f64,
    pub frames: usize,
    /// Frames where either side had zero norm; they contribute 0.
    pub zero_norm_frames: usize,
}

pub fn frame_cosine_detail(a: &Matrix, b: &Matrix) -> Result<FrameSimilarity> {
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "embedding widths differ: {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::Domain(
            "similarity needs at least one frame per side".into(),
        ));
    }
    let frames = a.ncols().max(b.ncols());
    let a = interpolate_stream(a, frames)?;
    let b = interpolate_stream(b, frames)?;
    let mut total = 0.0;
    let mut zero = 0;
    for (ca, cb) in a.columns().into_iter().zip(b.columns()) {
        let na = ca.dot(&ca).sqrt();
        let nb = cb.dot(&cb).sqrt();
        if na == 0.0 || nb == 0.0 {
            zero += 1;
            continue;
        }
        total += (ca.dot(&cb) / (na * nb)).clamp(-1.0, 1.0);
    }
    Ok(FrameSimilarity {
        score: (total / frames as f64).clamp(-1.0, 1.0),
        frames,
        zero_norm_frames: zero,
    })
}

/// Average frame-wise cosine similarity of `a` (`D×T_a`) and `b` (`D×T_b`).
pub fn frame_cosine_sim(a: &Matrix, b: &Matrix) -> Result<f64> {
    frame_cosine_detail(a, b).map(|s| s.score)
}

/// Frame cosine over centered arousal-valence series (`2×K`).
pub fn aro_val_sim(a: &Matrix, b: &Matrix) -> Result<f64> {
    for (name, m) in [("first", a), ("second", b)] {
        if m.nrows() != EMO_DIM {
            return Err(Error::Validation(format!(
                "{name} series has {} rows, expected arousal and valence",
                m.nrows()
            )));
        }
        if let Some(v) = m.iter().find(|v| !(-0.5..=0.5).contains(*v)) {
            return Err(Error::Validation(format!(
                "{name} series value {v} is not centered to [-0.5, 0.5]"
            )));
        }
    }
    frame_cosine_sim(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub per_pair: Vec<Vec<f64>>,
    pub per_seed_means: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the per-seed means.
    pub std: f64,
}

pub fn aggregate_seeds(per_seed: &[Vec<f64>]) -> Result<SimilarityReport> {
    let first = per_seed
        .first()
        .ok_or_else(|| Error::Domain("no seeds to aggregate".into()))?;
    if first.is_empty() {
        return Err(Error::Domain("seed with no scored pairs".into()));
    }
    if let Some((i, s)) = per_seed
        .iter()
        .enumerate()
        .find(|(_, s)| s.len() != first.len())
    {
        return Err(Error::Shape(format!(
            "seed {i} has {} pairs, seed 0 has {}",
            s.len(),
            first.len()
        )));
    }
    if let Some(v) = per_seed
        .iter()
        .flatten()
        .find(|v| !(-1.0..=1.0).contains(*v))
    {
        return Err(Error::Validation(format!("score {v} outside [-1, 1]")));
    }
    let means: Vec<f64> = per_seed
        .iter()
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect();
    let n = means.len() as f64;
    let mean = means.iter().sum::<f64>() / n;
    let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    Ok(SimilarityReport {
        per_pair: per_seed.to_vec(),
        per_seed_means: means,
        mean,
        std: var.sqrt(),
    })
}
