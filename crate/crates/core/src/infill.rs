//! The infilling task: temporal masks, context construction, and condition
//! dropout for the unconditional branch used by guidance.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::FlowRng;
use crate::seqmodel::ConditionBundle;
use crate::Matrix;

/// Per-frame binary mask; `true` marks a frame to be generated. Broadcast
/// over all feature rows.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TemporalMask {
    bits: Vec<bool>,
}

impl TemporalMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn ones(len: usize) -> Self {
        Self::new(vec![true; len])
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![false; len])
    }

    /// Ones on `[start, end)`, zeros elsewhere.
    pub fn span(len: usize, start: usize, end: usize) -> Self {
        Self::new((0..len).map(|i| i >= start && i < end).collect())
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// `(start, end)` of the single run of ones, if the mask is one interval.
    pub fn as_interval(&self) -> Option<(usize, usize)> {
        let start = self.bits.iter().position(|b| *b)?;
        let end = self.bits.len() - self.bits.iter().rev().position(|b| *b)?;
        self.bits[start..end]
            .iter()
            .all(|b| *b)
            .then_some((start, end))
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self::new(self.bits[start..end].to_vec())
    }
}

/// Infilling training example: the model is asked for `target` given `cond`.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub target: Matrix,
    pub cond: ConditionBundle,
    pub mask: TemporalMask,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskRatio {
    pub lo: f64,
    pub hi: f64,
}

impl Default for MaskRatio {
    fn default() -> Self {
        Self { lo: 0.7, hi: 1.0 }
    }
}

/// One contiguous span covering `round(r·T)` frames, `r ~ U(lo, hi)`, at a
/// uniformly chosen offset.
pub fn sample_mask(frames: usize, rng: &mut FlowRng, ratio: MaskRatio) -> Result<TemporalMask> {
    if frames == 0 {
        return Err(Error::Domain("cannot mask a zero-length sequence".into()));
    }
    if !(ratio.lo > 0.0 && ratio.lo <= ratio.hi && ratio.hi <= 1.0) {
        return Err(Error::Domain(format!(
            "mask ratio range must satisfy 0 < lo <= hi <= 1, got [{}, {}]",
            ratio.lo, ratio.hi
        )));
    }
    let r = if ratio.lo == ratio.hi {
        ratio.lo
    } else {
        rng.random_range(ratio.lo..=ratio.hi)
    };
    let len = ((r * frames as f64).round() as usize).clamp(1, frames);
    let start = rng.random_range(0..=frames - len);
    Ok(TemporalMask::span(frames, start, start + len))
}

/// Split `features` into masked target and visible context and attach the
/// condition streams.
pub fn build_example(
    features: &Matrix,
    phonemes: Vec<u32>,
    nv: Matrix,
    emo: Matrix,
    mask: TemporalMask,
) -> Result<TrainingExample> {
    let frames = features.ncols();
    if mask.len() != frames {
        return Err(Error::Shape(format!(
            "mask has {} frames, features have {frames}",
            mask.len()
        )));
    }
    if mask.count_ones() == 0 {
        return Err(Error::Domain("training mask selects no frames".into()));
    }
    let mut context = features.clone();
    let mut target = features.clone();
    for (j, on) in mask.bits().iter().enumerate() {
        if *on {
            context.column_mut(j).fill(0.0);
        } else {
            target.column_mut(j).fill(0.0);
        }
    }
    let cond = ConditionBundle {
        phonemes: Some(phonemes),
        nv,
        emo,
        context,
        mask: mask.clone(),
    };
    cond.validate()?;
    Ok(TrainingExample { target, cond, mask })
}

/// With probability `p_drop`, zero every condition stream together.
/// Returns whether the bundle was dropped.
pub fn apply_condition_dropout(
    cond: ConditionBundle,
    p_drop: f64,
    rng: &mut FlowRng,
) -> (ConditionBundle, bool) {
    let p = p_drop.clamp(0.0, 1.0);
    let coin: f64 = rng.random();
    if coin < p {
        (cond.zeroed(), true)
    } else {
        (cond, false)
    }
}
