use crate::error::{Error, Result};
use crate::infill::TemporalMask;
use crate::Matrix;

/// Width of the nonverbal-vocalization embedding stream.
pub const NV_DIM: usize = 32;
/// Arousal and valence; dominance is not carried.
pub const EMO_DIM: usize = 2;

/// Frame-aligned conditioning streams for one sequence.
///
/// `phonemes == None` means the phoneme stream has been dropped and enters
/// the network as an all-zero embedding block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    pub phonemes: Option<Vec<u32>>,
    pub nv: Matrix,
    pub emo: Matrix,
    pub context: Matrix,
    pub mask: TemporalMask,
}

impl ConditionBundle {
    pub fn frames(&self) -> usize {
        self.context.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.context.nrows()
    }

    /// Check stream lengths, widths and the emotion range.
    pub fn validate(&self) -> Result<()> {
        let t = self.frames();
        if let Some(p) = &self.phonemes {
            if p.len() != t {
                return Err(Error::Shape(format!(
                    "phoneme stream has {} frames, context has {t}",
                    p.len()
                )));
            }
        }
        if self.nv.dim() != (NV_DIM, t) {
            return Err(Error::Shape(format!(
                "nv stream is {}x{}, expected {NV_DIM}x{t}",
                self.nv.nrows(),
                self.nv.ncols()
            )));
        }
        if self.emo.dim() != (EMO_DIM, t) {
            return Err(Error::Shape(format!(
                "emo stream is {}x{}, expected {EMO_DIM}x{t}",
                self.emo.nrows(),
                self.emo.ncols()
            )));
        }
        if self.mask.len() != t {
            return Err(Error::Shape(format!(
                "mask has {} frames, context has {t}",
                self.mask.len()
            )));
        }
        if let Some(v) = self.emo.iter().find(|v| !(-0.5..=0.5).contains(*v)) {
            return Err(Error::Validation(format!(
                "emo value {v} outside [-0.5, 0.5]"
            )));
        }
        Ok(())
    }

    /// The unconditional twin: every condition stream zeroed, mask kept.
    pub fn zeroed(&self) -> Self {
        Self {
            phonemes: None,
            nv: Matrix::zeros(self.nv.dim()),
            emo: Matrix::zeros(self.emo.dim()),
            context: Matrix::zeros(self.context.dim()),
            mask: self.mask.clone(),
        }
    }

    pub fn is_zeroed(&self) -> bool {
        self.phonemes.is_none()
            && self.nv.iter().all(|v| *v == 0.0)
            && self.emo.iter().all(|v| *v == 0.0)
            && self.context.iter().all(|v| *v == 0.0)
    }
}
