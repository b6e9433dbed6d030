use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqmodel::{EMO_DIM, NV_DIM};

/// Shape of the vector-field network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub d_phn: usize,
    pub d_nv: usize,
    pub d_emo: usize,
    pub n_phonemes: usize,
    pub feature_dim: usize,
    pub frames_per_second: f64,
    /// Add fixed sinusoidal frame positions after the input projection.
    pub positional_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains on a laptop CPU in minutes.
    pub fn desk() -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 64,
            d_ffn: 128,
            d_phn: 16,
            d_nv: NV_DIM,
            d_emo: EMO_DIM,
            n_phonemes: 32,
            feature_dim: 8,
            frames_per_second: 100.0,
            positional_encoding: true,
        }
    }

    /// Full-size model (24 layers, 16 heads, 1024/4096). Documented for
    /// reference; not runnable at desk scale.
    pub fn full() -> Self {
        Self {
            n_layers: 24,
            n_heads: 16,
            d_model: 1024,
            d_ffn: 4096,
            d_phn: 1024,
            d_nv: NV_DIM,
            d_emo: EMO_DIM,
            n_phonemes: 72,
            feature_dim: 80,
            frames_per_second: 100.0,
            positional_encoding: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            other => Err(Error::Config(format!("unknown model preset '{other}'"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ffn", self.d_ffn),
            ("d_phn", self.d_phn),
            ("n_phonemes", self.n_phonemes),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::Config("d_model must be even".into()));
        }
        if self.d_nv != NV_DIM {
            return Err(Error::Config(format!(
                "d_nv must be {NV_DIM}, got {}",
                self.d_nv
            )));
        }
        if self.d_emo != EMO_DIM {
            return Err(Error::Config(format!(
                "d_emo must be {EMO_DIM}, got {}",
                self.d_emo
            )));
        }
        if !(self.frames_per_second > 0.0 && self.frames_per_second.is_finite()) {
            return Err(Error::Config("frames_per_second must be positive".into()));
        }
        Ok(())
    }

    /// Width of the frame-wise concatenated input.
    pub fn input_width(&self) -> usize {
        2 * self.feature_dim + self.d_phn + self.d_nv + self.d_emo
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}
