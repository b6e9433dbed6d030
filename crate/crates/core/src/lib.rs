//! Conditional flow matching for speech-feature infilling with time-varying,
//! frame-aligned conditioning streams (phonemes, nonverbal-vocalization
//! embeddings, arousal-valence), together with the data-curation gates and
//! emotion-similarity metrics that go with it.
//!
//! Matrices follow the feature convention `rows × frames` (`F×T`) at the API
//! boundary. All path mathematics runs in `f64`.

pub mod cli;
pub mod curate;
pub mod error;
pub mod features;
pub mod fm_core;
pub mod infill;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod seqmodel;
pub mod trainer;

pub use error::{Error, Result};

/// Dense real matrix, `rows × cols`.
pub type Matrix = ndarray::Array2<f64>;
