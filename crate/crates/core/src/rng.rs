//! Seeded generators. Every stochastic operation takes one of these
//! explicitly so runs are reproducible from a single `u64`.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::Matrix;

pub type FlowRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> FlowRng {
    FlowRng::seed_from_u64(seed)
}

/// Derive an independent stream from a parent seed and a stream label.
pub fn derive(seed: u64, stream: u64) -> FlowRng {
    let mut rng = FlowRng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Matrix of i.i.d. standard normal draws, filled row-major.
pub fn standard_normal(rows: usize, cols: usize, rng: &mut FlowRng) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}
