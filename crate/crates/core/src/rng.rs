//! Random streams.
//!
//! Every run uses ChaCha8 seeded from a 64-bit run seed (`seed_from_u64`).
//! Episode `k` of a run draws from stream `k` of that generator, so any
//! episode can be regenerated from `(seed, k)` alone and a resumed run sees
//! exactly the episodes an uninterrupted run would. Parameter
//! initialisation uses the reserved stream `u64::MAX`. Gaussian samples come
//! from `rand_distr::StandardNormal` (ziggurat method).

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matrix::Matrix;

pub type Rng = ChaCha8Rng;

const INIT_STREAM: u64 = u64::MAX;

/// Generator for episode `episode` of the run seeded by `seed`.
pub fn episode_rng(seed: u64, episode: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// Generator for parameter initialisation.
pub fn init_rng(seed: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    rng
}

pub fn gaussian(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Matrix of i.i.d. `N(0, std^2)` entries.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * gaussian(rng))
}
