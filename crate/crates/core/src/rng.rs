//! Seed streams.
//!
//! All randomness flows from one user seed. Each consumer draws from its own
//! ChaCha stream so that, e.g., changing the number of sampling draws never
//! perturbs the data split or the weight initialisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Sampling = 3,
    Shuffle = 4,
    Benchmark = 5,
    Downsample = 6,
    /// Initialisation of networks trained in a second phase (e.g. a fresh
    /// predictor on top of a frozen generator).
    ReInit = 7,
    Eval = 8,
}

pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
