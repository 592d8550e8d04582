//! Seed discipline.
//!
//! Every procedure takes a single master seed. Independent random streams are
//! derived from it by tag so that, for example, the bootstrap weights used by
//! the standard and the double-robust sampler are the same sequence when both
//! are run with the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named substreams of a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Substream {
    /// Posterior draws of the conditional mean function.
    MeanDraws = 1,
    /// Bayesian bootstrap weights.
    Weights = 2,
    /// Unit assignment for sample splitting.
    Split = 3,
    /// Simulated data of one Monte Carlo replication.
    Data = 4,
    /// Seed handed to the estimators of one Monte Carlo replication.
    Estimators = 5,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: Substream, index: u64) -> u64 {
    mix(mix(seed ^ mix(tag as u64)) ^ mix(index.wrapping_add(0x5151)))
}

/// The random stream `tag` of master seed `seed`.
pub fn substream(seed: u64, tag: Substream) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tag, 0))
}

/// The random stream `tag` of replication `index` under master seed `seed`.
pub fn indexed_substream(seed: u64, tag: Substream, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tag, index))
}
