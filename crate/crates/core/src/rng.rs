//! Seeded random number generation.
//!
//! All simulation randomness flows through [`SimRng`], a ChaCha20 stream
//! seeded from a `u64`. The algorithm identifier is written into output
//! metadata so a result file names the generator that produced it.
//!
//! Replication `r` of a run with base seed `s` uses seed `s ^ r`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SimRng = ChaCha20Rng;

pub const RNG_ALGORITHM: &str = "chacha20/rand_chacha-0.3";

pub fn sim_rng(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Seed for replication `rep` of a run seeded with `seed`.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    seed ^ rep
}
