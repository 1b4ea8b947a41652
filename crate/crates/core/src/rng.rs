//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha stream selected by a domain tag
//! and an index, so results do not depend on how work is scheduled across
//! threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent families of random draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// Initial states used to fit the chaos expansion.
    InitialSamples = 1,
    /// Monte Carlo paths (initial state and increments).
    Paths = 2,
    /// Fresh initial states for the mixture density.
    MixtureSamples = 3,
}

/// Generator for item `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < 1 << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << 48) | index);
    rng
}
