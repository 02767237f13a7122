//! Seeded RNG streams.
//!
//! All randomness in the crate flows through explicitly seeded generators.
//! Parallel or per-subproblem work derives independent streams from a
//! `(seed, stream)` pair so results do not depend on scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Deterministic generator for a `(seed, stream)` pair.
///
/// Streams with the same seed but different ids never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for the subproblem on coordinates `(i, j)`; `i == j` is the
/// univariate subproblem for coordinate `i`.
pub fn pair_stream(d: usize, i: usize, j: usize) -> u64 {
    (i * d + j) as u64
}
