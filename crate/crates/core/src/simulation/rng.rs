//! Counter-based random streams.
//!
//! Every draw in an experiment comes from a ChaCha12 generator keyed by the
//! experiment seed, with the 64-bit stream id `(i << 32) | j` for truth `i`
//! and replicate `j`. Streams never depend on which thread runs them or on
//! what was drawn before. Replicate id `u32::MAX` is reserved for the truth.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub const TRUTH_STREAM: u32 = u32::MAX;

pub fn stream(seed: u64, truth: u32, replicate: u32) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((truth as u64) << 32) | replicate as u64);
    rng
}

pub fn truth_stream(seed: u64, truth: u32) -> ChaCha12Rng {
    stream(seed, truth, TRUTH_STREAM)
}
