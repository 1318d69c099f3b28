//! Deterministic RNG streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream for `(seed, index)`; the same pair always yields the
/// same sequence.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(index)))
}

/// Stream keyed by three integers (e.g. seed, epoch, sample).
pub fn stream3(seed: u64, a: u64, b: u64) -> StreamRng {
    stream(mix64(seed ^ mix64(a)), b)
}
