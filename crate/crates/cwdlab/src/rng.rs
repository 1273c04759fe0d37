//! Named random-number streams derived from a single per-run seed.
//!
//! Every source of randomness in a run (init draw, gradient noise, random
//! masks) gets its own stream keyed by name, so experiment variants can
//! share some streams exactly (e.g. identical inits) while differing in
//! others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream names used by the harness.
pub const STREAM_INIT: &str = "init";
pub const STREAM_NOISE: &str = "noise";
pub const STREAM_RANDOM_MASK: &str = "random-mask";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Deterministic generator for the `(seed, name)` stream.
pub fn stream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mixed = fnv1a(name.as_bytes()) ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    ChaCha8Rng::seed_from_u64(mixed)
}
