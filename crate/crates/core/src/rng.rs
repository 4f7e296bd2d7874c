//! Seed derivation. Every random decision in a session is drawn from a
//! generator keyed by `(session seed, step, stream)` so that the harness and
//! the service reproduce each other exactly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SessionRng = ChaCha8Rng;

/// Streams that draw randomness within one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Display = 1,
    Coin = 2,
    LabelNoise = 3,
    Strategy = 4,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, step: usize, stream: Stream) -> u64 {
    splitmix64(splitmix64(seed ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407)) ^ step as u64)
}

pub fn step_rng(seed: u64, step: usize, stream: Stream) -> SessionRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, step, stream))
}

pub fn seeded(seed: u64) -> SessionRng {
    ChaCha8Rng::seed_from_u64(seed)
}
