//! Seeded RNG streams.
//!
//! Every source of randomness in the crate flows through `ChaCha8Rng`
//! seeded from a `u64`, so a run is reproducible bit-for-bit from its
//! seed. Distinct purposes (weight init, dropout, shuffling, ...) use
//! distinct stream ids on the same seed, keeping their draws independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids; one per consumer of randomness.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DROPOUT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const SYNTHETIC: u64 = 5;
    pub const BALANCE: u64 = 6;
    pub const GRADCHECK: u64 = 7;
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for one purpose under a shared seed.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Standard normal draw via Box-Muller.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    // Guard the log against a zero draw.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
