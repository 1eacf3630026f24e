//! Deterministic RNG helpers for unit tests.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha12Rng) -> f64 {
    rng.gen::<f64>()
}

pub fn std_normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample::<f64, _>(rand_distr::StandardNormal)
}
