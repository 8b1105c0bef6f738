//! Seeded random streams.
//!
//! Every stochastic component draws from a xoshiro256++ generator whose state
//! is expanded from a 64-bit seed with SplitMix64, so any stream is fully
//! determined by its integer seed.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

pub type SeededRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SeededRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Derives an independent child seed from a parent seed and a stream tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut mixer = SplitMix64::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    mixer.next_u64()
}

pub fn normal_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}
