//! Seeded random number generation.
//!
//! Every stochastic step in the pipeline (initialization, shuffling,
//! undersampling, augmentation, fine-tuning subsets) draws from a
//! SplitMix64 stream so runs are reproducible from a single `u64` seed.

use rand::SeedableRng;

pub use rand_xoshiro::SplitMix64 as Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
