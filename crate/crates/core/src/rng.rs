//! Seeded generator streams.
//!
//! Every randomized step draws from its own ChaCha8 stream identified by the
//! run seed, a domain tag and an index (column, row, lambda point). Results are
//! therefore independent of evaluation order and thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags. Keep these stable: changing one changes every output that
/// depends on the corresponding stream.
pub mod domain {
    pub const SAMPLE_SPLIT: u64 = 1;
    pub const ADJUST_FEATURES: u64 = 2;
    pub const ADJUST_SCORES: u64 = 3;
    pub const FORWARD_CDF: u64 = 4;
    pub const BLACKBOX_FAIR: u64 = 5;
    pub const PREDICT_PROB: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
    pub const KMEANS: u64 = 8;
}

pub fn stream(seed: u64, domain: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 40) ^ index);
    rng
}

/// Derives a child seed so that nested components (e.g. one sweep point)
/// get their own family of streams.
pub fn child_seed(seed: u64, domain: u64, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, domain, index).next_u64()
}
