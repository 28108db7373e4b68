//! Splittable seeded randomness.
//!
//! Every random quantity in the crate is derived from a master `u64` seed
//! through [`stream_rng`], so per-trial streams are independent of scheduling
//! and identical configs reproduce identical runs bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser; decorrelates nearby seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for stream `stream` of the master seed.
pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(master ^ mix(stream)))
}

/// RNG for a named substream (weights, operators, ...) of a trial stream.
pub fn sub_rng(master: u64, stream: u64, sub: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(master ^ mix(stream)) ^ mix(sub.wrapping_add(0x5bf0_3635))))
}
