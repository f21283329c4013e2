//! Seed derivation for independent deterministic RNG streams. Pure integer
//! mixing (no std hasher) so streams are stable across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from (base seed, purpose tag, index).
pub fn mix_seed(base: u64, tag: &str, idx: u64) -> u64 {
    let mut h = mix64(base ^ 0x51ab_de3c_9fd4_7e01);
    for &b in tag.as_bytes() {
        h = mix64(h ^ b as u64);
    }
    mix64(h ^ idx)
}

pub fn stream(base: u64, tag: &str, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(base, tag, idx))
}
