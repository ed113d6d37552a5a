//! Deterministic random-stream derivation.
//!
//! Every random draw in the crate flows from an explicit `u64` seed through
//! [`rng_from`] or [`substream`]. Substreams are derived with a fixed FNV-1a /
//! splitmix64 mix so results are stable across platforms and releases, unlike
//! `std`'s hasher.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a bare seed.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministic RNG for a named substream of a master seed.
///
/// `domain` separates independent uses of the same master seed (e.g. world
/// generation vs. per-trial attack noise); `index` enumerates parallel trials.
pub fn substream(master: u64, domain: &str, index: u64) -> ChaCha8Rng {
    rng_from(derive_seed(master, domain, index))
}

/// Stable seed mix: FNV-1a over the domain string folded with splitmix64.
pub fn derive_seed(master: u64, domain: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in domain.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(master ^ splitmix64(h ^ index.rotate_left(32)))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
