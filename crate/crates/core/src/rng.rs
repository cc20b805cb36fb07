//! Seed handling. Every random stream derives from one root seed:
//! `child(seed, label) = splitmix64(seed ^ fnv1a64(label))`, and nested
//! labels compose by repeated application.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a named sub-stream.
pub fn child(seed: u64, label: &str) -> u64 {
    splitmix64(seed ^ fnv1a64(label))
}

/// Child seed for an indexed sub-stream (episode, agent, cell ...).
pub fn child_idx(seed: u64, label: &str, idx: u64) -> u64 {
    splitmix64(child(seed, label) ^ splitmix64(idx))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}
