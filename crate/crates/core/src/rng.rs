//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own stream derived from the run
//! seed and a fixed label, so adding or removing one consumer never shifts
//! the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// FNV-1a
fn hash_label(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Stream for `label` under `seed`, further split by `index` (e.g. an epoch).
pub fn stream(seed: u64, label: &str, index: u64) -> Rng {
    let s = splitmix64(splitmix64(seed ^ hash_label(label)) ^ index);
    ChaCha8Rng::seed_from_u64(s)
}
