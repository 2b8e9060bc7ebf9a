//! Seed plumbing. Every random stage derives its own stream from one master
//! seed and a stage name, so adding a stage never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a named sub-seed from a master seed.
pub fn sub_seed(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Sub-seed for the `index`-th shard or item of a stage.
pub fn indexed_seed(seed: u64, stage: &str, index: u64) -> u64 {
    splitmix64(sub_seed(seed, stage) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng_for(seed: u64, stage: &str) -> Rng {
    Rng::seed_from_u64(sub_seed(seed, stage))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_are_independent() {
        assert_ne!(sub_seed(7, "fps"), sub_seed(7, "init"));
        assert_eq!(sub_seed(7, "fps"), sub_seed(7, "fps"));
        assert_ne!(indexed_seed(7, "mc", 0), indexed_seed(7, "mc", 1));
    }
}
