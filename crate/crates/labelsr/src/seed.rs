//! Deterministic seed derivation.
//!
//! Every random decision in the crate flows from one master seed. Distinct
//! purposes (noise draw, event placement, classifier init, ...) get
//! independent streams by hashing the master seed with a chain of tags, so
//! adding a consumer never perturbs existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a full-period mixer with good avalanche behaviour.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and a tag path. Tags are folded in
/// one at a time, so `derive(s, &[a, b])` differs from `derive(s, &[b, a])`.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x243f_6a88_85a3_08d3);
    for &t in tags {
        state = splitmix64(state ^ splitmix64(t));
    }
    state
}

/// Seeded RNG for a derived stream.
pub fn rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, tags))
}

/// Purpose tags. Kept in one place so streams cannot collide by accident.
pub mod tag {
    pub const NOISE: u64 = 1;
    pub const PLACEMENT: u64 = 2;
    pub const EVENT: u64 = 3;
    pub const SPLIT_FINE: u64 = 10;
    pub const SPLIT_WEAK: u64 = 11;
    pub const SPLIT_TEST: u64 = 12;
    pub const ITERATION: u64 = 20;
    pub const FOREST_TREE: u64 = 30;
    pub const MLP: u64 = 31;
    pub const SVM: u64 = 32;
    pub const CNN: u64 = 33;
}
