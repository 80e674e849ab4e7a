//! Deterministic derivation of independent RNG seeds from a master seed and
//! a path of integer tags. Streams never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Offset separating training draws from test draws of the same replication.
pub const TRAIN_STREAM: u64 = 0x7472_6169_6e00_0000;
pub const TEST_STREAM: u64 = 0x7465_7374_0000_0000;
pub const EVIDENCE_STREAM: u64 = 0x6576_6964_0000_0000;
pub const BOOTSTRAP_STREAM: u64 = 0x626f_6f74_0000_0000;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
