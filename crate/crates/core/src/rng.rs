//! Seeding for parallel Monte-Carlo replications.
//!
//! Replication `b` under master seed `s` always draws from the same ChaCha
//! stream, whichever thread runs it, so reductions over replications are
//! reproducible and calibration runs see common random numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ReplicationRng = ChaCha8Rng;

pub fn replication_rng(master_seed: u64, replication: u64) -> ReplicationRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication);
    rng
}

/// Derives an independent master seed for a named sub-task.
pub fn derive_seed(master_seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, mixed with the master seed by splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master_seed ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
