//! Seed stream derivation.
//!
//! Every random quantity is drawn from a ChaCha8 stream identified by
//! `(master_seed, role, index)`. The role string is hashed (FNV-1a) and mixed
//! with the master seed through SplitMix64 to obtain the ChaCha key; the index
//! selects one of the 2^64 ChaCha streams under that key. Work items can
//! therefore be processed in any order or on any number of threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a role label.
pub fn derive_seed(master: u64, role: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(role.as_bytes())))
}

/// Returns the RNG for work item `index` of `role` under `master`.
pub fn stream(master: u64, role: &str, index: u64) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, role));
    rng.set_stream(index);
    rng
}
