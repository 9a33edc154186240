//! Named seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value derived as `sha256(parent_le_bytes || "/" || label)`. Deriving
//! `root -> "fold/3" -> "restart/7"` always yields the same stream, whatever
//! order or thread the work runs on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    hasher.update(b"/");
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derive along a `/`-separated path, one segment at a time.
pub fn derive_path(root: u64, path: &str) -> u64 {
    path.split('/')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .chunks(2)
        .fold(root, |seed, seg| derive_seed(seed, &seg.join("/")))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
