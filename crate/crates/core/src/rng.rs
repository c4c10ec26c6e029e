//! Named random streams derived from one root seed.
//!
//! Every consumer of randomness (dataset generation, pairing, masks, weight
//! init) draws from its own stream, so changing one component never shifts
//! the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Generator for `(root, name, index)`.
pub fn stream(root: u64, name: &str, index: u64) -> StreamRng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&root.to_le_bytes());
    seed[8..16].copy_from_slice(&fnv1a(name).to_le_bytes());
    seed[16..24].copy_from_slice(&index.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}
