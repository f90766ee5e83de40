//! Per-trial random streams.
//!
//! Every trial draws from its own ChaCha8 stream keyed by `(seed, domain)`
//! and indexed by the trial number, so results do not depend on which
//! thread runs a trial or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separates the key spaces of independent consumers sharing one user seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Distribution = 1,
    Resampling = 2,
    Sde = 3,
    Chain = 4,
    Collapse = 5,
    Grid = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, domain, index)`.
pub fn stream_rng(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = seed ^ ((domain as u64) << 56);
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. one seed per distribution in a grid cell.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ ((domain as u64) << 56)) ^ index)
}
