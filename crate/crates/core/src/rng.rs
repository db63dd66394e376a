//! Named random sub-streams derived from one master seed.
//!
//! Every component draws from its own stream, so switching e.g. the allocator
//! leaves the mobility, fading and success draws untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub type SimRng = ChaCha12Rng;

/// Derive a deterministic generator for `(master_seed, name)`.
pub fn stream(master_seed: u64, name: &str) -> SimRng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    SimRng::from_seed(seed)
}

/// Named streams used by the harness.
#[derive(Debug, Clone)]
pub struct Streams {
    pub mobility: SimRng,
    pub channel: SimRng,
    pub success: SimRng,
    pub ssl: SimRng,
    pub sac: SimRng,
    pub allocator: SimRng,
}

impl Streams {
    pub fn new(master_seed: u64) -> Self {
        Self {
            mobility: stream(master_seed, "mobility"),
            channel: stream(master_seed, "channel"),
            success: stream(master_seed, "success"),
            ssl: stream(master_seed, "ssl"),
            sac: stream(master_seed, "sac"),
            allocator: stream(master_seed, "allocator"),
        }
    }
}
