//! Seeded random streams split per (purpose, agent, period).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent stream for one draw site; the same arguments always give the same stream.
pub fn stream(root: u64, tag: &str, agent: u32, period: u32) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(agent.to_le_bytes());
    h.update(period.to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}
