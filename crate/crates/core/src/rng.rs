//! Per-consumer random streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Independent generator for the consumer named `stream`.
///
/// Streams depend only on `(master, stream)`, so adding or reordering
/// consumers never perturbs the others.
pub fn stream_rng(master: u64, stream: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stream.as_bytes());
    let seed: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(seed)
}
