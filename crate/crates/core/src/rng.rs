//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed, a domain tag
//! and two counters (for example step and group index). The 256-bit key is
//! the little-endian concatenation of those four words, so distinct tuples
//! never share a stream and any stream can be rebuilt in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag mixed into the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    MaskSample = 1,
    Schedule = 3,
    TaskData = 4,
    Baseline = 5,
    Oracle = 6,
    Tracker = 7,
    Verify = 8,
    Sweep = 10,
}

/// Builds the stream for `(seed, domain, a, b)`.
pub fn substream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (slot, word) in key
        .chunks_exact_mut(8)
        .zip([seed, domain as u64, a, b])
    {
        slot.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
