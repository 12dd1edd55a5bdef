//! Deterministic random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), keyed by
//! the user seed. Each consumer gets its own 64-bit stream id built from a
//! domain tag, the force count and a sample index, so results never depend
//! on iteration order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// What a stream is used for; part of the stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Domain {
    ForceList = 1,
    Augmentation = 2,
    Split = 3,
    Evaluation = 4,
}

/// Stream for `(domain, m, index)` under `seed`. `index` must fit in 48 bits.
pub fn stream(seed: u64, domain: Domain, m: usize, index: u64) -> StreamRng {
    debug_assert!(index < (1 << 48));
    debug_assert!(m < 256);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((domain as u64) << 56) | ((m as u64 & 0xff) << 48) | (index & ((1 << 48) - 1));
    rng.set_stream(id);
    rng
}
