//! Counter-based random streams, one per pulse.
//!
//! All pulses share one SplitMix64 sequence. Pulse `i` owns the fixed window
//! of `DRAWS_PER_PULSE` outputs starting at position `i * DRAWS_PER_PULSE`, so
//! its randomness depends only on `(seed, i)` and never on how pulses are
//! grouped into blocks or threads.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

/// SplitMix64 increment (the golden-ratio constant).
const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Upper bound on the number of 64-bit draws a single pulse may consume.
pub const DRAWS_PER_PULSE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseStreams {
    origin: u64,
}

impl PulseStreams {
    pub fn new(seed: u64) -> Self {
        // Decorrelate nearby seeds: origin is the first output of a stream
        // started at `seed`.
        let mut z = seed.wrapping_add(GOLDEN);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        PulseStreams { origin: z ^ (z >> 31) }
    }

    /// Generator positioned at the start of pulse `index`'s window.
    #[inline]
    pub fn pulse(&self, index: u64) -> SplitMix64 {
        let offset = index.wrapping_mul(DRAWS_PER_PULSE).wrapping_mul(GOLDEN);
        SplitMix64::seed_from_u64(self.origin.wrapping_add(offset))
    }
}
