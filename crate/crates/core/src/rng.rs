//! Counter-based random streams.
//!
//! A stream is a ChaCha8 keystream selected by `(master_seed, stream)`; the
//! k-th draw depends only on that pair and k, so work split across threads in
//! any order reproduces the same numbers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream families, kept disjoint so that e.g. net points and trials never
/// share a keystream by accident.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Word = 1,
    StartPoint = 2,
    Trial = 3,
    Net = 4,
    TestFunction = 5,
    Synthetic = 6,
}

#[derive(Debug, Clone)]
pub struct StreamRng(ChaCha8Rng);

impl StreamRng {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        StreamRng(rng)
    }

    /// Stream for `(purpose, index)` under `master_seed`.
    pub fn for_task(master_seed: u64, purpose: Purpose, index: u64) -> Self {
        Self::new(master_seed, stream_id(purpose, index))
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer; a bijection on u64.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_id(purpose: Purpose, index: u64) -> u64 {
    mix64(mix64(purpose as u64) ^ index)
}

/// Combine two indices (e.g. net point and trial) into one stream index.
pub fn pair_index(a: u64, b: u64) -> u64 {
    mix64(a.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ mix64(b))
}
