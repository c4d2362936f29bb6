//! Deterministic random streams for Monte Carlo replicates.
//!
//! Every replicate owns an [`RngStream`] identified by `(seed, stream)`.
//! ChaCha supports 2^64 independent streams per seed, so replicates can be
//! dispatched in any order, or in parallel, and still reproduce bit-identical
//! draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stride between replicate stream ids, leaving room for per-purpose
/// sub-streams (simulation, fit starts, ...) inside one replicate.
const SUBSTREAM_STRIDE: u64 = 16;

/// Handle for one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngStream { seed, stream }
    }

    /// Stream owned by replicate `index` of an experiment with base `seed`.
    pub fn replicate(seed: u64, index: u64) -> Self {
        RngStream {
            seed,
            stream: index.wrapping_mul(SUBSTREAM_STRIDE),
        }
    }

    /// A sibling stream for a distinct purpose within the same replicate.
    /// `offset` must be below [`SUBSTREAM_STRIDE`].
    pub fn substream(&self, offset: u64) -> Self {
        debug_assert!(offset < SUBSTREAM_STRIDE);
        RngStream {
            seed: self.seed,
            stream: self.stream.wrapping_add(offset),
        }
    }

    /// Instantiate the generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
