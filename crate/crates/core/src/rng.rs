//! Seed derivation.
//!
//! A master seed is expanded into named substreams by hashing `(seed, tag)` or
//! `(seed, a, b)` through the SplitMix64 finalizer. Each derived seed keys an
//! independent ChaCha8 stream, so replicates, engines and per-step draws never
//! share random numbers and can be regenerated in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SeedTree {
    seed: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { seed: master }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Named child, e.g. `"truth"`, `"sensor"`, `"hmm"`.
    pub fn child(&self, tag: &str) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(fnv1a(tag))),
        }
    }

    /// Indexed child, e.g. replicate `i`.
    pub fn index(&self, i: u64) -> Self {
        Self {
            seed: splitmix64(self.seed.wrapping_add(splitmix64(i ^ 0x5851_F42D_4C95_7F2D))),
        }
    }

    pub fn stream(&self) -> Stream {
        Stream::seed_from_u64(self.seed)
    }

    /// Stream keyed by two counters (typically time step and label/chunk).
    pub fn stream_at(&self, a: u64, b: u64) -> Stream {
        self.index(a).index(b).stream()
    }
}
