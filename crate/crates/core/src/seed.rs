//! Deterministic random substreams derived from one root seed.
//!
//! Every consumer of randomness asks for a `(stream, index)` pair; the pair is
//! mixed with the root seed through splitmix64 and used to seed a ChaCha8
//! generator. Streams never share state, so results do not depend on the order
//! in which (possibly parallel) workers draw from them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named substreams. The discriminant is part of the derivation, so the order
/// of variants must never change.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Env = 1,
    Init = 2,
    Sampling = 3,
    Dataset = 4,
    Codec = 5,
    Eval = 6,
    Bootstrap = 7,
    GradCheck = 8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// A child tree, used to give each experiment (scheme, beta, ...) its own
    /// namespace of streams.
    pub fn child(&self, tag: u64) -> SeedTree {
        SeedTree {
            root: splitmix64(self.root ^ splitmix64(tag.wrapping_add(0xA5A5_A5A5))),
        }
    }

    pub fn seed(&self, stream: Stream, index: u64) -> u64 {
        let a = splitmix64(self.root ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        splitmix64(a ^ splitmix64(index))
    }

    pub fn rng(&self, stream: Stream, index: u64) -> Rng {
        Rng::seed_from_u64(self.seed(stream, index))
    }
}

/// Stable 64-bit tag for a string, for use with [`SeedTree::child`].
pub fn tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3))
}
