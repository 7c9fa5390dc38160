//! Counter-derived random streams.
//!
//! Every replicate of every experiment stage draws from its own ChaCha
//! stream, keyed by `(seed, stage label, replicate index)`. Nothing about a
//! replicate's randomness depends on which thread runs it or in what order,
//! so parallel and sequential runs agree bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator handed to samplers.
pub type SimRng = ChaCha8Rng;

/// Root of a family of independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream number `index` of the stage `label`.
    pub fn stream(&self, label: &str, index: u64) -> SimRng {
        let key = mix64(self.seed ^ mix64(fnv1a64(label.as_bytes())));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index);
        rng
    }

    /// A child family, for stages nested inside other stages.
    pub fn derive(&self, label: &str) -> Streams {
        Streams {
            seed: mix64(self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15) ^ fnv1a64(label.as_bytes())),
        }
    }

    /// Child family keyed by an integer (e.g. a grid index or a series number).
    pub fn derive_index(&self, label: &str, index: u64) -> Streams {
        let base = self.derive(label);
        Streams {
            seed: mix64(base.seed ^ mix64(index.wrapping_add(1))),
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
