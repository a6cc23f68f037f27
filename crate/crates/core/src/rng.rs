//! Deterministic per-key random streams derived from a master seed, so that
//! serial and parallel runs (and subsets) draw identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Builds a stream seed from a master seed and an ordered list of key parts.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(master: u64) -> Self {
        StreamKey(splitmix64(master))
    }

    pub fn with_str(self, part: &str) -> Self {
        StreamKey(splitmix64(self.0 ^ fnv1a(part.as_bytes())))
    }

    pub fn with_int(self, part: i64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(part as u64)))
    }

    pub fn rng(self) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
