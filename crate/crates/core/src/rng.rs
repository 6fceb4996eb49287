//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream that is
//! addressed by `(master seed, purpose, major, minor)`. The 256-bit ChaCha key
//! is derived from `(master, purpose, major)` with SplitMix64 and `minor`
//! selects one of the 2^64 ChaCha streams under that key. Work is cut into
//! fixed-size chunks and each chunk owns its own stream, so results do not
//! depend on how many worker threads process the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The concrete generator used everywhere.
pub type Stream = ChaCha8Rng;

/// Number of consecutive work items that share one stream.
pub const CHUNK: usize = 1024;

/// What a stream is used for. Distinct purposes never share a key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u64)]
pub enum Purpose {
    Iterate = 1,
    Distance = 2,
    Audit = 3,
    Lattice = 4,
    Moments = 5,
    Init = 6,
    Simulate = 7,
    Density = 8,
    Misc = 9,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of the stream hierarchy for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        SeedTree { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream addressed by `(purpose, major, minor)`.
    pub fn stream(&self, purpose: Purpose, major: u64, minor: u64) -> Stream {
        let mut state = self.master ^ (purpose as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
        let _ = splitmix64(&mut state);
        state ^= major.wrapping_mul(0xA24B_AED4_963E_E407);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(minor);
        rng
    }

    /// A child tree, used to hand independent seeds to sub-computations.
    pub fn child(&self, purpose: Purpose, index: u64) -> SeedTree {
        let mut state = self.master ^ (purpose as u64).rotate_left(17) ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        SeedTree { master: splitmix64(&mut state) }
    }
}

/// Packs an equation index and a chunk index into one stream selector.
pub fn minor(equation: usize, chunk: usize) -> u64 {
    ((equation as u64) << 40) | chunk as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_address_same_stream() {
        let t = SeedTree::new(42);
        let a: Vec<u64> = (0..8).map({
            let mut s = t.stream(Purpose::Iterate, 3, minor(1, 7));
            move |_| s.random()
        }).collect();
        let mut s = t.stream(Purpose::Iterate, 3, minor(1, 7));
        let b: Vec<u64> = (0..8).map(|_| s.random()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn different_addresses_differ() {
        let t = SeedTree::new(42);
        let first = |p, major, m| -> u64 { t.stream(p, major, m).random() };
        let base = first(Purpose::Iterate, 0, 0);
        assert_ne!(base, first(Purpose::Iterate, 1, 0));
        assert_ne!(base, first(Purpose::Iterate, 0, 1));
        assert_ne!(base, first(Purpose::Audit, 0, 0));
        assert_ne!(base, SeedTree::new(43).stream(Purpose::Iterate, 0, 0).random::<u64>());
    }
}
