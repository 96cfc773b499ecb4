//! Hierarchically keyed deterministic random streams.
//!
//! A stream is identified by a master seed and a path of integers
//! (phase, generation, individual, ...). Two streams with the same seed and
//! path produce the same values no matter which thread owns them or in what
//! order they are consumed.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Top-level stream tags. Each consumer roots its streams at one of these.
pub mod tags {
    pub const SYNTH: u64 = 1;
    pub const MODEL_INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SEARCH_INIT: u64 = 4;
    pub const SEARCH_GENERATION: u64 = 5;
    pub const FITNESS: u64 = 6;
    pub const GUIDED_SET: u64 = 7;
    pub const GUIDED_TRAIN: u64 = 8;
    pub const VAL_SUBSET: u64 = 9;
    pub const DEMO: u64 = 10;
}

#[derive(Clone, Debug)]
pub struct SeededRng {
    master_seed: u64,
    path_hash: u64,
    inner: ChaCha8Rng,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn extend_path(path_hash: u64, component: u64) -> u64 {
    let mut s = path_hash ^ component.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    splitmix64(&mut s)
}

impl SeededRng {
    /// Stream for `master_seed` at the given key path.
    pub fn new(master_seed: u64, key: &[u64]) -> Self {
        let mut s = master_seed;
        let root = splitmix64(&mut s);
        let path_hash = key.iter().fold(root, |h, &k| extend_path(h, k));
        Self::from_parts(master_seed, path_hash)
    }

    fn from_parts(master_seed: u64, path_hash: u64) -> Self {
        let mut s = path_hash;
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        SeededRng {
            master_seed,
            path_hash,
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Child stream one level below this one. Independent of how much of the
    /// parent stream has already been consumed.
    pub fn child(&self, component: u64) -> Self {
        Self::from_parts(self.master_seed, extend_path(self.path_hash, component))
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
