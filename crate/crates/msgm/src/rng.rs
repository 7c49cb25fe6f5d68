//! Deterministic, forkable random number streams.
//!
//! A [`RngStream`] is a value addressed by `(master_seed, stream_path)`.
//! The path is a list of integers identifying where in the experiment tree
//! the stream lives (sweep cell, repeat index, training job, ...). Two
//! streams with the same address produce bit-identical draw sequences;
//! streams at different addresses are independent for practical purposes.
//!
//! The address is hashed (SplitMix64 chain) into a 256-bit key for a
//! counter-based ChaCha generator, so forking is cheap and parallel sweep
//! cells can each derive their own stream without coordination.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Address of a deterministic random stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    master_seed: u64,
    path: Vec<u64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    /// Root stream for a whole experiment.
    pub fn new(master_seed: u64) -> Self {
        RngStream {
            master_seed,
            path: Vec::new(),
        }
    }

    /// Derive a child stream; `id` distinguishes siblings.
    pub fn child(&self, id: u64) -> Self {
        let mut path = self.path.clone();
        path.push(id);
        RngStream {
            master_seed: self.master_seed,
            path,
        }
    }

    /// Convenience for several levels at once.
    pub fn descend(&self, ids: &[u64]) -> Self {
        let mut s = self.clone();
        for &id in ids {
            s = s.child(id);
        }
        s
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Hash the address into a generator. Same address, same generator state.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
        h = splitmix64(h ^ self.master_seed);
        h = splitmix64(h ^ self.path.len() as u64);
        for &p in &self.path {
            h = splitmix64(h ^ p);
        }
        let mut seed = [0u8; 32];
        let mut z = h;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        ChaCha12Rng::from_seed(seed)
    }
}
