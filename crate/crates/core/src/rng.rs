//! Seeded random streams with serializable state.
//!
//! Every randomized operation takes an explicit [`RngStream`]. Streams are
//! derived from a root seed plus a path of integers so that independent call
//! sites never share draws, and the full generator state can be written into
//! a checkpoint and restored bit-exactly.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

/// Portable snapshot of a stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Stream for `path` under `seed`; distinct paths give unrelated streams.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut h = splitmix64(seed);
        for &p in path {
            h = splitmix64(h ^ splitmix64(p.wrapping_add(0x51_7CC1_B727_220A)));
        }
        Self::new(h)
    }

    /// Fresh child stream; advances `self` by one draw.
    pub fn split(&mut self) -> Self {
        let s = self.inner.next_u64();
        Self::new(s)
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's nearly-divisionless method, fixed so results are portable.
        let n = n as u64;
        loop {
            let x = self.inner.next_u64();
            let m = (x as u128) * (n as u128);
            let low = m as u64;
            if low >= n || low >= n.wrapping_neg() % n {
                return (m >> 64) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: hex_encode(&self.inner.get_seed()),
            stream: self.inner.get_stream(),
            word_pos: format!("{:x}", self.inner.get_word_pos()),
        }
    }

    pub fn from_state(state: &RngState) -> Result<Self> {
        let bytes = hex_decode(&state.seed)
            .filter(|b| b.len() == 32)
            .ok_or_else(|| Error::input("rng state: seed must be 64 hex digits"))?;
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&bytes);
        let word_pos = u128::from_str_radix(&state.word_pos, 16)
            .map_err(|_| Error::input("rng state: bad word position"))?;
        let mut inner = ChaCha8Rng::from_seed(seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(word_pos);
        Ok(Self { inner })
    }
}

impl RngCore for RngStream {
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

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}
