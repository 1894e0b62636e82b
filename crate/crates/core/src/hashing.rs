//! Platform-independent hashing and pseudo-random streams for the mocks.
//!
//! Hash-to-unit-vector: the text bytes are hashed with 64-bit FNV-1a, the
//! hash is xor-ed with the SplitMix64 mix of the seed, and the result starts
//! a 64-bit linear congruential stream (Knuth's MMIX constants). Each step's
//! state goes through the SplitMix64 finalizer; the top 53 bits give a
//! uniform draw in [0, 1), mapped to [-1, 1). D draws are normalized to unit
//! length in f64 and stored as f32.

use alloc::vec::Vec;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const LCG_MUL: u64 = 6_364_136_223_846_793_005;
const LCG_INC: u64 = 1_442_695_040_888_963_407;

/// Incremental 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv64(u64);

impl Default for Fnv64 {
    fn default() -> Self {
        Fnv64(FNV_OFFSET)
    }
}

impl Fnv64 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn write(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    /// Writes a length-prefixed field so adjacent fields cannot alias.
    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        self.write(&(bytes.len() as u64).to_le_bytes());
        self.write(bytes)
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    Fnv64::new().write(bytes).finish()
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The mixed congruential stream described in the module docs.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

impl Stream {
    pub fn new(seed: u64, key: u64) -> Self {
        Stream { state: key ^ mix64(seed) }
    }

    pub fn from_bytes(seed: u64, bytes: &[u8]) -> Self {
        Self::new(seed, fnv1a64(bytes))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(LCG_MUL).wrapping_add(LCG_INC);
        mix64(self.state)
    }

    /// Uniform in [0, 1).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n`. `n` must be non-zero.
    pub fn next_index(&mut self, n: usize) -> usize {
        (self.next_f64() * n as f64) as usize % n
    }
}

/// Deterministic pseudo-random unit vector of dimension `dim` for `bytes`.
pub fn unit_vector(seed: u64, bytes: &[u8], dim: usize) -> Vec<f32> {
    let mut stream = Stream::from_bytes(seed, bytes);
    let raw: Vec<f64> = (0..dim).map(|_| 2.0 * stream.next_f64() - 1.0).collect();
    normalize(&raw)
}

/// Normalizes to unit length in f64, then narrows. A zero vector maps to e0.
pub fn normalize(v: &[f64]) -> Vec<f32> {
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if norm == 0.0 || !norm.is_finite() {
        let mut e0 = alloc::vec![0.0f32; v.len()];
        if let Some(first) = e0.first_mut() {
            *first = 1.0;
        }
        return e0;
    }
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// Uniform draw in [0, 1) keyed by `(seed, bytes)`.
pub fn unit_draw(seed: u64, bytes: &[u8]) -> f64 {
    Stream::from_bytes(seed, bytes).next_f64()
}
