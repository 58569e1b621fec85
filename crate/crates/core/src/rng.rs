//! Counter-addressed random streams.
//!
//! A stream is identified by `(seed, stream)` and positioned by a 64-bit
//! counter of consumed words, so any draw can be replayed from its
//! coordinates alone. The keystream is ChaCha12; integer and float
//! conversions are done here with fixed-width arithmetic so the output does
//! not depend on the platform's pointer width.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    counter: u64,
    core: ChaCha12Rng,
}

/// Independent draw purposes. Each worker gets its own stream per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Batch = 1,
    Block = 2,
    Delay = 3,
    Synthesis = 4,
    Variance = 5,
    Audit = 6,
}

impl StreamKind {
    pub fn id(self, worker: usize) -> u64 {
        ((self as u64) << 32) | worker as u64
    }
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self::at(seed, stream, 0)
    }

    pub fn for_kind(seed: u64, kind: StreamKind, worker: usize) -> Self {
        Self::new(seed, kind.id(worker))
    }

    /// Stream positioned after `counter` 64-bit words.
    pub fn at(seed: u64, stream: u64, counter: u64) -> Self {
        let mut core = ChaCha12Rng::seed_from_u64(seed);
        core.set_stream(stream);
        core.set_word_pos(u128::from(counter) * 2);
        Self {
            seed,
            stream,
            counter,
            core,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        self.counter += 1;
        self.core.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `0..n` (Lemire's multiply-shift with rejection). `n > 0`.
    #[inline]
    pub fn uniform_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_index needs a nonempty range");
        let range = n as u64;
        let mut m = u128::from(self.next_word()) * u128::from(range);
        if (m as u64) < range {
            let threshold = range.wrapping_neg() % range;
            while (m as u64) < threshold {
                m = u128::from(self.next_word()) * u128::from(range);
            }
        }
        (m >> 64) as usize
    }

    /// Standard normal via the polar method (uses only `sqrt` and `ln`).
    pub fn standard_normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let w = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&w[..chunk.len()]);
        }
    }
}
