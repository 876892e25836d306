//! Counter-addressed Gaussian draws.
//!
//! Draw `(mode, step)` of stream `(seed, stream)` always comes from the same
//! ChaCha8 keystream position, so a path is reproducible regardless of the
//! order or thread in which its pieces are generated.

use std::f64::consts::TAU;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32-bit keystream words consumed by one Box–Muller pair (two `u64`).
const WORDS_PER_PAIR: u128 = 4;
/// Pairs addressable per mode.
const PAIR_STRIDE: u128 = 1 << 36;

#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Standard normal draw addressed by `(mode, step)`.
    pub fn normal(&mut self, mode: usize, step: usize) -> f64 {
        self.seek(mode, step / 2);
        let (c, s) = self.next_pair();
        if step.is_multiple_of(2) {
            c
        } else {
            s
        }
    }

    /// Fills `out[j]` with draw `(mode, start + j)`.
    pub fn fill_mode(&mut self, mode: usize, start: usize, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        self.seek(mode, start / 2);
        let mut rest = out;
        if start % 2 == 1 {
            rest[0] = self.next_pair().1;
            rest = &mut rest[1..];
        }
        let mut chunks = rest.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (c, s) = self.next_pair();
            pair[0] = c;
            pair[1] = s;
        }
        if let [last] = chunks.into_remainder() {
            *last = self.next_pair().0;
        }
    }

    fn seek(&mut self, mode: usize, pair: usize) {
        debug_assert!((pair as u128) < PAIR_STRIDE);
        let index = mode as u128 * PAIR_STRIDE + pair as u128;
        self.rng.set_word_pos(index * WORDS_PER_PAIR);
    }

    /// Box–Muller: two `u64` give the normals for an even step and the
    /// odd step after it.
    fn next_pair(&mut self) -> (f64, f64) {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * SCALE;
        let u2 = (self.rng.next_u64() >> 11) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        (r * c, r * s)
    }
}
