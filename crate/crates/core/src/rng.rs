//! Reproducible Gaussian noise streams.
//!
//! Every draw is keyed by `(seed, stream)`. The generator is ChaCha20 with
//! its 256-bit key expanded from `seed` by `SeedableRng::seed_from_u64` and
//! its 64-bit stream id set to `stream`, so replicate `i` of an experiment
//! owns an independent substream regardless of which thread evaluates it.
//!
//! Uniforms use the top 53 bits of a `u64`. Normals use the Marsaglia polar
//! method; both variates of an accepted pair are consumed, in order.

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};

/// Stream id reserved for drawing the ground-truth singular vectors.
pub const ORIENTATION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub seed: u64,
    pub stream: u64,
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            seed,
            stream,
            sigma: 1.0,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }
}

pub struct NormalStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Uniform on [0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let x = 2.0 * self.next_uniform() - 1.0;
            let y = 2.0 * self.next_uniform() - 1.0;
            let s = x * x + y * y;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(y * f);
                return x * f;
            }
        }
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_normal();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = NormalStream::new(7, 3);
        let mut b = NormalStream::new(7, 3);
        for _ in 0..1000 {
            assert_eq!(a.next_normal().to_bits(), b.next_normal().to_bits());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = NormalStream::new(7, 0);
        let mut b = NormalStream::new(7, 1);
        let same = (0..100).filter(|_| a.next_normal() == b.next_normal()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut s = NormalStream::new(1, 0);
        for _ in 0..10_000 {
            let u = s.next_uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn neighbouring_streams_are_uncorrelated() {
        let n = 200_000;
        let mut a = NormalStream::new(11, 0);
        let mut b = NormalStream::new(11, 1);
        let corr: f64 = (0..n).map(|_| a.next_normal() * b.next_normal()).sum::<f64>() / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr = {corr}");
    }
}
