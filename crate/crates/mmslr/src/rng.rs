//! Deterministic seeded randomness. Every stochastic choice in the crate
//! flows through this wrapper so a 64-bit seed reproduces a run exactly.

use crate::tensor::Tensor;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Child generator with an independent stream, derived deterministically.
    pub fn split(&mut self, stream: u64) -> Rng {
        let seed = self.inner.random::<u64>() ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Rng::new(seed)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.inner.random::<f64>()
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1: f64 = self.inner.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = self.inner.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn range(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bool(&mut self, p_true: f64) -> bool {
        self.inner.random::<f64>() < p_true
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates, explicit so the draw order is pinned.
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }

    pub fn tensor_normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor {
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| std * self.normal()).collect();
        Tensor::new(shape, data).expect("shape/data consistent by construction")
    }

    /// Xavier-uniform init: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn tensor_xavier(&mut self, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| self.uniform(-a, a)).collect();
        Tensor::new(shape, data).expect("shape/data consistent by construction")
    }
}
