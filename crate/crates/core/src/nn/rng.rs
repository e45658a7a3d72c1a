use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Distribution for [`Tensor::random`](super::Tensor::random).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dist {
    Uniform(f64, f64),
    Normal(f64, f64),
    /// `normal(0, sqrt(2 / fan_in))`, fan-in taken from dims 1..4 of the shape.
    KaimingFanIn,
}

/// Seedable deterministic generator. Same seed, same stream.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent stream for task `index` under `seed`; used to hand one
    /// generator to each parallel task without sharing state.
    pub fn derive(seed: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(index.wrapping_add(1));
        Self(inner)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random::<u64>()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates with our own index draws keeps the order stable across
        // rand releases.
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub(crate) fn sample(&mut self, dist: Dist, fan_in: usize) -> f64 {
        match dist {
            Dist::Uniform(a, b) => self.uniform_in(a, b),
            Dist::Normal(mean, std) => mean + std * self.normal(),
            Dist::KaimingFanIn => (2.0 / fan_in as f64).sqrt() * self.normal(),
        }
    }
}
