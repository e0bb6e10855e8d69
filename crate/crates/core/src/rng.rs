use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

/// Name of the generator behind [`RngStream`], recorded in run manifests.
pub const RNG_ALGORITHM: &str = "chacha20 (rand_chacha 0.9); init on stream 0, dictionary noise on stream 1";

/// Reproducible random stream. Independent streams for parallel consumers
/// are derived from `(seed, index)` via the ChaCha stream counter.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0)
    }

    pub fn derive(seed: u64, index: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(index);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Draws an index with probability proportional to `weights`.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let u = self.uniform() * total;
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        // u landed on the rounding gap at the top; take the last positive weight
        weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    pub fn poisson(&mut self, rate: f64) -> u64 {
        if rate <= 0.0 {
            return 0;
        }
        let dist = Poisson::new(rate).expect("positive finite rate");
        let x: f64 = dist.sample(&mut self.inner);
        x as u64
    }
}
