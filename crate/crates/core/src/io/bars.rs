//! Synthetic bars data: `R × R` images built from `R` horizontal and `R`
//! vertical bars.

use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::models::maxcauses::{effective_weight, Superposition};
use crate::rng::RngStream;

pub const DEFAULT_AMPLITUDE: f64 = 10.0;
pub const DEFAULT_NOISE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarsMode {
    Linear,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarsConfig {
    pub size: usize,
    pub n: usize,
    /// Activation probability per bar; `None` means `2 / H`.
    pub prob: Option<f64>,
    pub amplitude: f64,
    pub noise: f64,
    pub mode: BarsMode,
}

impl BarsConfig {
    pub fn new(size: usize, n: usize, mode: BarsMode) -> Self {
        Self {
            size,
            n,
            prob: None,
            amplitude: DEFAULT_AMPLITUDE,
            noise: DEFAULT_NOISE,
            mode,
        }
    }

    pub fn bars(&self) -> usize {
        2 * self.size
    }

    pub fn prob(&self) -> f64 {
        self.prob.unwrap_or(2.0 / self.bars() as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::config("bars size must be positive"));
        }
        let p = self.prob();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("bar probability must lie in [0, 1], got {p}")));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::config("bar amplitude must be finite"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("bar noise must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BarsData {
    pub data: DataSet,
    /// `D × H`; columns `0..R` are horizontal bars, `R..2R` vertical.
    pub truth: DenseMatrix,
    /// `N × H` binary activations.
    pub latents: DenseMatrix,
}

/// The `R² × 2R` bars dictionary with pixel `(i, j)` at index `i R + j`.
pub fn bars_dictionary(size: usize, amplitude: f64) -> DenseMatrix {
    let mut w = DenseMatrix::zeros(size * size, 2 * size);
    for k in 0..size {
        for j in 0..size {
            w.set(k * size + j, k, amplitude);
            w.set(j * size + k, size + k, amplitude);
        }
    }
    w
}

pub fn generate_bars(config: &BarsConfig, rng: &mut RngStream) -> Result<BarsData> {
    config.validate()?;
    let truth = bars_dictionary(config.size, config.amplitude);
    let (d, h) = truth.shape();
    let p = config.prob();
    let mut y = DenseMatrix::zeros(config.n, d);
    let mut latents = DenseMatrix::zeros(config.n, h);
    let mut s = vec![0.0; h];
    for n in 0..config.n {
        for (c, v) in s.iter_mut().enumerate() {
            *v = f64::from(u8::from(rng.bernoulli(p)));
            latents.set(n, c, *v);
        }
        let mean = match config.mode {
            BarsMode::Linear => truth.mul_vec(&s),
            BarsMode::Max => effective_weight(&truth, &s, Superposition::Max),
        };
        for (o, m) in y.row_mut(n).iter_mut().zip(&mean) {
            *o = m + config.noise * rng.normal();
        }
    }
    Ok(BarsData {
        data: DataSet::real(y),
        truth,
        latents,
    })
}
