//! The contract every generative model implements.

use std::collections::BTreeMap;
use std::ops::Range;

use crate::annealing::AnnealState;
use crate::data::DataSet;
use crate::error::Result;
use crate::linalg::DenseMatrix;
use crate::parallel::SuffStats;
use crate::rng::RngStream;

/// Posterior summary for one data point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointInference {
    /// Most probable latent configuration among the enumerated states.
    pub map_state: Vec<f64>,
    /// Its (truncated) posterior probability.
    pub map_prob: f64,
    /// Posterior mean of the latents.
    pub mean: Vec<f64>,
}

/// Samples drawn from a model: observations and the latents behind them.
#[derive(Debug, Clone)]
pub struct Sample {
    pub data: DataSet,
    pub latents: DenseMatrix,
}

/// A generative model `p(s | Θ) p(y | f(Θ, s))` trained by (truncated) EM.
///
/// One EM step is `estep` over every shard, an ordered reduction of the
/// statistics, then `mstep`. The free energy of a step is the summed log
/// partition of the E-step, evaluated at temperature 1.
pub trait Model: Sync {
    type Params: Clone + Send + Sync + std::fmt::Debug;
    type Stats: SuffStats;

    fn name(&self) -> &'static str;

    /// Number of latent units (or mixture components).
    fn latent_dim(&self) -> usize;

    /// Rejects datasets whose shape or kind does not fit `params`.
    fn check_data(&self, params: &Self::Params, data: &DataSet) -> Result<()>;

    fn standard_init(&self, data: &DataSet, rng: &mut RngStream) -> Result<Self::Params>;

    /// Posterior statistics for `rows` of `data`.
    fn estep(
        &self,
        params: &Self::Params,
        data: &DataSet,
        rows: Range<usize>,
        anneal: &AnnealState,
    ) -> Result<Self::Stats>;

    fn free_energy(&self, stats: &Self::Stats) -> f64;

    fn mstep(&self, params: &Self::Params, stats: &Self::Stats, anneal: &AnnealState) -> Result<Self::Params>;

    /// Adds zero-mean Gaussian noise with std `scale × column RMS` to the
    /// dictionary, then restores parameter constraints.
    fn perturb(&self, params: &mut Self::Params, scale: f64, rng: &mut RngStream);

    fn infer_point(&self, params: &Self::Params, y: &[f64]) -> Result<PointInference>;

    fn generate(&self, params: &Self::Params, n: usize, rng: &mut RngStream) -> Result<Sample>;

    /// Log-likelihood by full enumeration, when the latent space is small
    /// enough.
    fn exact_log_likelihood(&self, _params: &Self::Params, _data: &DataSet) -> Option<Result<f64>> {
        None
    }

    fn params_to_arrays(&self, params: &Self::Params) -> BTreeMap<String, DenseMatrix>;

    fn params_from_arrays(&self, arrays: &BTreeMap<String, DenseMatrix>) -> Result<Self::Params>;

    /// Human-readable description of the initialization scheme.
    fn init_description(&self) -> String;
}

/// Adds `N(0, (scale · rms_h)²)` to each entry of column `h`.
pub(crate) fn perturb_columns(w: &mut DenseMatrix, scale: f64, rng: &mut RngStream) {
    if scale <= 0.0 {
        return;
    }
    let rms = w.column_rms();
    for r in 0..w.rows() {
        for (c, v) in w.row_mut(r).iter_mut().enumerate() {
            *v += scale * rms[c] * rng.normal();
        }
    }
}

pub(crate) fn get_array<'a>(
    arrays: &'a BTreeMap<String, DenseMatrix>,
    name: &str,
) -> Result<&'a DenseMatrix> {
    arrays
        .get(name)
        .ok_or_else(|| crate::Error::data(format!("parameter array `{name}` missing")))
}

pub(crate) fn get_scalar(arrays: &BTreeMap<String, DenseMatrix>, name: &str) -> Result<f64> {
    let a = get_array(arrays, name)?;
    if a.data().len() != 1 {
        return Err(crate::Error::data(format!("parameter `{name}` must be a scalar")));
    }
    Ok(a.data()[0])
}

/// `W_dh = ȳ_d + ε_dh` with `ε ~ N(0, var̄ / H)`, plus the floored mean
/// variance used as the initial noise level.
pub(crate) fn mean_plus_noise_init(data: &DataSet, h: usize, rng: &mut RngStream) -> (DenseMatrix, f64) {
    let mean = data.mean();
    let mut var = data.mean_variance();
    if var < 1e-12 {
        log::warn!("data has (near) zero variance; flooring sigma2 at 1e-12");
        var = 1e-12;
    }
    let std = (var / h as f64).sqrt();
    let mut w = DenseMatrix::zeros(data.dim(), h);
    for d in 0..data.dim() {
        for c in 0..h {
            w.set(d, c, mean[d] + std * rng.normal());
        }
    }
    (w, var)
}
