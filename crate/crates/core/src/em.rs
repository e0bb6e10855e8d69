//! The EM loop: annealing schedule × model step, with logging and early
//! stopping.

use std::time::Instant;

use crate::annealing::{AnnealState, Annealing};
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{Model, PointInference};
use crate::parallel::{map_reduce, Executor, ShardPlan};
use crate::rng::RngStream;

/// Default number of row shards. Kept independent of the worker count so
/// results do not depend on how many threads run them.
pub const DEFAULT_SHARDS: usize = 64;

/// Stream index (under the run seed) used for dictionary noise.
pub const NOISE_STREAM: u64 = 1;

/// Receives the per-iteration trace and parameter snapshots.
pub trait RunLogger<P> {
    fn iteration(&mut self, iteration: usize, free_energy: f64, seconds: f64, params: &P) -> Result<()>;

    /// Called with the last finite parameters before a numerical abort.
    fn abort(&mut self, _iteration: usize, _params: &P, _reason: &str) -> Result<()> {
        Ok(())
    }
}

/// Discards everything.
pub struct NullLogger;

impl<P> RunLogger<P> for NullLogger {
    fn iteration(&mut self, _: usize, _: f64, _: f64, _: &P) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult<P> {
    pub final_params: P,
    pub free_energy_trace: Vec<f64>,
    pub iterations_run: usize,
    pub wall_times: Vec<f64>,
    pub stopped_early: bool,
}

/// Execution settings for training and inference.
#[derive(Debug)]
pub struct EmRunner {
    executor: Executor,
    shards: usize,
    convergence_tol: Option<f64>,
    seed: u64,
}

impl EmRunner {
    pub fn new(executor: Executor, seed: u64) -> Self {
        Self {
            executor,
            shards: DEFAULT_SHARDS,
            convergence_tol: None,
            seed,
        }
    }

    pub fn sequential(seed: u64) -> Self {
        Self::new(Executor::sequential(), seed)
    }

    pub fn with_shards(mut self, shards: usize) -> Self {
        self.shards = shards.max(1);
        self
    }

    /// Enables early stopping once `|F_t − F_{t−1}| ≤ tol (1 + |F_t|)` while
    /// the annealing is inert.
    pub fn with_convergence_tol(mut self, tol: Option<f64>) -> Self {
        self.convergence_tol = tol;
        self
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn shards(&self) -> usize {
        self.shards
    }

    pub fn plan(&self, n: usize) -> Result<ShardPlan> {
        ShardPlan::even(n, self.shards, self.executor.workers())
    }

    /// One E-step over all shards followed by the M-step. Returns the new
    /// parameters and the free energy of `params`.
    pub fn step<M: Model>(
        &self,
        model: &M,
        params: &M::Params,
        data: &DataSet,
        anneal: &AnnealState,
        noise_rng: &mut RngStream,
    ) -> Result<(M::Params, f64)> {
        let plan = self.plan(data.n())?;
        let stats = map_reduce(&self.executor, &plan, |rows| model.estep(params, data, rows, anneal))?;
        let free_energy = model.free_energy(&stats);
        let mut next = model.mstep(params, &stats, anneal)?;
        if anneal.w_noise_std > 0.0 {
            model.perturb(&mut next, anneal.w_noise_std, noise_rng);
        }
        Ok((next, free_energy))
    }

    /// Runs EM until the schedule is exhausted (or converged, if enabled).
    pub fn run<M: Model>(
        &self,
        model: &M,
        init: M::Params,
        data: &DataSet,
        annealing: &mut dyn Annealing,
        logger: &mut dyn RunLogger<M::Params>,
    ) -> Result<TrainResult<M::Params>> {
        model.check_data(&init, data)?;
        let mut noise_rng = RngStream::derive(self.seed, NOISE_STREAM);
        let mut params = init;
        let mut trace = Vec::new();
        let mut times = Vec::new();
        let mut stopped_early = false;
        while !annealing.state().finished {
            let state = annealing.state().clone();
            let started = Instant::now();
            let (next, f) = self.step(model, &params, data, &state, &mut noise_rng)?;
            let secs = started.elapsed().as_secs_f64();
            if !f.is_finite() {
                let reason = format!("non-finite free energy {f} at iteration {}", state.iteration);
                logger.abort(state.iteration, &params, &reason)?;
                return Err(Error::numerical(reason));
            }
            trace.push(f);
            times.push(secs);
            log::debug!("iteration {} F={f} ({secs:.3}s)", state.iteration);
            logger.iteration(state.iteration, f, secs, &next)?;
            params = next;
            annealing.next()?;
            if let (Some(tol), [.., prev, last]) = (self.convergence_tol, trace.as_slice()) {
                if state.is_inert() && (last - prev).abs() <= tol * (1.0 + last.abs()) {
                    stopped_early = true;
                    break;
                }
            }
        }
        Ok(TrainResult {
            final_params: params,
            iterations_run: trace.len(),
            free_energy_trace: trace,
            wall_times: times,
            stopped_early,
        })
    }

    /// MAP states, their probabilities and posterior means for every point.
    pub fn inference<M: Model>(&self, model: &M, params: &M::Params, data: &DataSet) -> Result<Inference> {
        model.check_data(params, data)?;
        let plan = self.plan(data.n())?;
        let parts = self.executor.map_shards(&plan, |_, rows| {
            rows.map(|n| model.infer_point(params, data.point(n)))
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(Inference::collect(model.latent_dim(), parts.into_iter().flatten()))
    }
}

/// Per-point inference results stacked into matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// `N × H` most probable configurations.
    pub s: DenseMatrix,
    /// Their posterior probabilities.
    pub p: Vec<f64>,
    /// `N × H` posterior means.
    pub expectations: DenseMatrix,
}

impl Inference {
    fn collect(h: usize, points: impl Iterator<Item = PointInference>) -> Self {
        let mut s = Vec::new();
        let mut p = Vec::new();
        let mut e = Vec::new();
        for pt in points {
            s.extend(pt.map_state);
            p.push(pt.map_prob);
            e.extend(pt.mean);
        }
        let n = p.len();
        Self {
            s: DenseMatrix::new(n, h, s).expect("shape"),
            p,
            expectations: DenseMatrix::new(n, h, e).expect("shape"),
        }
    }
}
