//! Training schedules: iteration budget, posterior temperature and
//! dictionary noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Piecewise-linear schedule over the fraction of the iteration budget.
/// Values are held constant before the first and after the last anchor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    anchors: Vec<(f64, f64)>,
}

impl Schedule {
    pub fn new(anchors: Vec<(f64, f64)>) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::config("schedule needs at least one anchor"));
        }
        if anchors.iter().any(|(p, v)| !p.is_finite() || !v.is_finite()) {
            return Err(Error::config("schedule anchors must be finite"));
        }
        if anchors.iter().any(|(p, _)| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("schedule positions must lie in [0, 1]"));
        }
        if anchors.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config("schedule positions must be strictly increasing"));
        }
        Ok(Self { anchors })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            anchors: vec![(0.0, value)],
        }
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    pub fn value_at(&self, position: f64) -> f64 {
        let first = self.anchors[0];
        if position <= first.0 {
            return first.1;
        }
        for w in self.anchors.windows(2) {
            let ((p0, v0), (p1, v1)) = (w[0], w[1]);
            if position <= p1 {
                let t = (position - p0) / (p1 - p0);
                return v0 + t * (v1 - v0);
            }
        }
        self.anchors[self.anchors.len() - 1].1
    }
}

/// Scheduled control values at the current iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealState {
    pub iteration: usize,
    pub max_iterations: usize,
    /// Posterior temperature, never below 1.
    pub temperature: f64,
    /// Dictionary noise std as a multiple of each column's RMS.
    pub w_noise_std: f64,
    /// Sharpness of the soft winner rule for max superposition; `None`
    /// selects hard winners.
    pub rho: Option<f64>,
    pub finished: bool,
}

impl AnnealState {
    /// Temperature 1, no noise, hard winners.
    pub fn inert() -> Self {
        Self {
            iteration: 0,
            max_iterations: 1,
            temperature: 1.0,
            w_noise_std: 0.0,
            rho: None,
            finished: false,
        }
    }

    pub fn is_inert(&self) -> bool {
        self.temperature == 1.0 && self.w_noise_std == 0.0 && self.rho.is_none()
    }
}

pub trait Annealing {
    fn state(&self) -> &AnnealState;

    /// Advances one iteration.
    fn next(&mut self) -> Result<()>;

    /// Returns to iteration 0.
    fn reset(&mut self);
}

/// Budgeted schedule with linearly interpolated temperature and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAnnealing {
    max_iterations: usize,
    temperature: Schedule,
    w_noise: Schedule,
    rho: Option<Schedule>,
    state: AnnealState,
}

impl LinearAnnealing {
    /// Fixed budget with temperature 1 and no noise throughout.
    pub fn new(max_iterations: usize) -> Result<Self> {
        linear_annealing(max_iterations, None, None)
    }

    pub fn with_rho(mut self, rho: Schedule) -> Self {
        self.rho = Some(rho);
        self.reset();
        self
    }

    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    pub fn temperature_schedule(&self) -> &Schedule {
        &self.temperature
    }

    pub fn w_noise_schedule(&self) -> &Schedule {
        &self.w_noise
    }

    pub fn rho_schedule(&self) -> Option<&Schedule> {
        self.rho.as_ref()
    }

    fn state_at(&self, iteration: usize) -> AnnealState {
        let pos = iteration as f64 / self.max_iterations as f64;
        AnnealState {
            iteration,
            max_iterations: self.max_iterations,
            temperature: self.temperature.value_at(pos).max(1.0),
            w_noise_std: self.w_noise.value_at(pos).max(0.0),
            rho: self.rho.as_ref().map(|r| r.value_at(pos)),
            finished: iteration >= self.max_iterations,
        }
    }
}

/// Builds a [`LinearAnnealing`]; omitted schedules default to `T ≡ 1` and
/// zero noise.
pub fn linear_annealing(
    max_iterations: usize,
    temperature: Option<Schedule>,
    w_noise: Option<Schedule>,
) -> Result<LinearAnnealing> {
    if max_iterations == 0 {
        return Err(Error::config("max_iterations must be at least 1"));
    }
    let mut a = LinearAnnealing {
        max_iterations,
        temperature: temperature.unwrap_or_else(|| Schedule::constant(1.0)),
        w_noise: w_noise.unwrap_or_else(|| Schedule::constant(0.0)),
        rho: None,
        state: AnnealState::inert(),
    };
    a.reset();
    Ok(a)
}

impl Annealing for LinearAnnealing {
    fn state(&self) -> &AnnealState {
        &self.state
    }

    fn next(&mut self) -> Result<()> {
        if self.state.finished {
            return Err(Error::config("annealing schedule already finished"));
        }
        self.state = self.state_at(self.state.iteration + 1);
        Ok(())
    }

    fn reset(&mut self) {
        self.state = self.state_at(0);
    }
}
