//! Maximal causes analysis (MCA) and max-magnitude causes analysis (MMCA):
//! binary latents whose dictionary columns combine by a per-dimension max
//! (MCA) or by the entry of largest magnitude (MMCA).
//!
//! The M-step is a generalized EM fixed point. For every state the winning
//! unit at each dimension is found under the current dictionary; each entry
//! `W_dh` is then the posterior-weighted average of `y_d` over the
//! (point, state) pairs in which `h` wins dimension `d`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;

use crate::annealing::AnnealState;
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{get_array, get_scalar, mean_plus_noise_init, perturb_columns, Model, PointInference, Sample};
use crate::models::linear::{summarize, PI_MIN, SIGMA2_MIN};
use crate::parallel::SuffStats;
use crate::rng::RngStream;
use crate::truncation::{posterior_weights, select_candidates, StateEnumerator, StateSet, TruncationConfig};

/// Lower bound on MCA dictionary entries.
pub const W_MIN: f64 = 1e-8;
const EVIDENCE_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Superposition {
    /// `W̄_d = max_h s_h W_dh` (MCA).
    Max,
    /// `W̄_d = W_dh*` with `h* = argmax_h s_h |W_dh|` (MMCA).
    AbsMax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McaParams {
    pub w: DenseMatrix,
    pub pi: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McaStats {
    pub n: usize,
    /// `Σ_n Σ_s q A_dh y_nd`
    pub num: DenseMatrix,
    /// `Σ_n Σ_s q A_dh`
    pub den: DenseMatrix,
    /// `Σ_n Σ_s q A_dh y_nd²`
    pub sq: DenseMatrix,
    /// `Σ_n q_n(0) ‖y_n‖²`
    pub zero_sq: f64,
    /// Expected number of active units.
    pub active: f64,
    pub log_partition: f64,
}

impl McaStats {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            n: 0,
            num: DenseMatrix::zeros(d, h),
            den: DenseMatrix::zeros(d, h),
            sq: DenseMatrix::zeros(d, h),
            zero_sq: 0.0,
            active: 0.0,
            log_partition: 0.0,
        }
    }
}

impl SuffStats for McaStats {
    fn combine(&mut self, o: &Self) {
        self.n += o.n;
        self.num.add_assign(&o.num);
        self.den.add_assign(&o.den);
        self.sq.add_assign(&o.sq);
        self.zero_sq += o.zero_sq;
        self.active += o.active;
        self.log_partition += o.log_partition;
    }
}

/// Winning unit per dimension among `units` (ascending), ties to the
/// smallest index.
fn winners_into(w: &DenseMatrix, units: &[usize], mode: Superposition, out: &mut [usize]) {
    for (d, o) in out.iter_mut().enumerate() {
        let row = w.row(d);
        let mut best = units[0];
        for &u in &units[1..] {
            let better = match mode {
                Superposition::Max => row[u] > row[best],
                Superposition::AbsMax => row[u].abs() > row[best].abs(),
            };
            if better {
                best = u;
            }
        }
        *o = best;
    }
}

/// `W̄(s)` for a dense binary `s`.
pub fn effective_weight(w: &DenseMatrix, s: &[f64], mode: Superposition) -> Vec<f64> {
    let units: Vec<usize> = (0..s.len()).filter(|&h| s[h] != 0.0).collect();
    if units.is_empty() {
        return vec![0.0; w.rows()];
    }
    let mut win = vec![0; w.rows()];
    winners_into(w, &units, mode, &mut win);
    win.iter().enumerate().map(|(d, &h)| w.get(d, h)).collect()
}

/// `D × H` zero/one matrix marking the winning unit of each dimension.
pub fn winner_indicator(w: &DenseMatrix, s: &[f64], mode: Superposition) -> Result<DenseMatrix> {
    let units: Vec<usize> = (0..s.len()).filter(|&h| s[h] != 0.0).collect();
    if units.is_empty() {
        return Err(Error::data("zero state has no winner"));
    }
    let mut win = vec![0; w.rows()];
    winners_into(w, &units, mode, &mut win);
    let mut a = DenseMatrix::zeros(w.rows(), w.cols());
    for (d, &h) in win.iter().enumerate() {
        a.set(d, h, 1.0);
    }
    Ok(a)
}

#[derive(Debug, Clone)]
pub struct MaxCauses {
    mode: Superposition,
    trunc: TruncationConfig,
    enumerator: StateEnumerator,
}

impl MaxCauses {
    pub fn new(mode: Superposition, trunc: TruncationConfig) -> Result<Self> {
        Ok(Self {
            mode,
            enumerator: StateEnumerator::new(&trunc, &[1.0])?,
            trunc,
        })
    }

    pub fn mca(trunc: TruncationConfig) -> Result<Self> {
        Self::new(Superposition::Max, trunc)
    }

    pub fn mmca(trunc: TruncationConfig) -> Result<Self> {
        Self::new(Superposition::AbsMax, trunc)
    }

    pub fn mode(&self) -> Superposition {
        self.mode
    }

    pub fn truncation(&self) -> &TruncationConfig {
        &self.trunc
    }

    pub fn with_truncation(&self, trunc: TruncationConfig) -> Result<Self> {
        Self::new(self.mode, trunc)
    }

    fn log_prior(&self, pi: f64, k: usize) -> f64 {
        k as f64 * pi.ln() + (self.trunc.h - k) as f64 * (1.0 - pi).ln()
    }

    pub fn log_joint(&self, params: &McaParams, y: &[f64], s: &[f64]) -> Result<f64> {
        if s.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::data("max-superposition latents must be binary"));
        }
        let k = s.iter().filter(|v| **v != 0.0).count();
        let wbar = effective_weight(&params.w, s, self.mode);
        let r2: f64 = y.iter().zip(&wbar).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(self.log_prior(params.pi, k) - 0.5 * y.len() as f64 * (2.0 * PI * params.sigma2).ln() - r2 / (2.0 * params.sigma2))
    }

    /// Singleton log joints without terms constant in `h`.
    pub fn selection_scores(&self, params: &McaParams, y: &[f64]) -> Vec<f64> {
        let wty = params.w.tr_mul_vec(y);
        let norms = params.w.column_sq_norms();
        let lr = params.pi.ln() - (1.0 - params.pi).ln();
        wty.iter()
            .zip(&norms)
            .map(|(wy, ww)| lr - (ww - 2.0 * wy) / (2.0 * params.sigma2))
            .collect()
    }

    fn state_set(&self, params: &McaParams, y: &[f64]) -> Result<StateSet> {
        let candidates = if self.trunc.is_full() {
            (0..self.trunc.h).collect()
        } else {
            select_candidates(&self.selection_scores(params, y), self.trunc.hprime)?
        };
        self.enumerator.build(&candidates)
    }

    /// Log joints of all states, with the per-state winners written to
    /// `winners` (`states × D`, unused for the zero state).
    fn point_log_joints(&self, params: &McaParams, y: &[f64], states: &StateSet, winners: &mut Vec<usize>, out: &mut Vec<f64>) {
        let d = y.len();
        let norm_const = -0.5 * d as f64 * (2.0 * PI * params.sigma2).ln();
        winners.clear();
        winners.resize(states.len() * d, 0);
        out.clear();
        for (i, st) in states.iter().enumerate() {
            let k = st.active_count();
            let r2: f64 = if k == 0 {
                y.iter().map(|v| v * v).sum()
            } else {
                let win = &mut winners[i * d..(i + 1) * d];
                winners_into(&params.w, st.units, self.mode, win);
                y.iter()
                    .zip(win.iter())
                    .enumerate()
                    .map(|(dd, (yd, &h))| {
                        let r = yd - params.w.get(dd, h);
                        r * r
                    })
                    .sum()
            };
            out.push(self.log_prior(params.pi, k) + norm_const - r2 / (2.0 * params.sigma2));
        }
    }

    fn check_params(&self, params: &McaParams, d: usize) -> Result<()> {
        if params.w.shape() != (d, self.trunc.h) {
            return Err(Error::data(format!(
                "dictionary is {}x{}, expected {}x{}",
                params.w.rows(),
                params.w.cols(),
                d,
                self.trunc.h
            )));
        }
        Ok(())
    }

    fn clip(&self, w: &mut DenseMatrix) {
        if self.mode == Superposition::Max {
            w.data_mut().iter_mut().for_each(|v| *v = v.max(W_MIN));
        }
    }
}

impl Model for MaxCauses {
    type Params = McaParams;
    type Stats = McaStats;

    fn name(&self) -> &'static str {
        match self.mode {
            Superposition::Max => "mca",
            Superposition::AbsMax => "mmca",
        }
    }

    fn latent_dim(&self) -> usize {
        self.trunc.h
    }

    fn check_data(&self, params: &McaParams, data: &DataSet) -> Result<()> {
        self.check_params(params, data.dim())
    }

    fn standard_init(&self, data: &DataSet, rng: &mut RngStream) -> Result<McaParams> {
        if data.n() < 2 {
            return Err(Error::data("initialization needs at least two data points"));
        }
        let h = self.trunc.h;
        let (mut w, sigma2) = mean_plus_noise_init(data, h, rng);
        if self.mode == Superposition::Max {
            let mean = data.mean();
            for d in 0..w.rows() {
                for v in w.row_mut(d) {
                    *v = mean[d] + (*v - mean[d]).abs();
                }
            }
            self.clip(&mut w);
        }
        Ok(McaParams {
            w,
            pi: (self.trunc.hprime.min(h) as f64 / (2.0 * h as f64)).clamp(PI_MIN, 1.0 - PI_MIN),
            sigma2,
        })
    }

    fn estep(&self, params: &McaParams, data: &DataSet, rows: Range<usize>, anneal: &AnnealState) -> Result<McaStats> {
        let d = data.dim();
        let h = self.trunc.h;
        self.check_params(params, d)?;
        let soft_rho = match (self.mode, anneal.rho) {
            (Superposition::Max, Some(rho)) => Some(rho),
            _ => None,
        };
        let mut stats = McaStats::zeros(d, h);
        let mut lj = Vec::new();
        let mut q = Vec::new();
        let mut winners = Vec::new();
        let mut soft = vec![0.0; h];
        for n in rows {
            let y = data.point(n);
            let states = self.state_set(params, y)?;
            self.point_log_joints(params, y, &states, &mut winners, &mut lj);
            let log_z = posterior_weights(&lj, anneal.temperature, &mut q)?;
            let yy: f64 = y.iter().map(|v| v * v).sum();
            for (i, (st, &qi)) in states.iter().zip(&q).enumerate() {
                if st.is_zero() {
                    stats.zero_sq += qi * yy;
                    continue;
                }
                stats.active += qi * st.active_count() as f64;
                match soft_rho {
                    None => {
                        for (dd, &win) in winners[i * d..(i + 1) * d].iter().enumerate() {
                            let yd = y[dd];
                            stats.num.add_at(dd, win, qi * yd);
                            stats.den.add_at(dd, win, qi);
                            stats.sq.add_at(dd, win, qi * yd * yd);
                        }
                    }
                    Some(rho) => {
                        for (dd, &yd) in y.iter().enumerate() {
                            let row = params.w.row(dd);
                            let top = st.units.iter().map(|&u| rho * row[u].ln()).fold(f64::NEG_INFINITY, f64::max);
                            let mut total = 0.0;
                            for &u in st.units {
                                soft[u] = (rho * row[u].ln() - top).exp();
                                total += soft[u];
                            }
                            for &u in st.units {
                                let a = qi * soft[u] / total;
                                stats.num.add_at(dd, u, a * yd);
                                stats.den.add_at(dd, u, a);
                                stats.sq.add_at(dd, u, a * yd * yd);
                            }
                        }
                    }
                }
            }
            stats.log_partition += log_z;
            stats.n += 1;
        }
        Ok(stats)
    }

    fn free_energy(&self, stats: &McaStats) -> f64 {
        stats.log_partition
    }

    fn mstep(&self, params: &McaParams, stats: &McaStats, _anneal: &AnnealState) -> Result<McaParams> {
        if stats.n == 0 {
            return Err(Error::data("M-step on empty statistics"));
        }
        let (d, h) = params.w.shape();
        let mut w = params.w.clone();
        for dd in 0..d {
            for c in 0..h {
                let den = stats.den.get(dd, c);
                if den >= EVIDENCE_MIN {
                    w.set(dd, c, stats.num.get(dd, c) / den);
                }
            }
        }
        self.clip(&mut w);
        let mut resid = stats.zero_sq;
        for dd in 0..d {
            for c in 0..h {
                let wv = w.get(dd, c);
                resid += stats.sq.get(dd, c) - 2.0 * wv * stats.num.get(dd, c) + wv * wv * stats.den.get(dd, c);
            }
        }
        let sigma2 = (resid / (stats.n * d) as f64).max(SIGMA2_MIN);
        let pi = (stats.active / (stats.n * h) as f64).clamp(PI_MIN, 1.0 - PI_MIN);
        Ok(McaParams { w, pi, sigma2 })
    }

    fn perturb(&self, params: &mut McaParams, scale: f64, rng: &mut RngStream) {
        perturb_columns(&mut params.w, scale, rng);
        self.clip(&mut params.w);
    }

    fn infer_point(&self, params: &McaParams, y: &[f64]) -> Result<PointInference> {
        self.check_params(params, y.len())?;
        let states = self.state_set(params, y)?;
        let mut winners = Vec::new();
        let mut lj = Vec::new();
        self.point_log_joints(params, y, &states, &mut winners, &mut lj);
        let mut q = Vec::new();
        posterior_weights(&lj, 1.0, &mut q)?;
        Ok(summarize(&states, &q))
    }

    fn generate(&self, params: &McaParams, n: usize, rng: &mut RngStream) -> Result<Sample> {
        let (d, h) = params.w.shape();
        let std = params.sigma2.sqrt();
        let mut y = DenseMatrix::zeros(n, d);
        let mut s = DenseMatrix::zeros(n, h);
        for i in 0..n {
            for c in 0..h {
                if rng.bernoulli(params.pi) {
                    s.set(i, c, 1.0);
                }
            }
            let wbar = effective_weight(&params.w, s.row(i), self.mode);
            for (o, m) in y.row_mut(i).iter_mut().zip(&wbar) {
                *o = m + std * rng.normal();
            }
        }
        Ok(Sample {
            data: DataSet::real(y),
            latents: s,
        })
    }

    fn exact_log_likelihood(&self, params: &McaParams, data: &DataSet) -> Option<Result<f64>> {
        let full = TruncationConfig::full(self.trunc.h).ok()?.with_max_states(self.trunc.max_states);
        let exact = self.with_truncation(full).ok()?;
        Some(
            exact
                .estep(params, data, 0..data.n(), &AnnealState::inert())
                .map(|s| s.log_partition),
        )
    }

    fn params_to_arrays(&self, p: &McaParams) -> BTreeMap<String, DenseMatrix> {
        let mut m = BTreeMap::new();
        m.insert("W".into(), p.w.clone());
        m.insert("pi".into(), DenseMatrix::scalar(p.pi));
        m.insert("sigma2".into(), DenseMatrix::scalar(p.sigma2));
        m
    }

    fn params_from_arrays(&self, arrays: &BTreeMap<String, DenseMatrix>) -> Result<McaParams> {
        let w = get_array(arrays, "W")?.clone();
        if w.cols() != self.trunc.h {
            return Err(Error::data(format!("W has {} columns, model has H={}", w.cols(), self.trunc.h)));
        }
        Ok(McaParams {
            w,
            pi: get_scalar(arrays, "pi")?,
            sigma2: get_scalar(arrays, "sigma2")?,
        })
    }

    fn init_description(&self) -> String {
        match self.mode {
            Superposition::Max => "W[d,h] = mean(y_d) + |N(0, mean_var(y)/H)| clipped at 1e-8; \
                                   sigma2 = mean_var(y); pi = min(hprime, H)/(2H)"
                .into(),
            Superposition::AbsMax => "W[d,h] = mean(y_d) + N(0, mean_var(y)/H); sigma2 = mean_var(y); \
                                      pi = min(hprime, H)/(2H)"
                .into(),
        }
    }
}
