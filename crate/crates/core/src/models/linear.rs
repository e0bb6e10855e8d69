//! Linear superposition `f(Θ, s) = W s` with Gaussian noise and discrete
//! priors: binary (BSC), ternary (TSC) and general discrete (DSC) sparse
//! coding.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;

use crate::annealing::AnnealState;
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::linalg::{solve_right_spd, DenseMatrix};
use crate::numeric::floor_simplex;
use crate::model::{
    get_array, get_scalar, mean_plus_noise_init, perturb_columns, Model, PointInference, Sample,
};
use crate::parallel::SuffStats;
use crate::rng::RngStream;
use crate::truncation::{posterior_weights, select_candidates, StateEnumerator, StateSet, TruncationConfig};

pub const PI_MIN: f64 = 1e-6;
pub const PROB_MIN: f64 = 1e-9;
pub const SIGMA2_MIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum DiscreteKind {
    /// Values `{0, 1}`, Bernoulli prior.
    Binary,
    /// Values `{-1, 0, 1}`; active with probability `π`, sign equiprobable.
    Ternary,
    /// Arbitrary alphabet containing 0 with a learned categorical prior. With
    /// `symmetric`, `p(φ) = p(−φ)` is enforced in the M-step.
    Discrete { alphabet: Vec<f64>, symmetric: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiscretePrior {
    Bernoulli { pi: f64 },
    Ternary { pi: f64 },
    /// Probabilities aligned with the model's alphabet.
    Categorical { probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// Dictionary, `D × H`.
    pub w: DenseMatrix,
    pub sigma2: f64,
    pub prior: DiscretePrior,
}

/// Sufficient statistics of one E-step pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStats {
    pub n: usize,
    /// `Σ_n ⟨s⟩_n`
    pub sum_s: Vec<f64>,
    /// `Σ_n ⟨s sᵀ⟩_n`
    pub sum_ss: DenseMatrix,
    /// `Σ_n y_n ⟨s⟩_nᵀ`, `D × H`
    pub sum_ys: DenseMatrix,
    /// `Σ_n ‖y_n‖²`
    pub sum_yy: f64,
    /// Expected number of units taking each non-zero value.
    pub value_counts: Vec<f64>,
    /// `Σ_n ln Σ_{s ∈ K_n} p(s, y_n)`
    pub log_partition: f64,
}

impl LinearStats {
    pub fn zeros(d: usize, h: usize, n_values: usize) -> Self {
        Self {
            n: 0,
            sum_s: vec![0.0; h],
            sum_ss: DenseMatrix::zeros(h, h),
            sum_ys: DenseMatrix::zeros(d, h),
            sum_yy: 0.0,
            value_counts: vec![0.0; n_values],
            log_partition: 0.0,
        }
    }
}

impl SuffStats for LinearStats {
    fn combine(&mut self, other: &Self) {
        self.n += other.n;
        for (a, b) in self.sum_s.iter_mut().zip(&other.sum_s) {
            *a += b;
        }
        self.sum_ss.add_assign(&other.sum_ss);
        self.sum_ys.add_assign(&other.sum_ys);
        self.sum_yy += other.sum_yy;
        for (a, b) in self.value_counts.iter_mut().zip(&other.value_counts) {
            *a += b;
        }
        self.log_partition += other.log_partition;
    }
}

/// BSC, TSC or DSC with a truncated posterior.
#[derive(Debug, Clone)]
pub struct LinearDiscrete {
    kind: DiscreteKind,
    trunc: TruncationConfig,
    nonzero: Vec<f64>,
    enumerator: StateEnumerator,
}

/// Log prior table: `ln p(0)` and `ln p(v)` per non-zero value.
#[derive(Debug, Clone)]
struct LogPrior {
    zero: f64,
    values: Vec<f64>,
}

impl LinearDiscrete {
    pub fn new(kind: DiscreteKind, trunc: TruncationConfig) -> Result<Self> {
        let nonzero = match &kind {
            DiscreteKind::Binary => vec![1.0],
            DiscreteKind::Ternary => vec![-1.0, 1.0],
            DiscreteKind::Discrete { alphabet, symmetric } => {
                if !alphabet.contains(&0.0) {
                    return Err(Error::config("discrete alphabet must contain 0"));
                }
                if alphabet.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config("discrete alphabet values must be finite"));
                }
                for (i, a) in alphabet.iter().enumerate() {
                    if alphabet[..i].contains(a) {
                        return Err(Error::config(format!("duplicate alphabet value {a}")));
                    }
                }
                if *symmetric && alphabet.iter().any(|v| !alphabet.contains(&-v)) {
                    return Err(Error::config("symmetric prior needs -v in the alphabet for every v"));
                }
                if alphabet.len() < 2 {
                    return Err(Error::config("discrete alphabet needs a non-zero value"));
                }
                alphabet.iter().copied().filter(|v| *v != 0.0).collect()
            }
        };
        let enumerator = StateEnumerator::new(&trunc, &nonzero)?;
        Ok(Self {
            kind,
            trunc,
            nonzero,
            enumerator,
        })
    }

    pub fn bsc(trunc: TruncationConfig) -> Result<Self> {
        Self::new(DiscreteKind::Binary, trunc)
    }

    pub fn tsc(trunc: TruncationConfig) -> Result<Self> {
        Self::new(DiscreteKind::Ternary, trunc)
    }

    pub fn dsc(alphabet: Vec<f64>, trunc: TruncationConfig) -> Result<Self> {
        Self::new(
            DiscreteKind::Discrete {
                alphabet,
                symmetric: false,
            },
            trunc,
        )
    }

    pub fn kind(&self) -> &DiscreteKind {
        &self.kind
    }

    pub fn truncation(&self) -> &TruncationConfig {
        &self.trunc
    }

    /// Non-zero latent values in enumeration order.
    pub fn nonzero_values(&self) -> &[f64] {
        &self.nonzero
    }

    /// The same model with a different truncation.
    pub fn with_truncation(&self, trunc: TruncationConfig) -> Result<Self> {
        Self::new(self.kind.clone(), trunc)
    }

    fn alphabet(&self) -> Option<&[f64]> {
        match &self.kind {
            DiscreteKind::Discrete { alphabet, .. } => Some(alphabet),
            _ => None,
        }
    }

    fn log_prior_table(&self, prior: &DiscretePrior) -> Result<LogPrior> {
        Ok(match (prior, &self.kind) {
            (DiscretePrior::Bernoulli { pi }, DiscreteKind::Binary) => LogPrior {
                zero: (1.0 - pi).ln(),
                values: vec![pi.ln()],
            },
            (DiscretePrior::Ternary { pi }, DiscreteKind::Ternary) => {
                let half = (pi / 2.0).ln();
                LogPrior {
                    zero: (1.0 - pi).ln(),
                    values: vec![half, half],
                }
            }
            (DiscretePrior::Categorical { probs }, DiscreteKind::Discrete { alphabet, .. }) => {
                if probs.len() != alphabet.len() {
                    return Err(Error::config("prior length does not match alphabet"));
                }
                let zero_idx = alphabet.iter().position(|v| *v == 0.0).expect("validated");
                LogPrior {
                    zero: probs[zero_idx].ln(),
                    values: alphabet
                        .iter()
                        .zip(probs)
                        .filter(|(v, _)| **v != 0.0)
                        .map(|(_, p)| p.ln())
                        .collect(),
                }
            }
            _ => return Err(Error::config("prior family does not match model")),
        })
    }

    /// `ln p(s)` for a dense latent vector.
    pub fn log_prior(&self, prior: &DiscretePrior, s: &[f64]) -> Result<f64> {
        let table = self.log_prior_table(prior)?;
        let mut lp = 0.0;
        for v in s {
            if *v == 0.0 {
                lp += table.zero;
            } else {
                let i = self
                    .nonzero
                    .iter()
                    .position(|a| a == v)
                    .ok_or_else(|| Error::data(format!("latent value {v} outside the alphabet")))?;
                lp += table.values[i];
            }
        }
        Ok(lp)
    }

    /// `ln p(s) + ln N(y; W s, σ² I)`, evaluated directly.
    pub fn log_joint(&self, params: &LinearParams, y: &[f64], s: &[f64]) -> Result<f64> {
        let lp = self.log_prior(&params.prior, s)?;
        let ws = params.w.mul_vec(s);
        let r2: f64 = y.iter().zip(&ws).map(|(a, b)| (a - b) * (a - b)).sum();
        let d = y.len() as f64;
        Ok(lp - 0.5 * d * (2.0 * PI * params.sigma2).ln() - r2 / (2.0 * params.sigma2))
    }

    /// Per-unit selection scores: the best singleton log joint over non-zero
    /// values, without terms that are constant in `h`.
    pub fn selection_scores(&self, params: &LinearParams, y: &[f64]) -> Result<Vec<f64>> {
        let table = self.log_prior_table(&params.prior)?;
        let wty = params.w.tr_mul_vec(y);
        let norms = params.w.column_sq_norms();
        Ok(singleton_scores(&table, &self.nonzero, &wty, &norms, params.sigma2))
    }

    fn state_set(&self, table: &LogPrior, wty: &[f64], diag: &[f64], sigma2: f64) -> Result<StateSet> {
        let h = self.trunc.h;
        let candidates = if self.trunc.is_full() {
            (0..h).collect()
        } else {
            let scores = singleton_scores(table, &self.nonzero, wty, diag, sigma2);
            select_candidates(&scores, self.trunc.hprime)?
        };
        self.enumerator.build(&candidates)
    }

    fn check_params(&self, params: &LinearParams, d: usize) -> Result<()> {
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

    /// Log joints of all enumerated states for one data point, via the Gram
    /// matrix `WᵀW` and `Wᵀy`.
    fn point_log_joints(
        &self,
        states: &StateSet,
        table: &LogPrior,
        gram: &DenseMatrix,
        wty: &[f64],
        yy: f64,
        norm_const: f64,
        sigma2: f64,
        out: &mut Vec<f64>,
    ) {
        let h = self.trunc.h;
        out.clear();
        for st in states.iter() {
            let k = st.active_count();
            let mut lp = (h - k) as f64 * table.zero;
            let mut lin = 0.0;
            let mut quad = 0.0;
            for (i, (&u, &vi)) in st.units.iter().zip(st.value_idx).enumerate() {
                lp += table.values[vi];
                let v = self.nonzero[vi];
                lin += v * wty[u];
                quad += v * v * gram.get(u, u);
                for (&u2, &vi2) in st.units[..i].iter().zip(&st.value_idx[..i]) {
                    quad += 2.0 * v * self.nonzero[vi2] * gram.get(u, u2);
                }
            }
            out.push(lp + norm_const - (yy - 2.0 * lin + quad) / (2.0 * sigma2));
        }
    }
}

fn singleton_scores(table: &LogPrior, values: &[f64], wty: &[f64], col_sq: &[f64], sigma2: f64) -> Vec<f64> {
    wty.iter()
        .zip(col_sq)
        .map(|(&wy, &ww)| {
            values
                .iter()
                .zip(&table.values)
                .map(|(&v, &lpv)| lpv - table.zero - (v * v * ww - 2.0 * v * wy) / (2.0 * sigma2))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn clip_pi(pi: f64) -> f64 {
    pi.clamp(PI_MIN, 1.0 - PI_MIN)
}

/// `W' = A (B + εI)⁻¹` with `ε = 1e-9 · trace(B) / H`; the old dictionary is
/// kept when `B` carries no mass.
pub(crate) fn ridge_dictionary(sum_ys: &DenseMatrix, sum_ss: &DenseMatrix, old: &DenseMatrix) -> Result<DenseMatrix> {
    let h = sum_ss.rows();
    let tr = sum_ss.trace();
    if tr.is_nan() || tr <= 0.0 {
        return Ok(old.clone());
    }
    let eps = 1e-9 * tr / h as f64;
    let mut a = sum_ss.clone();
    for i in 0..h {
        a.add_at(i, i, eps);
    }
    solve_right_spd(sum_ys, &a)
}

/// `(Σ‖y‖² − 2 tr(W'ᵀ Σ y⟨s⟩ᵀ) + tr(W'ᵀW' Σ⟨ssᵀ⟩)) / (N D)`, floored.
pub(crate) fn linear_sigma2(w: &DenseMatrix, sum_yy: f64, sum_ys: &DenseMatrix, sum_ss: &DenseMatrix, n: usize) -> f64 {
    let d = w.rows();
    let resid = sum_yy - 2.0 * w.frobenius_dot(sum_ys) + w.gram().frobenius_dot(sum_ss);
    (resid / (n * d) as f64).max(SIGMA2_MIN)
}

impl Model for LinearDiscrete {
    type Params = LinearParams;
    type Stats = LinearStats;

    fn name(&self) -> &'static str {
        match self.kind {
            DiscreteKind::Binary => "bsc",
            DiscreteKind::Ternary => "tsc",
            DiscreteKind::Discrete { .. } => "dsc",
        }
    }

    fn latent_dim(&self) -> usize {
        self.trunc.h
    }

    fn check_data(&self, params: &LinearParams, data: &DataSet) -> Result<()> {
        self.check_params(params, data.dim())
    }

    fn standard_init(&self, data: &DataSet, rng: &mut RngStream) -> Result<LinearParams> {
        if data.n() < 2 {
            return Err(Error::data("initialization needs at least two data points"));
        }
        let h = self.trunc.h;
        let (w, sigma2) = mean_plus_noise_init(data, h, rng);
        let active = self.trunc.hprime.min(h) as f64 / (2.0 * h as f64);
        let prior = match &self.kind {
            DiscreteKind::Binary => DiscretePrior::Bernoulli { pi: clip_pi(active) },
            DiscreteKind::Ternary => DiscretePrior::Ternary { pi: clip_pi(active) },
            DiscreteKind::Discrete { alphabet, .. } => {
                let k = alphabet.len() as f64;
                let p0 = 1.0 - active * (1.0 - 1.0 / k);
                let rest = (1.0 - p0) / (k - 1.0);
                DiscretePrior::Categorical {
                    probs: alphabet.iter().map(|v| if *v == 0.0 { p0 } else { rest }).collect(),
                }
            }
        };
        Ok(LinearParams { w, sigma2, prior })
    }

    fn estep(&self, params: &LinearParams, data: &DataSet, rows: Range<usize>, anneal: &AnnealState) -> Result<LinearStats> {
        let d = data.dim();
        let h = self.trunc.h;
        self.check_params(params, d)?;
        let table = self.log_prior_table(&params.prior)?;
        let gram = params.w.gram();
        let diag = params.w.column_sq_norms();
        let norm_const = -0.5 * d as f64 * (2.0 * PI * params.sigma2).ln();
        let mut stats = LinearStats::zeros(d, h, self.nonzero.len());
        let mut lj = Vec::new();
        let mut q = Vec::new();
        let mut mean = vec![0.0; h];
        for n in rows {
            let y = data.point(n);
            let wty = params.w.tr_mul_vec(y);
            let yy: f64 = y.iter().map(|v| v * v).sum();
            let states = self.state_set(&table, &wty, &diag, params.sigma2)?;
            self.point_log_joints(&states, &table, &gram, &wty, yy, norm_const, params.sigma2, &mut lj);
            let log_z = posterior_weights(&lj, anneal.temperature, &mut q)?;

            mean.iter_mut().for_each(|m| *m = 0.0);
            for (st, &qi) in states.iter().zip(&q) {
                for (i, (&u, &vi)) in st.units.iter().zip(st.value_idx).enumerate() {
                    let v = self.nonzero[vi];
                    mean[u] += qi * v;
                    stats.value_counts[vi] += qi;
                    stats.sum_ss.add_at(u, u, qi * v * v);
                    for (&u2, &vi2) in st.units[..i].iter().zip(&st.value_idx[..i]) {
                        let x = qi * v * self.nonzero[vi2];
                        stats.sum_ss.add_at(u, u2, x);
                        stats.sum_ss.add_at(u2, u, x);
                    }
                }
            }
            for (a, m) in stats.sum_s.iter_mut().zip(&mean) {
                *a += m;
            }
            for (di, yd) in y.iter().enumerate() {
                for (a, m) in stats.sum_ys.row_mut(di).iter_mut().zip(&mean) {
                    *a += yd * m;
                }
            }
            stats.sum_yy += yy;
            stats.log_partition += log_z;
            stats.n += 1;
        }
        Ok(stats)
    }

    fn free_energy(&self, stats: &LinearStats) -> f64 {
        stats.log_partition
    }

    fn mstep(&self, params: &LinearParams, stats: &LinearStats, _anneal: &AnnealState) -> Result<LinearParams> {
        if stats.n == 0 {
            return Err(Error::data("M-step on empty statistics"));
        }
        let w = ridge_dictionary(&stats.sum_ys, &stats.sum_ss, &params.w)?;
        let sigma2 = linear_sigma2(&w, stats.sum_yy, &stats.sum_ys, &stats.sum_ss, stats.n);
        let nh = (stats.n * self.trunc.h) as f64;
        let prior = match &self.kind {
            DiscreteKind::Binary => DiscretePrior::Bernoulli {
                pi: clip_pi(stats.value_counts[0] / nh),
            },
            DiscreteKind::Ternary => DiscretePrior::Ternary {
                pi: clip_pi((stats.value_counts[0] + stats.value_counts[1]) / nh),
            },
            DiscreteKind::Discrete { alphabet, symmetric } => {
                let count_of = |v: f64| {
                    self.nonzero
                        .iter()
                        .position(|a| *a == v)
                        .map_or(0.0, |i| stats.value_counts[i])
                };
                let nonzero_p: Vec<f64> = self
                    .nonzero
                    .iter()
                    .map(|&v| {
                        if *symmetric {
                            (count_of(v) + count_of(-v)) / (2.0 * nh)
                        } else {
                            count_of(v) / nh
                        }
                    })
                    .collect();
                let p0 = 1.0 - nonzero_p.iter().sum::<f64>();
                let mut it = nonzero_p.into_iter();
                let mut probs: Vec<f64> = alphabet
                    .iter()
                    .map(|v| if *v == 0.0 { p0 } else { it.next().expect("aligned") })
                    .collect();
                floor_simplex(&mut probs, PROB_MIN);
                DiscretePrior::Categorical { probs }
            }
        };
        Ok(LinearParams { w, sigma2, prior })
    }

    fn perturb(&self, params: &mut LinearParams, scale: f64, rng: &mut RngStream) {
        perturb_columns(&mut params.w, scale, rng);
    }

    fn infer_point(&self, params: &LinearParams, y: &[f64]) -> Result<PointInference> {
        let d = y.len();
        self.check_params(params, d)?;
        let table = self.log_prior_table(&params.prior)?;
        let gram = params.w.gram();
        let diag = params.w.column_sq_norms();
        let wty = params.w.tr_mul_vec(y);
        let yy: f64 = y.iter().map(|v| v * v).sum();
        let norm_const = -0.5 * d as f64 * (2.0 * PI * params.sigma2).ln();
        let states = self.state_set(&table, &wty, &diag, params.sigma2)?;
        let mut lj = Vec::new();
        self.point_log_joints(&states, &table, &gram, &wty, yy, norm_const, params.sigma2, &mut lj);
        let mut q = Vec::new();
        posterior_weights(&lj, 1.0, &mut q)?;
        Ok(summarize(&states, &q))
    }

    fn generate(&self, params: &LinearParams, n: usize, rng: &mut RngStream) -> Result<Sample> {
        let (d, h) = params.w.shape();
        let std = params.sigma2.sqrt();
        let mut y = DenseMatrix::zeros(n, d);
        let mut s = DenseMatrix::zeros(n, h);
        for i in 0..n {
            for c in 0..h {
                let v = match &params.prior {
                    DiscretePrior::Bernoulli { pi } => f64::from(u8::from(rng.bernoulli(*pi))),
                    DiscretePrior::Ternary { pi } => {
                        if rng.bernoulli(*pi) {
                            if rng.bernoulli(0.5) {
                                1.0
                            } else {
                                -1.0
                            }
                        } else {
                            0.0
                        }
                    }
                    DiscretePrior::Categorical { probs } => {
                        let alphabet = self.alphabet().ok_or_else(|| Error::config("prior family does not match model"))?;
                        alphabet[rng.categorical(probs)]
                    }
                };
                s.set(i, c, v);
            }
            let ws = params.w.mul_vec(s.row(i));
            for (o, m) in y.row_mut(i).iter_mut().zip(&ws) {
                *o = m + std * rng.normal();
            }
        }
        Ok(Sample {
            data: DataSet::real(y),
            latents: s,
        })
    }

    fn exact_log_likelihood(&self, params: &LinearParams, data: &DataSet) -> Option<Result<f64>> {
        let full = TruncationConfig::full(self.trunc.h).ok()?.with_max_states(self.trunc.max_states);
        let exact = self.with_truncation(full).ok()?;
        Some(
            exact
                .estep(params, data, 0..data.n(), &AnnealState::inert())
                .map(|s| s.log_partition),
        )
    }

    fn params_to_arrays(&self, params: &LinearParams) -> BTreeMap<String, DenseMatrix> {
        let mut m = BTreeMap::new();
        m.insert("W".into(), params.w.clone());
        m.insert("sigma2".into(), DenseMatrix::scalar(params.sigma2));
        match &params.prior {
            DiscretePrior::Bernoulli { pi } | DiscretePrior::Ternary { pi } => {
                m.insert("pi".into(), DenseMatrix::scalar(*pi));
            }
            DiscretePrior::Categorical { probs } => {
                m.insert("prior".into(), DenseMatrix::column_vector(probs));
            }
        }
        m
    }

    fn params_from_arrays(&self, arrays: &BTreeMap<String, DenseMatrix>) -> Result<LinearParams> {
        let w = get_array(arrays, "W")?.clone();
        if w.cols() != self.trunc.h {
            return Err(Error::data(format!("W has {} columns, model has H={}", w.cols(), self.trunc.h)));
        }
        let sigma2 = get_scalar(arrays, "sigma2")?;
        let prior = match &self.kind {
            DiscreteKind::Binary => DiscretePrior::Bernoulli {
                pi: get_scalar(arrays, "pi")?,
            },
            DiscreteKind::Ternary => DiscretePrior::Ternary {
                pi: get_scalar(arrays, "pi")?,
            },
            DiscreteKind::Discrete { alphabet, .. } => {
                let probs = get_array(arrays, "prior")?.data().to_vec();
                if probs.len() != alphabet.len() {
                    return Err(Error::data("prior length does not match alphabet"));
                }
                DiscretePrior::Categorical { probs }
            }
        };
        Ok(LinearParams { w, sigma2, prior })
    }

    fn init_description(&self) -> String {
        let prior = match self.kind {
            DiscreteKind::Binary | DiscreteKind::Ternary => "pi = min(hprime, H) / (2H)",
            DiscreteKind::Discrete { .. } => {
                "p(0) = 1 - min(hprime, H)/(2H) * (1 - 1/K), remaining mass uniform over non-zero values"
            }
        };
        format!("W[d,h] = mean(y_d) + N(0, mean_var(y)/H); sigma2 = mean_var(y) floored at 1e-12; {prior}")
    }
}

/// MAP state (first maximum in enumeration order), its probability and the
/// posterior mean.
pub(crate) fn summarize(states: &StateSet, q: &[f64]) -> PointInference {
    let mut best = 0;
    for (i, qi) in q.iter().enumerate() {
        if *qi > q[best] {
            best = i;
        }
    }
    let mut mean = vec![0.0; states.h()];
    for (st, &qi) in states.iter().zip(q) {
        for (&u, &vi) in st.units.iter().zip(st.value_idx) {
            mean[u] += qi * states.values()[vi];
        }
    }
    PointInference {
        map_state: states.dense(best),
        map_prob: q[best],
        mean,
    }
}
