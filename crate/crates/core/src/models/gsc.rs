//! Gaussian sparse coding: linear superposition with a spike-and-slab prior
//! `s_h = b_h z_h`, `b_h ~ Bernoulli(π)`, `z_h ~ N(μ_h, ψ_h)`.
//!
//! Given a binary support `A`, the slab variables are jointly Gaussian and
//! integrate out in closed form. All work happens in the `|A| × |A|` system
//! `M = W_AᵀW_A / σ² + diag(1/ψ_A)`; the `D × D` marginal covariance is
//! never formed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::annealing::AnnealState;
use crate::data::DataSet;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_with_jitter, DenseMatrix};
use crate::model::{get_array, get_scalar, mean_plus_noise_init, perturb_columns, Model, PointInference, Sample};
use crate::models::linear::{linear_sigma2, ridge_dictionary, PI_MIN};
use crate::parallel::SuffStats;
use crate::rng::RngStream;
use crate::truncation::{posterior_weights, select_candidates, StateEnumerator, StateSet, TruncationConfig};

pub const PSI_MIN: f64 = 1e-10;
const EVIDENCE_MIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GscParams {
    /// Dictionary, `D × H`.
    pub w: DenseMatrix,
    /// Probability that a unit is active.
    pub pi: f64,
    /// Slab means.
    pub mu: Vec<f64>,
    /// Slab variances.
    pub psi: Vec<f64>,
    pub sigma2: f64,
}

/// Marginal likelihood and Gaussian posterior of the slab given a support.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPosterior {
    /// `ln p(y, b_A)`, prior of the support included.
    pub log_marginal: f64,
    /// Posterior mean of `z_A`.
    pub kappa: Vec<f64>,
    /// Posterior covariance of `z_A`.
    pub lambda: DenseMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GscStats {
    pub n: usize,
    pub sum_s: Vec<f64>,
    pub sum_ss: DenseMatrix,
    pub sum_ys: DenseMatrix,
    pub sum_yy: f64,
    /// `Σ_n ⟨b_h⟩`
    pub sum_b: Vec<f64>,
    /// `Σ_n ⟨b_h z_h²⟩`
    pub sum_bz2: Vec<f64>,
    pub log_partition: f64,
}

impl GscStats {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            n: 0,
            sum_s: vec![0.0; h],
            sum_ss: DenseMatrix::zeros(h, h),
            sum_ys: DenseMatrix::zeros(d, h),
            sum_yy: 0.0,
            sum_b: vec![0.0; h],
            sum_bz2: vec![0.0; h],
            log_partition: 0.0,
        }
    }
}

impl SuffStats for GscStats {
    fn combine(&mut self, o: &Self) {
        self.n += o.n;
        for (a, b) in self.sum_s.iter_mut().zip(&o.sum_s) {
            *a += b;
        }
        self.sum_ss.add_assign(&o.sum_ss);
        self.sum_ys.add_assign(&o.sum_ys);
        self.sum_yy += o.sum_yy;
        for (a, b) in self.sum_b.iter_mut().zip(&o.sum_b) {
            *a += b;
        }
        for (a, b) in self.sum_bz2.iter_mut().zip(&o.sum_bz2) {
            *a += b;
        }
        self.log_partition += o.log_partition;
    }
}

#[derive(Debug, Clone)]
pub struct Gsc {
    trunc: TruncationConfig,
    enumerator: StateEnumerator,
}

/// Per-point quantities shared by every support.
struct PointCache<'a> {
    gram: &'a DenseMatrix,
    wty: Vec<f64>,
    yy: f64,
    d: usize,
}

impl Gsc {
    pub fn new(trunc: TruncationConfig) -> Result<Self> {
        Ok(Self {
            enumerator: StateEnumerator::new(&trunc, &[1.0])?,
            trunc,
        })
    }

    pub fn truncation(&self) -> &TruncationConfig {
        &self.trunc
    }

    pub fn with_truncation(&self, trunc: TruncationConfig) -> Result<Self> {
        Self::new(trunc)
    }

    /// Closed-form support posterior, computing `W_AᵀW_A` and `W_Aᵀy`
    /// directly (cost `O(D |A|² + |A|³)`).
    pub fn support_posterior(&self, params: &GscParams, y: &[f64], support: &[usize]) -> Result<SupportPosterior> {
        let d = y.len();
        let k = support.len();
        let mut gram_a = DenseMatrix::zeros(k, k);
        let mut wty_a = vec![0.0; k];
        for (dd, &yd) in y.iter().enumerate() {
            let row = params.w.row(dd);
            for (i, &u) in support.iter().enumerate() {
                wty_a[i] += row[u] * yd;
                for (j, &u2) in support.iter().enumerate() {
                    gram_a.add_at(i, j, row[u] * row[u2]);
                }
            }
        }
        let yy = y.iter().map(|v| v * v).sum();
        support_core(params, self.trunc.h, support, |i, j| gram_a.get(i, j), &wty_a, yy, d)
    }

    fn cached_support(&self, params: &GscParams, cache: &PointCache<'_>, support: &[usize]) -> Result<SupportPosterior> {
        let wty_a: Vec<f64> = support.iter().map(|&u| cache.wty[u]).collect();
        support_core(
            params,
            self.trunc.h,
            support,
            |i, j| cache.gram.get(support[i], support[j]),
            &wty_a,
            cache.yy,
            cache.d,
        )
    }

    /// Singleton log marginals, one per unit.
    pub fn selection_scores(&self, params: &GscParams, y: &[f64]) -> Result<Vec<f64>> {
        let gram = params.w.gram();
        let cache = PointCache {
            gram: &gram,
            wty: params.w.tr_mul_vec(y),
            yy: y.iter().map(|v| v * v).sum(),
            d: y.len(),
        };
        self.scores_cached(params, &cache)
    }

    fn scores_cached(&self, params: &GscParams, cache: &PointCache<'_>) -> Result<Vec<f64>> {
        (0..self.trunc.h)
            .map(|h| self.cached_support(params, cache, &[h]).map(|p| p.log_marginal))
            .collect()
    }

    fn point_states(&self, params: &GscParams, cache: &PointCache<'_>) -> Result<(StateSet, Vec<SupportPosterior>)> {
        let candidates = if self.trunc.is_full() {
            (0..self.trunc.h).collect()
        } else {
            select_candidates(&self.scores_cached(params, cache)?, self.trunc.hprime)?
        };
        let states = self.enumerator.build(&candidates)?;
        let posts = states
            .iter()
            .map(|st| self.cached_support(params, cache, st.units))
            .collect::<Result<Vec<_>>>()?;
        Ok((states, posts))
    }

    fn check_params(&self, params: &GscParams, d: usize) -> Result<()> {
        let h = self.trunc.h;
        if params.w.shape() != (d, h) || params.mu.len() != h || params.psi.len() != h {
            return Err(Error::data(format!(
                "GSC parameters do not match D={d}, H={h} (W is {}x{})",
                params.w.rows(),
                params.w.cols()
            )));
        }
        Ok(())
    }
}

fn support_core(
    params: &GscParams,
    h: usize,
    support: &[usize],
    gram_a: impl Fn(usize, usize) -> f64,
    wty_a: &[f64],
    yy: f64,
    d: usize,
) -> Result<SupportPosterior> {
    let k = support.len();
    let s2 = params.sigma2;
    let prior = k as f64 * params.pi.ln() + (h - k) as f64 * (1.0 - params.pi).ln();
    let gauss_const = -0.5 * d as f64 * (2.0 * PI).ln();
    if k == 0 {
        return Ok(SupportPosterior {
            log_marginal: prior + gauss_const - 0.5 * d as f64 * s2.ln() - yy / (2.0 * s2),
            kappa: Vec::new(),
            lambda: DenseMatrix::zeros(0, 0),
        });
    }
    let mu: Vec<f64> = support.iter().map(|&u| params.mu[u]).collect();
    let psi: Vec<f64> = support.iter().map(|&u| params.psi[u]).collect();
    let mut m = DMatrix::from_fn(k, k, |i, j| gram_a(i, j) / s2);
    for i in 0..k {
        m[(i, i)] += 1.0 / psi[i];
    }
    let ch = cholesky_with_jitter(m)?;
    let logdet_m: f64 = 2.0 * ch.l_dirty().diagonal().iter().take(k).map(|v| v.ln()).sum::<f64>();
    let lambda = ch.inverse();

    let b = DVector::from_fn(k, |i, _| wty_a[i] / s2 + mu[i] / psi[i]);
    let kappa = &lambda * b;

    // residual r = y − W_A μ_A, through Gram quantities
    let g_mu: Vec<f64> = (0..k).map(|i| (0..k).map(|j| gram_a(i, j) * mu[j]).sum()).collect();
    let mu_wty: f64 = mu.iter().zip(wty_a).map(|(a, b)| a * b).sum();
    let mu_g_mu: f64 = mu.iter().zip(&g_mu).map(|(a, b)| a * b).sum();
    let rr = yy - 2.0 * mu_wty + mu_g_mu;
    let wtr = DVector::from_fn(k, |i, _| (wty_a[i] - g_mu[i]) / s2);
    let quad = rr / s2 - wtr.dot(&(&lambda * &wtr));
    let logdet_c = d as f64 * s2.ln() + psi.iter().map(|p| p.ln()).sum::<f64>() + logdet_m;

    Ok(SupportPosterior {
        log_marginal: prior + gauss_const - 0.5 * logdet_c - 0.5 * quad,
        kappa: kappa.iter().copied().collect(),
        lambda: DenseMatrix::from_nalgebra(&lambda),
    })
}

impl Model for Gsc {
    type Params = GscParams;
    type Stats = GscStats;

    fn name(&self) -> &'static str {
        "gsc"
    }

    fn latent_dim(&self) -> usize {
        self.trunc.h
    }

    fn check_data(&self, params: &GscParams, data: &DataSet) -> Result<()> {
        self.check_params(params, data.dim())
    }

    fn standard_init(&self, data: &DataSet, rng: &mut RngStream) -> Result<GscParams> {
        if data.n() < 2 {
            return Err(Error::data("initialization needs at least two data points"));
        }
        let h = self.trunc.h;
        let (w, sigma2) = mean_plus_noise_init(data, h, rng);
        Ok(GscParams {
            w,
            pi: (self.trunc.hprime.min(h) as f64 / (2.0 * h as f64)).clamp(PI_MIN, 1.0 - PI_MIN),
            mu: vec![0.0; h],
            psi: vec![1.0; h],
            sigma2,
        })
    }

    fn estep(&self, params: &GscParams, data: &DataSet, rows: Range<usize>, anneal: &AnnealState) -> Result<GscStats> {
        let d = data.dim();
        let h = self.trunc.h;
        self.check_params(params, d)?;
        let gram = params.w.gram();
        let mut stats = GscStats::zeros(d, h);
        let mut lj = Vec::new();
        let mut q = Vec::new();
        let mut mean = vec![0.0; h];
        for n in rows {
            let y = data.point(n);
            let cache = PointCache {
                gram: &gram,
                wty: params.w.tr_mul_vec(y),
                yy: y.iter().map(|v| v * v).sum(),
                d,
            };
            let (states, posts) = self.point_states(params, &cache)?;
            lj.clear();
            lj.extend(posts.iter().map(|p| p.log_marginal));
            let log_z = posterior_weights(&lj, anneal.temperature, &mut q)?;
            mean.iter_mut().for_each(|m| *m = 0.0);
            for ((st, post), &qi) in states.iter().zip(&posts).zip(&q) {
                for (i, &u) in st.units.iter().enumerate() {
                    let kap = post.kappa[i];
                    mean[u] += qi * kap;
                    stats.sum_b[u] += qi;
                    stats.sum_bz2[u] += qi * (post.lambda.get(i, i) + kap * kap);
                    for (j, &u2) in st.units.iter().enumerate() {
                        stats
                            .sum_ss
                            .add_at(u, u2, qi * (post.lambda.get(i, j) + kap * post.kappa[j]));
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
            stats.sum_yy += cache.yy;
            stats.log_partition += log_z;
            stats.n += 1;
        }
        Ok(stats)
    }

    fn free_energy(&self, stats: &GscStats) -> f64 {
        stats.log_partition
    }

    fn mstep(&self, params: &GscParams, stats: &GscStats, _anneal: &AnnealState) -> Result<GscParams> {
        if stats.n == 0 {
            return Err(Error::data("M-step on empty statistics"));
        }
        let h = self.trunc.h;
        let w = ridge_dictionary(&stats.sum_ys, &stats.sum_ss, &params.w)?;
        let sigma2 = linear_sigma2(&w, stats.sum_yy, &stats.sum_ys, &stats.sum_ss, stats.n);
        let pi = (stats.sum_b.iter().sum::<f64>() / (stats.n * h) as f64).clamp(PI_MIN, 1.0 - PI_MIN);
        let mut mu = params.mu.clone();
        let mut psi = params.psi.clone();
        for u in 0..h {
            let b = stats.sum_b[u];
            if b < EVIDENCE_MIN {
                continue;
            }
            mu[u] = stats.sum_s[u] / b;
            psi[u] = (stats.sum_bz2[u] / b - mu[u] * mu[u]).max(PSI_MIN);
        }
        Ok(GscParams { w, pi, mu, psi, sigma2 })
    }

    fn perturb(&self, params: &mut GscParams, scale: f64, rng: &mut RngStream) {
        perturb_columns(&mut params.w, scale, rng);
    }

    fn infer_point(&self, params: &GscParams, y: &[f64]) -> Result<PointInference> {
        let d = y.len();
        self.check_params(params, d)?;
        let gram = params.w.gram();
        let cache = PointCache {
            gram: &gram,
            wty: params.w.tr_mul_vec(y),
            yy: y.iter().map(|v| v * v).sum(),
            d,
        };
        let (states, posts) = self.point_states(params, &cache)?;
        let lj: Vec<f64> = posts.iter().map(|p| p.log_marginal).collect();
        let mut q = Vec::new();
        posterior_weights(&lj, 1.0, &mut q)?;
        let mut best = 0;
        for (i, qi) in q.iter().enumerate() {
            if *qi > q[best] {
                best = i;
            }
        }
        let h = self.trunc.h;
        let mut map_state = vec![0.0; h];
        for (i, &u) in states.state(best).units.iter().enumerate() {
            map_state[u] = posts[best].kappa[i];
        }
        let mut mean = vec![0.0; h];
        for ((st, post), &qi) in states.iter().zip(&posts).zip(&q) {
            for (i, &u) in st.units.iter().enumerate() {
                mean[u] += qi * post.kappa[i];
            }
        }
        Ok(PointInference {
            map_state,
            map_prob: q[best],
            mean,
        })
    }

    fn generate(&self, params: &GscParams, n: usize, rng: &mut RngStream) -> Result<Sample> {
        let (d, h) = params.w.shape();
        let std = params.sigma2.sqrt();
        let mut y = DenseMatrix::zeros(n, d);
        let mut s = DenseMatrix::zeros(n, h);
        for i in 0..n {
            for c in 0..h {
                if rng.bernoulli(params.pi) {
                    s.set(i, c, params.mu[c] + params.psi[c].sqrt() * rng.normal());
                }
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

    fn exact_log_likelihood(&self, params: &GscParams, data: &DataSet) -> Option<Result<f64>> {
        let full = TruncationConfig::full(self.trunc.h).ok()?.with_max_states(self.trunc.max_states);
        let exact = self.with_truncation(full).ok()?;
        Some(
            exact
                .estep(params, data, 0..data.n(), &AnnealState::inert())
                .map(|s| s.log_partition),
        )
    }

    fn params_to_arrays(&self, p: &GscParams) -> BTreeMap<String, DenseMatrix> {
        let mut m = BTreeMap::new();
        m.insert("W".into(), p.w.clone());
        m.insert("pi".into(), DenseMatrix::scalar(p.pi));
        m.insert("mu".into(), DenseMatrix::column_vector(&p.mu));
        m.insert("psi".into(), DenseMatrix::column_vector(&p.psi));
        m.insert("sigma2".into(), DenseMatrix::scalar(p.sigma2));
        m
    }

    fn params_from_arrays(&self, arrays: &BTreeMap<String, DenseMatrix>) -> Result<GscParams> {
        let p = GscParams {
            w: get_array(arrays, "W")?.clone(),
            pi: get_scalar(arrays, "pi")?,
            mu: get_array(arrays, "mu")?.data().to_vec(),
            psi: get_array(arrays, "psi")?.data().to_vec(),
            sigma2: get_scalar(arrays, "sigma2")?,
        };
        self.check_params(&p, p.w.rows())?;
        Ok(p)
    }

    fn init_description(&self) -> String {
        "W[d,h] = mean(y_d) + N(0, mean_var(y)/H); sigma2 = mean_var(y) floored at 1e-12; \
         pi = min(hprime, H)/(2H); mu = 0; psi = 1"
            .into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_2d() -> GscParams {
        GscParams {
            w: DenseMatrix::from_rows(&[vec![1.0, 0.3], vec![0.0, -0.8]]).unwrap(),
            pi: 0.4,
            mu: vec![0.0, 0.0],
            psi: vec![1.0, 1.0],
            sigma2: 1.0,
        }
    }

    #[test]
    fn empty_support() {
        let g = Gsc::new(TruncationConfig::full(2).unwrap()).unwrap();
        let p = params_2d();
        let y = [0.5, -1.0];
        let post = g.support_posterior(&p, &y, &[]).unwrap();
        let expect = -(2f64 * PI).ln() - 0.5 * (0.25 + 1.0) + 2.0 * 0.6f64.ln();
        assert!((post.log_marginal - expect).abs() < 1e-14);
        assert!(post.kappa.is_empty());
    }

    #[test]
    fn single_unit_arithmetic() {
        let g = Gsc::new(TruncationConfig::full(2).unwrap()).unwrap();
        let p = params_2d();
        let post = g.support_posterior(&p, &[2.0, 0.0], &[0]).unwrap();
        assert!((post.lambda.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((post.kappa[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cached_and_direct_agree() {
        let g = Gsc::new(TruncationConfig::full(3).unwrap()).unwrap();
        let mut rng = RngStream::new(2);
        let p = GscParams {
            w: DenseMatrix::from_fn(5, 3, |_, _| rng.normal()),
            pi: 0.3,
            mu: vec![0.5, -1.0, 2.0],
            psi: vec![0.7, 1.3, 0.2],
            sigma2: 0.6,
        };
        let y: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let gram = p.w.gram();
        let cache = PointCache {
            gram: &gram,
            wty: p.w.tr_mul_vec(&y),
            yy: y.iter().map(|v| v * v).sum(),
            d: 5,
        };
        for a in [vec![], vec![1], vec![0, 2], vec![0, 1, 2]] {
            let x = g.support_posterior(&p, &y, &a).unwrap();
            let z = g.cached_support(&p, &cache, &a).unwrap();
            assert!((x.log_marginal - z.log_marginal).abs() < 1e-12);
        }
    }

    #[test]
    fn spike_limit_matches_binary_model() {
        use crate::models::linear::{DiscretePrior, LinearDiscrete, LinearParams};
        let g = Gsc::new(TruncationConfig::full(3).unwrap()).unwrap();
        let b = LinearDiscrete::bsc(TruncationConfig::full(3).unwrap()).unwrap();
        let mut rng = RngStream::new(8);
        let w = DenseMatrix::from_fn(4, 3, |_, _| rng.normal());
        let gp = GscParams {
            w: w.clone(),
            pi: 0.3,
            mu: vec![1.0; 3],
            psi: vec![1e-8; 3],
            sigma2: 0.5,
        };
        let bp = LinearParams {
            w,
            sigma2: 0.5,
            prior: DiscretePrior::Bernoulli { pi: 0.3 },
        };
        let y: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        for a in [vec![], vec![0], vec![1, 2], vec![0, 1, 2]] {
            let mut s = vec![0.0; 3];
            a.iter().for_each(|&u| s[u] = 1.0);
            let lg = g.support_posterior(&gp, &y, &a).unwrap().log_marginal;
            let lb = b.log_joint(&bp, &y, &s).unwrap();
            assert!((lg - lb).abs() < 1e-4, "{lg} vs {lb}");
        }
    }

    #[test]
    fn covariance_psd_per_point() {
        let g = Gsc::new(TruncationConfig::full(3).unwrap()).unwrap();
        let mut rng = RngStream::new(5);
        let p = GscParams {
            w: DenseMatrix::from_fn(4, 3, |_, _| rng.normal()),
            pi: 0.4,
            mu: vec![0.2, -0.3, 1.0],
            psi: vec![1.0, 0.5, 2.0],
            sigma2: 0.3,
        };
        let y = DenseMatrix::from_fn(1, 4, |_, _| rng.normal());
        let st = g.estep(&p, &DataSet::real(y), 0..1, &AnnealState::inert()).unwrap();
        let m = st.sum_ss.to_nalgebra();
        let mean = nalgebra::DVector::from_vec(st.sum_s.clone());
        let cov = m - &mean * mean.transpose();
        assert!(cov.symmetric_eigen().eigenvalues.iter().all(|e| *e > -1e-12));
    }

    #[test]
    fn no_evidence_keeps_slab() {
        let g = Gsc::new(TruncationConfig::full(2).unwrap()).unwrap();
        let mut p = params_2d();
        p.mu = vec![3.0, -2.0];
        p.psi = vec![0.5, 0.25];
        p.w = DenseMatrix::from_rows(&[vec![100.0, 100.0], vec![100.0, -100.0]]).unwrap();
        p.pi = 1e-6;
        p.sigma2 = 0.01;
        let data = DataSet::real(DenseMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let st = g.estep(&p, &data, 0..2, &AnnealState::inert()).unwrap();
        let p2 = g.mstep(&p, &st, &AnnealState::inert()).unwrap();
        assert_eq!(p2.pi, PI_MIN);
        assert_eq!(p2.mu, p.mu);
        assert_eq!(p2.psi, p.psi);
    }

    #[test]
    fn symmetric_data_gives_zero_mean() {
        let g = Gsc::new(TruncationConfig::full(2).unwrap()).unwrap();
        let p = params_2d();
        let data = DataSet::real(DenseMatrix::from_rows(&[vec![1.5, -0.5], vec![-1.5, 0.5]]).unwrap());
        let st = g.estep(&p, &data, 0..2, &AnnealState::inert()).unwrap();
        let p2 = g.mstep(&p, &st, &AnnealState::inert()).unwrap();
        assert!(p2.mu.iter().all(|m| m.abs() < 1e-12), "{:?}", p2.mu);
    }
}
