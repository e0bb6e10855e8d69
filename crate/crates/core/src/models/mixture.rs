//! Mixture models with a single categorical latent: isotropic Gaussian
//! mixtures (GMM) and Poisson mixtures (PMM). The latent space has only `H`
//! states, so no truncation is involved.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;

use crate::annealing::AnnealState;
use crate::data::{DataKind, DataSet};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::numeric::floor_simplex;
use crate::model::{get_array, mean_plus_noise_init, perturb_columns, Model, PointInference, Sample};
use crate::parallel::SuffStats;
use crate::rng::RngStream;
use crate::truncation::posterior_weights;

pub const MIX_MIN: f64 = 1e-9;
pub const RATE_MIN: f64 = 1e-9;
pub const VAR_MIN: f64 = 1e-12;
const EMPTY_MIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    /// Component means as columns, `D × H`.
    pub means: DenseMatrix,
    pub mix: Vec<f64>,
    /// Isotropic variance per component.
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmmParams {
    /// Component rates as columns, `D × H`.
    pub rates: DenseMatrix,
    pub mix: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureStats {
    pub n: usize,
    /// `Σ_n r_nc`
    pub sum_r: Vec<f64>,
    /// `Σ_n r_nc y_n`, `D × H`
    pub sum_ry: DenseMatrix,
    /// `Σ_n r_nc ‖y_n‖²`
    pub sum_ryy: Vec<f64>,
    pub log_likelihood: f64,
}

impl MixtureStats {
    pub fn zeros(d: usize, h: usize) -> Self {
        Self {
            n: 0,
            sum_r: vec![0.0; h],
            sum_ry: DenseMatrix::zeros(d, h),
            sum_ryy: vec![0.0; h],
            log_likelihood: 0.0,
        }
    }

    fn add_point(&mut self, y: &[f64], r: &[f64], log_z: f64) {
        let yy: f64 = y.iter().map(|v| v * v).sum();
        for (c, rc) in r.iter().enumerate() {
            self.sum_r[c] += rc;
            self.sum_ryy[c] += rc * yy;
        }
        for (d, yd) in y.iter().enumerate() {
            for (a, rc) in self.sum_ry.row_mut(d).iter_mut().zip(r) {
                *a += rc * yd;
            }
        }
        self.log_likelihood += log_z;
        self.n += 1;
    }
}

impl SuffStats for MixtureStats {
    fn combine(&mut self, o: &Self) {
        self.n += o.n;
        for (a, b) in self.sum_r.iter_mut().zip(&o.sum_r) {
            *a += b;
        }
        self.sum_ry.add_assign(&o.sum_ry);
        for (a, b) in self.sum_ryy.iter_mut().zip(&o.sum_ryy) {
            *a += b;
        }
        self.log_likelihood += o.log_likelihood;
    }
}

fn update_mix(sum_r: &[f64], n: usize) -> Vec<f64> {
    let mut mix: Vec<f64> = sum_r.iter().map(|r| r / n as f64).collect();
    floor_simplex(&mut mix, MIX_MIN);
    mix
}

fn one_hot_inference(r: &[f64]) -> PointInference {
    let mut best = 0;
    for (i, v) in r.iter().enumerate() {
        if *v > r[best] {
            best = i;
        }
    }
    let mut map_state = vec![0.0; r.len()];
    map_state[best] = 1.0;
    PointInference {
        map_state,
        map_prob: r[best],
        mean: r.to_vec(),
    }
}

fn check_mix(mix: &[f64], h: usize) -> Result<()> {
    if mix.len() != h {
        return Err(Error::data(format!("mixing weights have length {}, expected {h}", mix.len())));
    }
    Ok(())
}

fn one_hot_rows(labels: &[usize], h: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(labels.len(), h);
    for (i, &c) in labels.iter().enumerate() {
        m.set(i, c, 1.0);
    }
    m
}

fn mixture_estep(
    data: &DataSet,
    rows: Range<usize>,
    h: usize,
    temperature: f64,
    mut log_terms: impl FnMut(&[f64], &mut Vec<f64>),
) -> Result<MixtureStats> {
    let mut stats = MixtureStats::zeros(data.dim(), h);
    let mut lt = Vec::with_capacity(h);
    let mut r = Vec::with_capacity(h);
    for n in rows {
        let y = data.point(n);
        log_terms(y, &mut lt);
        let log_z = posterior_weights(&lt, temperature, &mut r)?;
        stats.add_point(y, &r, log_z);
    }
    Ok(stats)
}

/// Isotropic Gaussian mixture.
#[derive(Debug, Clone)]
pub struct Gmm {
    h: usize,
}

impl Gmm {
    pub fn new(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::config("mixture needs at least one component"));
        }
        Ok(Self { h })
    }

    fn log_terms(&self, params: &GmmParams, y: &[f64], out: &mut Vec<f64>) {
        let d = y.len() as f64;
        out.clear();
        for c in 0..self.h {
            let r2: f64 = y
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let e = v - params.means.get(i, c);
                    e * e
                })
                .sum();
            let s2 = params.sigma2[c];
            out.push(params.mix[c].ln() - 0.5 * d * (2.0 * PI * s2).ln() - r2 / (2.0 * s2));
        }
    }

    pub fn responsibilities(&self, params: &GmmParams, y: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params, y.len())?;
        let mut lt = Vec::new();
        self.log_terms(params, y, &mut lt);
        let mut r = Vec::new();
        posterior_weights(&lt, 1.0, &mut r)?;
        Ok(r)
    }

    fn check_params(&self, p: &GmmParams, d: usize) -> Result<()> {
        if p.means.shape() != (d, self.h) || p.sigma2.len() != self.h {
            return Err(Error::data(format!("GMM parameters do not match D={d}, H={}", self.h)));
        }
        check_mix(&p.mix, self.h)
    }
}

impl Model for Gmm {
    type Params = GmmParams;
    type Stats = MixtureStats;

    fn name(&self) -> &'static str {
        "gmm"
    }

    fn latent_dim(&self) -> usize {
        self.h
    }

    fn check_data(&self, params: &GmmParams, data: &DataSet) -> Result<()> {
        self.check_params(params, data.dim())
    }

    fn standard_init(&self, data: &DataSet, rng: &mut RngStream) -> Result<GmmParams> {
        if data.n() < 2 {
            return Err(Error::data("initialization needs at least two data points"));
        }
        let (means, var) = mean_plus_noise_init(data, self.h, rng);
        Ok(GmmParams {
            means,
            mix: vec![1.0 / self.h as f64; self.h],
            sigma2: vec![var; self.h],
        })
    }

    fn estep(&self, params: &GmmParams, data: &DataSet, rows: Range<usize>, anneal: &AnnealState) -> Result<MixtureStats> {
        self.check_params(params, data.dim())?;
        mixture_estep(data, rows, self.h, anneal.temperature, |y, out| self.log_terms(params, y, out))
    }

    fn free_energy(&self, stats: &MixtureStats) -> f64 {
        stats.log_likelihood
    }

    fn mstep(&self, params: &GmmParams, stats: &MixtureStats, _anneal: &AnnealState) -> Result<GmmParams> {
        if stats.n == 0 {
            return Err(Error::data("M-step on empty statistics"));
        }
        let d = params.means.rows();
        let mut means = params.means.clone();
        let mut sigma2 = params.sigma2.clone();
        for c in 0..self.h {
            let nc = stats.sum_r[c];
            if nc < EMPTY_MIN {
                continue;
            }
            let mut m2 = 0.0;
            let mut cross = 0.0;
            for dd in 0..d {
                let m = stats.sum_ry.get(dd, c) / nc;
                means.set(dd, c, m);
                m2 += m * m;
                cross += m * stats.sum_ry.get(dd, c);
            }
            sigma2[c] = ((stats.sum_ryy[c] - 2.0 * cross + m2 * nc) / (d as f64 * nc)).max(VAR_MIN);
        }
        Ok(GmmParams {
            means,
            mix: update_mix(&stats.sum_r, stats.n),
            sigma2,
        })
    }

    fn perturb(&self, params: &mut GmmParams, scale: f64, rng: &mut RngStream) {
        perturb_columns(&mut params.means, scale, rng);
    }

    fn infer_point(&self, params: &GmmParams, y: &[f64]) -> Result<PointInference> {
        Ok(one_hot_inference(&self.responsibilities(params, y)?))
    }

    fn generate(&self, params: &GmmParams, n: usize, rng: &mut RngStream) -> Result<Sample> {
        let d = params.means.rows();
        let mut y = DenseMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = rng.categorical(&params.mix);
            let std = params.sigma2[c].sqrt();
            for (dd, o) in y.row_mut(i).iter_mut().enumerate() {
                *o = params.means.get(dd, c) + std * rng.normal();
            }
            labels.push(c);
        }
        Ok(Sample {
            data: DataSet::real(y),
            latents: one_hot_rows(&labels, self.h),
        })
    }

    fn exact_log_likelihood(&self, params: &GmmParams, data: &DataSet) -> Option<Result<f64>> {
        Some(
            self.estep(params, data, 0..data.n(), &AnnealState::inert())
                .map(|s| s.log_likelihood),
        )
    }

    fn params_to_arrays(&self, p: &GmmParams) -> BTreeMap<String, DenseMatrix> {
        let mut m = BTreeMap::new();
        m.insert("means".into(), p.means.clone());
        m.insert("mix".into(), DenseMatrix::column_vector(&p.mix));
        m.insert("sigma2".into(), DenseMatrix::column_vector(&p.sigma2));
        m
    }

    fn params_from_arrays(&self, arrays: &BTreeMap<String, DenseMatrix>) -> Result<GmmParams> {
        let p = GmmParams {
            means: get_array(arrays, "means")?.clone(),
            mix: get_array(arrays, "mix")?.data().to_vec(),
            sigma2: get_array(arrays, "sigma2")?.data().to_vec(),
        };
        self.check_params(&p, p.means.rows())?;
        Ok(p)
    }

    fn init_description(&self) -> String {
        "means[d,c] = mean(y_d) + N(0, mean_var(y)/H); sigma2_c = mean_var(y); mix uniform".into()
    }
}

/// Poisson mixture over non-negative integer data.
///
/// Log-likelihoods omit the data-only constant `Σ ln y_d!`;
/// [`Pmm::log_factorial_constant`] returns it.
#[derive(Debug, Clone)]
pub struct Pmm {
    h: usize,
}

impl Pmm {
    pub fn new(h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::config("mixture needs at least one component"));
        }
        Ok(Self { h })
    }

    fn log_terms(&self, params: &PmmParams, y: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for c in 0..self.h {
            let mut t = params.mix[c].ln();
            for (d, yd) in y.iter().enumerate() {
                let lam = params.rates.get(d, c);
                t += yd * lam.ln() - lam;
            }
            out.push(t);
        }
    }

    pub fn responsibilities(&self, params: &PmmParams, y: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params, y.len())?;
        let mut lt = Vec::new();
        self.log_terms(params, y, &mut lt);
        let mut r = Vec::new();
        posterior_weights(&lt, 1.0, &mut r)?;
        Ok(r)
    }

    /// `Σ_n Σ_d ln y_nd!`
    pub fn log_factorial_constant(data: &DataSet) -> f64 {
        data.y().data().iter().map(|&v| ln_factorial(v)).sum()
    }

    fn check_params(&self, p: &PmmParams, d: usize) -> Result<()> {
        if p.rates.shape() != (d, self.h) {
            return Err(Error::data(format!("PMM parameters do not match D={d}, H={}", self.h)));
        }
        check_mix(&p.mix, self.h)
    }
}

fn ln_factorial(v: f64) -> f64 {
    (2..=v as u64).map(|k| (k as f64).ln()).sum()
}

fn require_counts(data: &DataSet) -> Result<()> {
    if data.kind() != DataKind::Count {
        return Err(Error::data("Poisson mixture needs non-negative integer data"));
    }
    Ok(())
}

impl Model for Pmm {
    type Params = PmmParams;
    type Stats = MixtureStats;

    fn name(&self) -> &'static str {
        "pmm"
    }

    fn latent_dim(&self) -> usize {
        self.h
    }

    fn check_data(&self, params: &PmmParams, data: &DataSet) -> Result<()> {
        require_counts(data)?;
        self.check_params(params, data.dim())
    }

    fn standard_init(&self, data: &DataSet, rng: &mut RngStream) -> Result<PmmParams> {
        if data.n() < 2 {
            return Err(Error::data("initialization needs at least two data points"));
        }
        require_counts(data)?;
        let (mut rates, _) = mean_plus_noise_init(data, self.h, rng);
        rates.data_mut().iter_mut().for_each(|v| *v = v.max(RATE_MIN));
        Ok(PmmParams {
            rates,
            mix: vec![1.0 / self.h as f64; self.h],
        })
    }

    fn estep(&self, params: &PmmParams, data: &DataSet, rows: Range<usize>, anneal: &AnnealState) -> Result<MixtureStats> {
        self.check_params(params, data.dim())?;
        mixture_estep(data, rows, self.h, anneal.temperature, |y, out| self.log_terms(params, y, out))
    }

    fn free_energy(&self, stats: &MixtureStats) -> f64 {
        stats.log_likelihood
    }

    fn mstep(&self, params: &PmmParams, stats: &MixtureStats, _anneal: &AnnealState) -> Result<PmmParams> {
        if stats.n == 0 {
            return Err(Error::data("M-step on empty statistics"));
        }
        let d = params.rates.rows();
        let mut rates = params.rates.clone();
        for c in 0..self.h {
            let nc = stats.sum_r[c];
            if nc < EMPTY_MIN {
                continue;
            }
            for dd in 0..d {
                rates.set(dd, c, (stats.sum_ry.get(dd, c) / nc).max(RATE_MIN));
            }
        }
        Ok(PmmParams {
            rates,
            mix: update_mix(&stats.sum_r, stats.n),
        })
    }

    fn perturb(&self, params: &mut PmmParams, scale: f64, rng: &mut RngStream) {
        perturb_columns(&mut params.rates, scale, rng);
        params.rates.data_mut().iter_mut().for_each(|v| *v = v.max(RATE_MIN));
    }

    fn infer_point(&self, params: &PmmParams, y: &[f64]) -> Result<PointInference> {
        Ok(one_hot_inference(&self.responsibilities(params, y)?))
    }

    fn generate(&self, params: &PmmParams, n: usize, rng: &mut RngStream) -> Result<Sample> {
        let d = params.rates.rows();
        let mut y = DenseMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = rng.categorical(&params.mix);
            for (dd, o) in y.row_mut(i).iter_mut().enumerate() {
                *o = rng.poisson(params.rates.get(dd, c)) as f64;
            }
            labels.push(c);
        }
        Ok(Sample {
            data: DataSet::counts(y)?,
            latents: one_hot_rows(&labels, self.h),
        })
    }

    fn exact_log_likelihood(&self, params: &PmmParams, data: &DataSet) -> Option<Result<f64>> {
        Some(
            self.estep(params, data, 0..data.n(), &AnnealState::inert())
                .map(|s| s.log_likelihood),
        )
    }

    fn params_to_arrays(&self, p: &PmmParams) -> BTreeMap<String, DenseMatrix> {
        let mut m = BTreeMap::new();
        m.insert("rates".into(), p.rates.clone());
        m.insert("mix".into(), DenseMatrix::column_vector(&p.mix));
        m
    }

    fn params_from_arrays(&self, arrays: &BTreeMap<String, DenseMatrix>) -> Result<PmmParams> {
        let p = PmmParams {
            rates: get_array(arrays, "rates")?.clone(),
            mix: get_array(arrays, "mix")?.data().to_vec(),
        };
        self.check_params(&p, p.rates.rows())?;
        Ok(p)
    }

    fn init_description(&self) -> String {
        "rates[d,c] = max(mean(y_d) + N(0, mean_var(y)/H), 1e-9); mix uniform".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::log_sum_exp;

    #[test]
    fn symmetric_point_splits_evenly() {
        let g = Gmm::new(2).unwrap();
        let p = GmmParams {
            means: DenseMatrix::from_rows(&[vec![-1.0, 1.0]]).unwrap(),
            mix: vec![0.5, 0.5],
            sigma2: vec![1.0, 1.0],
        };
        let r = g.responsibilities(&p, &[0.0]).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_mix_fixes_component() {
        let g = Gmm::new(3).unwrap();
        let p = GmmParams {
            means: DenseMatrix::from_rows(&[vec![0.0, 5.0, 9.0]]).unwrap(),
            mix: vec![0.0, 1.0, 0.0],
            sigma2: vec![1.0; 3],
        };
        assert_eq!(g.responsibilities(&p, &[0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn poisson_responsibilities_match_full_likelihood() {
        let pm = Pmm::new(3).unwrap();
        let p = PmmParams {
            rates: DenseMatrix::from_rows(&[vec![1.0, 4.0, 9.0], vec![0.5, 3.0, 2.0]]).unwrap(),
            mix: vec![0.2, 0.5, 0.3],
        };
        let y = [3.0, 2.0];
        let r = pm.responsibilities(&p, &y).unwrap();
        let full: Vec<f64> = (0..3)
            .map(|c| {
                let mut t = p.mix[c].ln();
                for (d, yd) in y.iter().enumerate() {
                    let lam = p.rates.get(d, c);
                    t += yd * lam.ln() - lam - ln_factorial(*yd);
                }
                t
            })
            .collect();
        let z = log_sum_exp(&full).unwrap();
        for c in 0..3 {
            assert!((r[c] - (full[c] - z).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn single_component_rate_is_mean() {
        let pm = Pmm::new(1).unwrap();
        let data = DataSet::counts(DenseMatrix::from_rows(&[vec![2.0], vec![4.0]]).unwrap()).unwrap();
        let p = PmmParams {
            rates: DenseMatrix::scalar(1.0),
            mix: vec![1.0],
        };
        let st = pm.estep(&p, &data, 0..2, &AnnealState::inert()).unwrap();
        let p2 = pm.mstep(&p, &st, &AnnealState::inert()).unwrap();
        assert!((p2.rates.get(0, 0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn separated_components_give_class_moments() {
        let g = Gmm::new(2).unwrap();
        let p = GmmParams {
            means: DenseMatrix::from_rows(&[vec![-100.0, 100.0]]).unwrap(),
            mix: vec![0.5, 0.5],
            sigma2: vec![1.0, 1.0],
        };
        let data = DataSet::real(DenseMatrix::from_rows(&[vec![-99.0], vec![-97.0], vec![101.0]]).unwrap());
        let st = g.estep(&p, &data, 0..3, &AnnealState::inert()).unwrap();
        let p2 = g.mstep(&p, &st, &AnnealState::inert()).unwrap();
        assert!((p2.means.get(0, 0) + 98.0).abs() < 1e-12);
        assert!((p2.means.get(0, 1) - 101.0).abs() < 1e-12);
        assert!((p2.sigma2[0] - 1.0).abs() < 1e-9);
        assert!((p2.mix[0] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_component_keeps_parameters() {
        let g = Gmm::new(2).unwrap();
        let p = GmmParams {
            means: DenseMatrix::from_rows(&[vec![0.0, 1e6]]).unwrap(),
            mix: vec![0.5, 0.5],
            sigma2: vec![1.0, 3.0],
        };
        let data = DataSet::real(DenseMatrix::from_rows(&[vec![0.5], vec![-0.5]]).unwrap());
        let st = g.estep(&p, &data, 0..2, &AnnealState::inert()).unwrap();
        let p2 = g.mstep(&p, &st, &AnnealState::inert()).unwrap();
        assert_eq!(p2.means.get(0, 1), 1e6);
        assert_eq!(p2.sigma2[1], 3.0);
        assert!(p2.mix[1] >= MIX_MIN * 0.5);
    }

    #[test]
    fn factorial_constant_offsets_likelihood() {
        let pm = Pmm::new(2).unwrap();
        let p = PmmParams {
            rates: DenseMatrix::from_rows(&[vec![2.0, 7.0], vec![1.0, 5.0]]).unwrap(),
            mix: vec![0.4, 0.6],
        };
        let data = DataSet::counts(
            DenseMatrix::from_rows(&[vec![3.0, 0.0], vec![6.0, 4.0], vec![1.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let f = pm.exact_log_likelihood(&p, &data).unwrap().unwrap();
        let mut full = 0.0;
        for n in 0..data.n() {
            let y = data.point(n);
            let terms: Vec<f64> = (0..2)
                .map(|c| {
                    p.mix[c].ln()
                        + y.iter()
                            .enumerate()
                            .map(|(d, yd)| {
                                let lam = p.rates.get(d, c);
                                yd * lam.ln() - lam - ln_factorial(*yd)
                            })
                            .sum::<f64>()
                })
                .collect();
            full += log_sum_exp(&terms).unwrap();
        }
        assert!((f - Pmm::log_factorial_constant(&data) - full).abs() < 1e-12);
    }

    #[test]
    fn poisson_rejects_real_data() {
        let pm = Pmm::new(2).unwrap();
        let data = DataSet::real(DenseMatrix::from_rows(&[vec![0.5], vec![1.0]]).unwrap());
        let mut rng = RngStream::new(0);
        assert!(pm.standard_init(&data, &mut rng).is_err());
    }

    #[test]
    fn annealed_responsibilities_are_flatter() {
        let g = Gmm::new(2).unwrap();
        let p = GmmParams {
            means: DenseMatrix::from_rows(&[vec![0.0, 2.0]]).unwrap(),
            mix: vec![0.5, 0.5],
            sigma2: vec![1.0, 1.0],
        };
        let data = DataSet::real(DenseMatrix::from_rows(&[vec![0.2]]).unwrap());
        let cold = g.estep(&p, &data, 0..1, &AnnealState::inert()).unwrap();
        let mut hot_state = AnnealState::inert();
        hot_state.temperature = 4.0;
        let hot = g.estep(&p, &data, 0..1, &hot_state).unwrap();
        assert!(hot.sum_r[0] < cold.sum_r[0] && hot.sum_r[0] > 0.5);
        assert_eq!(hot.log_likelihood, cold.log_likelihood);
    }
}
