//! Truncated latent state sets and normalized truncated posteriors.
//!
//! For each data point a model supplies one selection score per latent unit.
//! The `hprime` best-scoring units form the candidate set `I`, and the state
//! set `K` contains
//!
//! * the all-zero state,
//! * every singleton state over *all* `H` units and every non-zero value,
//! * every state with `2..=gamma` active units whose support lies inside `I`,
//!   crossed with all assignments of non-zero values.
//!
//! States are stored sparsely as `(unit, value index)` lists, in a fixed
//! order: zero state, singletons by `(unit, value)`, then multi-active states
//! by active count, support (lexicographic) and value assignment.

use crate::error::{Error, Result};
use crate::numeric::log_sum_exp;

/// Default cap on the number of states per data point.
pub const DEFAULT_MAX_STATES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TruncationConfig {
    pub h: usize,
    pub hprime: usize,
    pub gamma: usize,
    pub max_states: usize,
}

impl TruncationConfig {
    pub fn new(h: usize, hprime: usize, gamma: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::config("latent dimension H must be at least 1"));
        }
        if hprime == 0 || hprime > h {
            return Err(Error::config(format!(
                "hprime must satisfy 1 <= hprime <= H (hprime={hprime}, H={h})"
            )));
        }
        if gamma == 0 || gamma > hprime {
            return Err(Error::config(format!(
                "gamma must satisfy 1 <= gamma <= hprime (gamma={gamma}, hprime={hprime})"
            )));
        }
        Ok(Self {
            h,
            hprime,
            gamma,
            max_states: DEFAULT_MAX_STATES,
        })
    }

    /// `hprime = gamma = H`: the state set is the full latent space.
    pub fn full(h: usize) -> Result<Self> {
        Self::new(h, h, h)
    }

    pub fn with_max_states(mut self, cap: usize) -> Self {
        self.max_states = cap;
        self
    }

    pub fn is_full(&self) -> bool {
        self.hprime == self.h && self.gamma == self.h
    }
}

/// Indices of the `hprime` largest scores, ties toward the smaller index,
/// returned in ascending order.
pub fn select_candidates(scores: &[f64], hprime: usize) -> Result<Vec<usize>> {
    if hprime > scores.len() {
        return Err(Error::config(format!(
            "hprime={hprime} exceeds H={}",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::numerical("non-finite selection score"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps ascending index order among equal scores
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(hprime);
    idx.sort_unstable();
    Ok(idx)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `1 + H·V + Σ_{k=2}^{gamma} C(hprime, k)·V^k`.
pub fn state_count(h: usize, hprime: usize, gamma: usize, n_values: usize) -> u128 {
    let v = n_values as u128;
    let mut total = 1 + h as u128 * v;
    for k in 2..=gamma {
        total = total.saturating_add(binomial(hprime, k).saturating_mul(v.saturating_pow(k as u32)));
    }
    total
}

/// Borrowed view of one sparse latent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateRef<'a> {
    pub units: &'a [usize],
    pub value_idx: &'a [usize],
}

impl StateRef<'_> {
    pub fn active_count(&self) -> usize {
        self.units.len()
    }

    pub fn is_zero(&self) -> bool {
        self.units.is_empty()
    }
}

/// Enumerated latent states for one data point.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSet {
    h: usize,
    candidates: Vec<usize>,
    values: Vec<f64>,
    offsets: Vec<usize>,
    units: Vec<usize>,
    value_idx: Vec<usize>,
}

impl StateSet {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    /// The non-zero value alphabet that `value_idx` entries refer to.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn state(&self, i: usize) -> StateRef<'_> {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        StateRef {
            units: &self.units[a..b],
            value_idx: &self.value_idx[a..b],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = StateRef<'_>> + '_ {
        (0..self.len()).map(move |i| self.state(i))
    }

    /// Dense length-`H` vector of state `i`.
    pub fn dense(&self, i: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.h];
        let st = self.state(i);
        for (&u, &v) in st.units.iter().zip(st.value_idx) {
            s[u] = self.values[v];
        }
        s
    }
}

/// Precomputed multi-active patterns over candidate positions, reusable for
/// every data point that shares `(H, hprime, gamma, values)`.
#[derive(Debug, Clone)]
pub struct StateEnumerator {
    h: usize,
    hprime: usize,
    values: Vec<f64>,
    pattern_offsets: Vec<usize>,
    pattern_pos: Vec<usize>,
    pattern_val: Vec<usize>,
}

impl StateEnumerator {
    pub fn new(config: &TruncationConfig, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("non-zero value alphabet is empty"));
        }
        if values.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(Error::config("non-zero value alphabet must exclude 0 and be finite"));
        }
        for (i, a) in values.iter().enumerate() {
            if values[..i].contains(a) {
                return Err(Error::config(format!("duplicate latent value {a}")));
            }
        }
        let count = state_count(config.h, config.hprime, config.gamma, values.len());
        if count > config.max_states as u128 {
            return Err(Error::StateExplosion {
                count,
                cap: config.max_states,
            });
        }
        let v = values.len();
        let mut pattern_offsets = vec![0];
        let mut pattern_pos = Vec::new();
        let mut pattern_val = Vec::new();
        for k in 2..=config.gamma.min(config.hprime) {
            let mut combo: Vec<usize> = (0..k).collect();
            loop {
                let mut assign = vec![0usize; k];
                loop {
                    pattern_pos.extend_from_slice(&combo);
                    pattern_val.extend_from_slice(&assign);
                    pattern_offsets.push(pattern_pos.len());
                    if !odometer_next(&mut assign, v) {
                        break;
                    }
                }
                if !combination_next(&mut combo, config.hprime) {
                    break;
                }
            }
        }
        Ok(Self {
            h: config.h,
            hprime: config.hprime,
            values: values.to_vec(),
            pattern_offsets,
            pattern_pos,
            pattern_val,
        })
    }

    pub fn state_count(&self) -> usize {
        1 + self.h * self.values.len() + (self.pattern_offsets.len() - 1)
    }

    /// Builds the state set for sorted candidate indices `candidates`.
    pub fn build(&self, candidates: &[usize]) -> Result<StateSet> {
        if candidates.len() != self.hprime {
            return Err(Error::config(format!(
                "candidate set has {} entries, expected hprime={}",
                candidates.len(),
                self.hprime
            )));
        }
        if candidates.windows(2).any(|w| w[0] >= w[1]) || candidates.iter().any(|&c| c >= self.h) {
            return Err(Error::config("candidate set must be strictly ascending and < H"));
        }
        let n_states = self.state_count();
        let mut offsets = Vec::with_capacity(n_states + 1);
        let mut units = Vec::with_capacity(self.h * self.values.len() + self.pattern_pos.len());
        let mut value_idx = Vec::with_capacity(units.capacity());
        offsets.push(0);
        offsets.push(0);
        for h in 0..self.h {
            for v in 0..self.values.len() {
                units.push(h);
                value_idx.push(v);
                offsets.push(units.len());
            }
        }
        for p in 0..self.pattern_offsets.len() - 1 {
            let (a, b) = (self.pattern_offsets[p], self.pattern_offsets[p + 1]);
            units.extend(self.pattern_pos[a..b].iter().map(|&pos| candidates[pos]));
            value_idx.extend_from_slice(&self.pattern_val[a..b]);
            offsets.push(units.len());
        }
        Ok(StateSet {
            h: self.h,
            candidates: candidates.to_vec(),
            values: self.values.clone(),
            offsets,
            units,
            value_idx,
        })
    }
}

fn odometer_next(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

fn combination_next(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Binary states (value alphabet `{1}`).
pub fn enumerate_binary_states(candidates: &[usize], h: usize, gamma: usize) -> Result<StateSet> {
    enumerate_valued_states(candidates, h, gamma, &[1.0], DEFAULT_MAX_STATES)
}

/// States over the non-zero value alphabet `values`.
pub fn enumerate_valued_states(
    candidates: &[usize],
    h: usize,
    gamma: usize,
    values: &[f64],
    max_states: usize,
) -> Result<StateSet> {
    let config = TruncationConfig::new(h, candidates.len(), gamma)?.with_max_states(max_states);
    StateEnumerator::new(&config, values)?.build(candidates)
}

/// Normalized truncated posterior over an enumerated state set.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPosterior {
    /// Posterior weights at the annealing temperature.
    pub q: Vec<f64>,
    /// `⟨g_j⟩ = Σ_i q_i g_j(i)` for each requested statistic.
    pub expectations: Vec<f64>,
    /// `ln Σ_i exp(log_joint_i)`, always at temperature 1.
    pub log_partition: f64,
}

/// Fills `q` with `exp(lj/T − lse(lj/T))` and returns `lse(lj)`.
pub(crate) fn posterior_weights(log_joints: &[f64], temperature: f64, q: &mut Vec<f64>) -> Result<f64> {
    if log_joints.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::numerical("non-finite log joint"));
    }
    let log_partition = log_sum_exp(log_joints)?;
    q.clear();
    if temperature == 1.0 {
        q.extend(log_joints.iter().map(|l| (l - log_partition).exp()));
    } else {
        q.extend(log_joints.iter().map(|l| l / temperature));
        let lse = log_sum_exp(q)?;
        q.iter_mut().for_each(|x| *x = (*x - lse).exp());
    }
    Ok(log_partition)
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !temperature.is_finite() || temperature < 1.0 {
        return Err(Error::config(format!("temperature must be finite and >= 1, got {temperature}")));
    }
    Ok(())
}

pub fn truncated_posterior(log_joints: &[f64], temperature: f64) -> Result<TruncatedPosterior> {
    truncated_expectations(log_joints, temperature, &[])
}

/// Posterior weights plus expectations of per-state statistics `stats`,
/// each called with a state index.
pub fn truncated_expectations(
    log_joints: &[f64],
    temperature: f64,
    stats: &[&dyn Fn(usize) -> f64],
) -> Result<TruncatedPosterior> {
    check_temperature(temperature)?;
    let mut q = Vec::with_capacity(log_joints.len());
    let log_partition = posterior_weights(log_joints, temperature, &mut q)?;
    let expectations = stats
        .iter()
        .map(|g| q.iter().enumerate().map(|(i, qi)| qi * g(i)).sum())
        .collect();
    Ok(TruncatedPosterior {
        q,
        expectations,
        log_partition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn candidate_selection() {
        assert_eq!(select_candidates(&[0.1, 0.9, 0.5, 0.9], 2).unwrap(), vec![1, 3]);
        assert_eq!(select_candidates(&[3.0, 1.0, 2.0], 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(select_candidates(&[1.0; 5], 2).unwrap(), vec![0, 1]);
        assert!(matches!(select_candidates(&[1.0; 3], 4), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TruncationConfig::new(5, 6, 2).is_err());
        assert!(TruncationConfig::new(5, 3, 4).is_err());
        assert!(TruncationConfig::new(5, 0, 0).is_err());
        assert!(TruncationConfig::new(5, 3, 3).is_ok());
    }

    #[test]
    fn binary_counts() {
        let s = enumerate_binary_states(&[1, 3, 5, 7], 10, 2).unwrap();
        assert_eq!(s.len(), 17);
        let full = enumerate_binary_states(&[0, 1, 2], 3, 3).unwrap();
        assert_eq!(full.len(), 8);
        let dense: HashSet<Vec<u8>> = (0..8)
            .map(|i| full.dense(i).iter().map(|v| *v as u8).collect())
            .collect();
        assert_eq!(dense.len(), 8);
        let g1 = enumerate_binary_states(&[0, 2], 6, 1).unwrap();
        assert_eq!(g1.len(), 7);
    }

    #[test]
    fn valued_counts() {
        let tsc = enumerate_valued_states(&[0, 2], 4, 2, &[-1.0, 1.0], DEFAULT_MAX_STATES).unwrap();
        assert_eq!(tsc.len(), 13);
        let v1 = enumerate_valued_states(&[1, 3, 5, 7], 10, 2, &[2.0], DEFAULT_MAX_STATES).unwrap();
        assert_eq!(v1.len(), 17);
        let dsc = enumerate_valued_states(&[0, 1], 2, 2, &[1.0, 2.0], DEFAULT_MAX_STATES).unwrap();
        assert_eq!(dsc.len(), 9);
    }

    #[test]
    fn state_explosion() {
        let err = enumerate_valued_states(&(0..12).collect::<Vec<_>>(), 12, 12, &[1.0, 2.0, 3.0], 1000);
        assert!(matches!(err, Err(Error::StateExplosion { .. })));
    }

    #[test]
    fn bad_alphabet() {
        assert!(enumerate_valued_states(&[0], 2, 1, &[0.0, 1.0], 100).is_err());
        assert!(enumerate_valued_states(&[0], 2, 1, &[], 100).is_err());
        assert!(enumerate_valued_states(&[0], 2, 1, &[1.0, 1.0], 100).is_err());
    }

    #[test]
    fn enumeration_order() {
        let s = enumerate_binary_states(&[0, 2, 3], 4, 3).unwrap();
        let listed: Vec<Vec<usize>> = s.iter().map(|st| st.units.to_vec()).collect();
        assert_eq!(
            listed,
            vec![
                vec![],
                vec![0],
                vec![1],
                vec![2],
                vec![3],
                vec![0, 2],
                vec![0, 3],
                vec![2, 3],
                vec![0, 2, 3],
            ]
        );
        let t = enumerate_valued_states(&[1, 2], 3, 2, &[-1.0, 1.0], 100).unwrap();
        assert_eq!(t.dense(1), vec![-1.0, 0.0, 0.0]);
        assert_eq!(t.dense(2), vec![1.0, 0.0, 0.0]);
        assert_eq!(t.dense(7), vec![0.0, -1.0, -1.0]);
        assert_eq!(t.dense(8), vec![0.0, -1.0, 1.0]);
        assert_eq!(t.dense(10), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn posterior_examples() {
        for t in [1.0, 3.0, 100.0] {
            let p = truncated_posterior(&[0.0, 0.0], t).unwrap();
            assert!((p.q[0] - 0.5).abs() < 1e-15 && (p.q[1] - 0.5).abs() < 1e-15);
        }
        let p = truncated_posterior(&[3f64.ln(), 0.0], 1.0).unwrap();
        assert!((p.q[0] - 0.75).abs() < 1e-15);
        assert!((p.q[1] - 0.25).abs() < 1e-15);
        assert!((p.log_partition - 4f64.ln()).abs() < 1e-15);

        let p = truncated_posterior(&[5.0, -3.0, 0.5], 1e6).unwrap();
        for q in &p.q {
            assert!((q - 1.0 / 3.0).abs() < 1e-5);
        }
        // log partition stays at temperature one
        let lp = log_sum_exp(&[5.0, -3.0, 0.5]).unwrap();
        assert_eq!(p.log_partition, lp);

        assert!(truncated_posterior(&[0.0], 0.5).is_err());
    }

    #[test]
    fn expectations_of_statistics() {
        let values = [1.0, 2.0, 4.0];
        let g = |i: usize| values[i];
        let p = truncated_expectations(&[0.0, 0.0, 0.0], 1.0, &[&g]).unwrap();
        assert!((p.expectations[0] - 7.0 / 3.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn q_is_a_distribution_and_shift_invariant(
            lj in prop::collection::vec(-30.0f64..30.0, 1..30),
            c in -100.0f64..100.0,
            t in 1.0f64..10.0,
        ) {
            let p = truncated_posterior(&lj, t).unwrap();
            let sum: f64 = p.q.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(p.q.iter().all(|q| *q >= 0.0));
            let shifted: Vec<f64> = lj.iter().map(|x| x + c).collect();
            let ps = truncated_posterior(&shifted, t).unwrap();
            for (a, b) in p.q.iter().zip(&ps.q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn adding_states_never_lowers_log_partition(
            lj in prop::collection::vec(-30.0f64..30.0, 1..30),
            extra in -30.0f64..30.0,
        ) {
            let a = truncated_posterior(&lj, 1.0).unwrap().log_partition;
            let mut more = lj.clone();
            more.push(extra);
            let b = truncated_posterior(&more, 1.0).unwrap().log_partition;
            prop_assert!(b >= a);
        }

        #[test]
        fn state_set_invariants(h in 2usize..9, seed in 0u64..1000, nv in 1usize..3) {
            let hprime = 1 + (seed as usize % h);
            let gamma = 1 + (seed as usize / 7 % hprime);
            let mut cand: Vec<usize> = (0..h).collect();
            // deterministic pseudo-shuffle
            cand.sort_by_key(|i| (i * 7919 + seed as usize) % 101);
            cand.truncate(hprime);
            cand.sort_unstable();
            let values: Vec<f64> = (1..=nv).map(|v| v as f64).collect();
            let s = enumerate_valued_states(&cand, h, gamma, &values, DEFAULT_MAX_STATES).unwrap();
            prop_assert_eq!(s.len() as u128, state_count(h, hprime, gamma, nv));
            let mut seen = HashSet::new();
            let mut zeros = 0;
            for i in 0..s.len() {
                let st = s.state(i);
                if st.is_zero() { zeros += 1; }
                if st.active_count() >= 2 {
                    prop_assert!(st.units.iter().all(|u| cand.contains(u)));
                    prop_assert!(st.active_count() <= gamma);
                }
                let key: Vec<u64> = s.dense(i).iter().map(|v| v.to_bits()).collect();
                prop_assert!(seen.insert(key));
            }
            prop_assert_eq!(zeros, 1);
            for h_ in 0..h {
                for v in &values {
                    let mut e = vec![0.0; h];
                    e[h_] = *v;
                    let key: Vec<u64> = e.iter().map(|v| v.to_bits()).collect();
                    prop_assert!(seen.contains(&key));
                }
            }
        }
    }
}
