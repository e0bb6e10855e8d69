use crate::error::{Error, Result};

/// `ln Σ exp(v_i)` by max-shift. Entries may be `-inf` as long as at least
/// one is finite.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport);
    }
    if v.len() == 1 {
        return Ok(max);
    }
    let sum: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Normalizes log weights in place into probabilities and returns the log
/// normalizer.
pub fn normalize_log_weights(w: &mut [f64]) -> Result<f64> {
    let lse = log_sum_exp(w)?;
    for x in w.iter_mut() {
        *x = (*x - lse).exp();
    }
    Ok(lse)
}

/// Projects a probability vector so every entry is at least `floor` and the
/// total stays one. Clipped entries sit exactly at `floor`; the others are
/// rescaled to share the remaining mass. Vectors already above the floor are
/// returned untouched.
pub fn floor_simplex(p: &mut [f64], floor: f64) {
    if p.iter().all(|v| *v >= floor) {
        return;
    }
    let mut fixed = vec![false; p.len()];
    loop {
        for (v, f) in p.iter_mut().zip(fixed.iter_mut()) {
            if *v < floor {
                *f = true;
            }
            if *f {
                *v = floor;
            }
        }
        let k = fixed.iter().filter(|f| **f).count();
        if k == p.len() {
            p.iter_mut().for_each(|v| *v = 1.0 / k as f64);
            return;
        }
        let free: f64 = p.iter().zip(&fixed).filter(|(_, f)| !**f).map(|(v, _)| v).sum();
        let target = 1.0 - k as f64 * floor;
        for (v, f) in p.iter_mut().zip(&fixed) {
            if !*f {
                *v *= target / free;
            }
        }
        if p.iter().zip(&fixed).all(|(v, f)| *f || *v >= floor) {
            return;
        }
    }
}
