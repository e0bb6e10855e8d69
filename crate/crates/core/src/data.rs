use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Whether observations are arbitrary reals or non-negative counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Real,
    Count,
}

/// `N` observations of dimension `D`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    y: DenseMatrix,
    kind: DataKind,
}

impl DataSet {
    pub fn real(y: DenseMatrix) -> Self {
        Self {
            y,
            kind: DataKind::Real,
        }
    }

    /// Count data; every entry must be a non-negative whole number.
    pub fn counts(y: DenseMatrix) -> Result<Self> {
        if let Some(i) = y.data().iter().position(|v| !is_count(*v)) {
            let cols = y.cols().max(1);
            return Err(Error::data(format!(
                "entry at row {} col {} is not a non-negative integer ({})",
                i / cols,
                i % cols,
                y.data()[i]
            )));
        }
        Ok(Self {
            y,
            kind: DataKind::Count,
        })
    }

    /// Picks [`DataKind::Count`] when every entry is a non-negative whole
    /// number, otherwise [`DataKind::Real`].
    pub fn infer(y: DenseMatrix) -> Self {
        if y.data().iter().all(|v| is_count(*v)) {
            Self {
                y,
                kind: DataKind::Count,
            }
        } else {
            Self::real(y)
        }
    }

    #[inline]
    pub fn y(&self) -> &DenseMatrix {
        &self.y
    }

    #[inline]
    pub fn kind(&self) -> DataKind {
        self.kind
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.y.rows()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.y.cols()
    }

    #[inline]
    pub fn point(&self, n: usize) -> &[f64] {
        self.y.row(n)
    }

    /// Per-dimension mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for n in 0..self.n() {
            for (a, v) in m.iter_mut().zip(self.point(n)) {
                *a += v;
            }
        }
        let inv = 1.0 / self.n().max(1) as f64;
        m.iter_mut().for_each(|a| *a *= inv);
        m
    }

    /// Per-dimension (population) variance.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut v = vec![0.0; self.dim()];
        for n in 0..self.n() {
            for ((a, y), m) in v.iter_mut().zip(self.point(n)).zip(&mean) {
                *a += (y - m) * (y - m);
            }
        }
        let inv = 1.0 / self.n().max(1) as f64;
        v.iter_mut().for_each(|a| *a *= inv);
        v
    }

    /// Mean over dimensions of the per-dimension variance.
    pub fn mean_variance(&self) -> f64 {
        let v = self.variance();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

fn is_count(v: f64) -> bool {
    v >= 0.0 && v.fract() == 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_validation() {
        let ok = DenseMatrix::new(1, 3, vec![0.0, 2.0, 7.0]).unwrap();
        assert_eq!(DataSet::counts(ok.clone()).unwrap().kind(), DataKind::Count);
        assert_eq!(DataSet::infer(ok).kind(), DataKind::Count);
        let bad = DenseMatrix::new(1, 2, vec![1.5, 2.0]).unwrap();
        assert!(DataSet::counts(bad.clone()).is_err());
        assert_eq!(DataSet::infer(bad).kind(), DataKind::Real);
        let neg = DenseMatrix::new(1, 1, vec![-1.0]).unwrap();
        assert!(DataSet::counts(neg).is_err());
    }

    #[test]
    fn moments() {
        let y = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let ds = DataSet::real(y);
        assert_eq!(ds.mean(), vec![2.0, 0.0]);
        assert_eq!(ds.variance(), vec![1.0, 0.0]);
        assert_eq!(ds.mean_variance(), 0.5);
    }
}
