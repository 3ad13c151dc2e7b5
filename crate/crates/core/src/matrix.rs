//! Logit and probability matrices.
//!
//! Optimization variables are an `N x K` matrix of logits, one row per group.
//! The softmax image of a row is that group's assignment distribution. All
//! matrices are `f64`, row-major by group.

use ndarray::Array2;

use crate::error::{RcoError, Result};

/// The `N x K` optimization variables in logit space.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(pub Array2<f64>);

impl LogitMatrix {
    /// Zero logits: the uniform prior over options for every group.
    pub fn zeros(num_groups: usize, num_options: usize) -> Self {
        Self(Array2::zeros((num_groups, num_options)))
    }

    pub fn from_array(entries: Array2<f64>) -> Result<Self> {
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(RcoError::NonFinite { field: "logits" });
        }
        Ok(Self(entries))
    }

    pub fn num_groups(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_options(&self) -> usize {
        self.0.ncols()
    }
}

/// Row-stochastic softmax image of a [`LogitMatrix`]. Rows sum to one and all
/// entries are strictly positive; construct via [`softmax_rows`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix(Array2<f64>);

impl ProbMatrix {
    pub fn entries(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn num_groups(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_options(&self) -> usize {
        self.0.ncols()
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn row_argmax(&self) -> Vec<usize> {
        self.0
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                let mut best_val = row[0];
                for (k, &v) in row.iter().enumerate().skip(1) {
                    if v > best_val {
                        best = k;
                        best_val = v;
                    }
                }
                best
            })
            .collect()
    }
}

/// Row-wise softmax with the per-row maximum subtracted before
/// exponentiation, so entries of magnitude ~1e3 do not overflow.
pub fn softmax_rows(logits: &LogitMatrix) -> ProbMatrix {
    let mut out = logits.0.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    ProbMatrix(out)
}

/// Flattened inner product of two equally shaped matrices.
pub fn inner(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Frobenius norm.
pub fn frobenius_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn uniform_row() {
        let p = softmax_rows(&LogitMatrix(array![[0.0, 0.0]]));
        assert_eq!(p.entries()[[0, 0]], 0.5);
        assert_eq!(p.entries()[[0, 1]], 0.5);
    }

    #[test]
    fn shift_invariance() {
        let a = softmax_rows(&LogitMatrix(array![[1.0, -2.0, 0.3]]));
        let b = softmax_rows(&LogitMatrix(array![[1.0 + 17.5, -2.0 + 17.5, 0.3 + 17.5]]));
        for (x, y) in a.entries().iter().zip(b.entries().iter()) {
            assert!((x - y).abs() < 1e-14, "{x} vs {y}");
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax_rows(&LogitMatrix(array![[1000.0, 0.0]]));
        assert!((p.entries()[[0, 0]] - 1.0).abs() < 1e-12);
        assert!(p.entries()[[0, 1]] >= 0.0);
        assert!(p.entries().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn argmax_tie_breaks_low() {
        let p = softmax_rows(&LogitMatrix(array![[1.0, 1.0, 0.0]]));
        assert_eq!(p.row_argmax(), vec![0]);
    }
}
