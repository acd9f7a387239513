//! Symmetric positive-definite factorization with a jitter ladder.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Diagonal jitter levels, relative to the mean diagonal, tried in order.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Cholesky factor `L L^T = S + jitter * I` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl SpdFactor {
    /// Jitter is relative to the mean absolute diagonal of `s`.
    pub fn new(s: &DMatrix<f64>) -> Result<Self> {
        let n = s.nrows().max(1);
        let scale = s.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64;
        Self::with_scale(s, scale)
    }

    /// Jitter relative to an externally supplied scale, e.g. the prior
    /// variance of the observations when `s` itself may have collapsed.
    pub fn with_scale(s: &DMatrix<f64>, scale: f64) -> Result<Self> {
        let n = s.nrows();
        if n == 0 || s.ncols() != n {
            return Err(Error::invalid("factorization needs a non-empty square matrix"));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite entry in data covariance".into()));
        }
        let sym = (s + s.transpose()) * 0.5;
        for rel in JITTER_LADDER {
            let jitter = rel * scale;
            if rel > 0.0 && jitter == 0.0 {
                break;
            }
            let mut trial = sym.clone();
            for i in 0..n {
                trial[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(trial) {
                if chol.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()) {
                    return Ok(SpdFactor { chol, jitter });
                }
            }
        }
        Err(Error::Singular {
            size: n,
            rank: numerical_rank(&sym),
        })
    }

    /// Rebuilds a factor from a stored lower-triangular `L`.
    pub fn from_lower(l: DMatrix<f64>, jitter: f64) -> Result<Self> {
        let n = l.nrows();
        if n == 0 || l.ncols() != n {
            return Err(Error::invalid("stored factor must be square"));
        }
        let lower = l.lower_triangle();
        if lower.diagonal().iter().any(|d| *d <= 0.0) {
            return Err(Error::Numerical("stored factor has a non-positive pivot".into()));
        }
        Ok(SpdFactor {
            chol: Cholesky::pack_dirty(lower),
            jitter,
        })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Absolute diagonal jitter that was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .lower_triangle()
            .solve_lower_triangular(b)
            .expect("pivots checked positive at construction")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Count of eigenvalues above `1e-12 * max |eigenvalue|`.
pub fn numerical_rank(s: &DMatrix<f64>) -> usize {
    let eig = SymmetricEigen::new(s.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|v| **v > 1e-12 * max).count()
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
pub fn condition_number(s: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new((s + s.transpose()) * 0.5);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
