//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{ArisError, Result};

/// Pivots below this fraction of the largest diagonal entry count as zero.
const PIVOT_TOL: f64 = 1e-13;

/// Cholesky factor of a symmetric positive-definite matrix.
pub(crate) fn spd_factor(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let scale = a.diagonal().iter().copied().fold(0.0, f64::max);
    let chol = Cholesky::new(a).ok_or(ArisError::SingularSystem)?;
    let l = chol.l_dirty();
    if (0..l.nrows()).any(|i| !(l[(i, i)] * l[(i, i)] > PIVOT_TOL * scale)) {
        return Err(ArisError::SingularSystem);
    }
    Ok(chol)
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub(crate) fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = spd_factor(a)?;
    let x = chol.solve(b);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(ArisError::SingularSystem)
    }
}

/// `log |a|` from a Cholesky factor.
pub(crate) fn chol_log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// Columns of `x` listed in `idx`, in order.
pub(crate) fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), idx.len(), |i, j| x[(i, idx[j])])
}

pub(crate) fn select(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&j| v[j]))
}

/// Cached cross-products `X'X`, `X'y`, `y'y` of a dataset.
#[derive(Debug, Clone)]
pub(crate) struct Gram {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
}

impl Gram {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Gram {
            xtx: x.tr_mul(x),
            xty: x.tr_mul(y),
            yty: y.dot(y),
        }
    }

    /// `X_A'X_A + diag(penalty)` over the index set `idx`.
    pub fn penalized(&self, idx: &[usize], penalty: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| {
            let v = self.xtx[(idx[a], idx[b])];
            if a == b {
                v + penalty[a]
            } else {
                v
            }
        })
    }

    pub fn xty_sub(&self, idx: &[usize]) -> DVector<f64> {
        select(&self.xty, idx)
    }
}

/// Residual sum of squares `‖y − X_A β_A‖²`, computed from the residual vector
/// rather than the Gram expansion so near-interpolating fits keep precision.
pub(crate) fn rss(x: &DMatrix<f64>, y: &DVector<f64>, idx: &[usize], beta_sub: &DVector<f64>) -> f64 {
    let n = x.nrows();
    let mut total = 0.0;
    for i in 0..n {
        let mut r = y[i];
        for (a, &j) in idx.iter().enumerate() {
            r -= x[(i, j)] * beta_sub[a];
        }
        total += r * r;
    }
    total
}
