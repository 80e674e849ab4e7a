//! Reference estimators: ordinary least squares and GCV-tuned ridge.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{ArisError, Result};
use crate::model::Dataset;

/// Relative threshold on the diagonal of `R` below which the design is
/// treated as rank deficient.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub beta: DVector<f64>,
    pub lambda: f64,
    pub gcv_score: f64,
}

/// Least squares via Householder QR.
pub fn fit_ols(data: &Dataset) -> Result<DVector<f64>> {
    let (n, p) = (data.n(), data.p());
    if p > n {
        return Err(ArisError::RankDeficient);
    }
    let qr = data.x.clone().qr();
    let r = qr.r();
    let max_diag = (0..p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if max_diag == 0.0 || (0..p).any(|j| r[(j, j)].abs() <= RANK_TOL * max_diag) {
        return Err(ArisError::RankDeficient);
    }
    let qty = qr.q().tr_mul(&data.y);
    r.solve_upper_triangular(&qty).ok_or(ArisError::RankDeficient)
}

/// `50` log-spaced penalties on `[1e-6, 1e3]`.
pub fn default_lambda_grid() -> Vec<f64> {
    let (lo, hi, m) = (1e-6f64.log10(), 1e3f64.log10(), 50);
    (0..m)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (m - 1) as f64))
        .collect()
}

struct RidgePath {
    svd: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    uty: DVector<f64>,
}

impl RidgePath {
    fn new(data: &Dataset) -> Self {
        let svd = data.x.clone().svd(true, true);
        let uty = svd.u.as_ref().expect("u requested").tr_mul(&data.y);
        RidgePath { svd, uty }
    }

    /// Coefficients and effective degrees of freedom `tr(H_λ)`.
    fn solve(&self, lambda: f64) -> (DVector<f64>, f64) {
        let s = &self.svd.singular_values;
        let vt = self.svd.v_t.as_ref().expect("v_t requested");
        let mut coef = DVector::zeros(s.len());
        let mut df = 0.0;
        for k in 0..s.len() {
            let denom = s[k] * s[k] + lambda;
            if denom > 0.0 {
                coef[k] = s[k] * self.uty[k] / denom;
                df += s[k] * s[k] / denom;
            }
        }
        (vt.tr_mul(&coef), df)
    }
}

/// Ridge coefficients `(X'X + λI)⁻¹X'y` for one penalty.
pub fn fit_ridge(data: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return Err(ArisError::InvalidOption(format!("ridge penalty {lambda}")));
    }
    Ok(RidgePath::new(data).solve(lambda).0)
}

/// Generalized cross-validation score `n·RSS / (n − tr H_λ)²`.
fn gcv(data: &Dataset, beta: &DVector<f64>, df: f64) -> f64 {
    let n = data.n() as f64;
    let resid = &data.y - &data.x * beta;
    n * resid.norm_squared() / (n - df).powi(2)
}

/// Ridge with the penalty chosen by minimizing GCV over `lambda_grid`; ties
/// go to the smaller penalty.
pub fn fit_ridge_gcv(data: &Dataset, lambda_grid: &[f64]) -> Result<RidgeFit> {
    if lambda_grid.is_empty() {
        return Err(ArisError::EmptyInput);
    }
    let path = RidgePath::new(data);
    let mut grid = lambda_grid.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    let mut best: Option<RidgeFit> = None;
    for &lambda in &grid {
        if !(lambda >= 0.0) {
            return Err(ArisError::InvalidOption(format!("ridge penalty {lambda}")));
        }
        let (beta, df) = path.solve(lambda);
        let score = gcv(data, &beta, df);
        if !score.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| score < b.gcv_score) {
            best = Some(RidgeFit {
                beta,
                lambda,
                gcv_score: score,
            });
        }
    }
    best.ok_or(ArisError::SingularSystem)
}
