//! Marginal posterior mode of `β` by expectation-maximization.
//!
//! With the prior on `β` made independent of `σ²`, the expected complete-data
//! log posterior is a ridge objective with coordinate-wise weights, so every
//! M-step is one linear solve:
//!
//! ```text
//! independent prior:  D_j = S²(2η + 3) / (n β_j²),   S² = ‖y − Xβ‖²
//! explicit σ²:        D_j = σ²(2η + 1) / β_j²,        σ² ← ‖y − Xβ_new‖² / (n + 2)
//! β_new = (X'X + D)⁻¹ X'y
//! ```
//!
//! The β-free expectation terms (over `log σ²` and `log v_j⁻¹`) are dropped.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::aris::{initializer, relative_change};
use crate::error::{ArisError, Result};
use crate::linalg::{rss, spd_solve, Gram};
use crate::model::{Dataset, FitOptions, Hyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmVariant {
    /// Prior on `β` independent of `σ²`; noise enters through `S² / n`.
    IndependentPrior,
    /// Noise variance carried as an explicit plug-in `σ²`.
    ExplicitSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub beta: DVector<f64>,
    pub active: Vec<bool>,
    /// Residual sum of squares of each iterate fed to an M-step.
    pub s2_trace: Vec<f64>,
    /// Final noise variance (explicit-sigma variant only).
    pub sigma2: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub variant: EmVariant,
}

fn check_nonzero(beta: &DVector<f64>) -> Result<()> {
    match beta.iter().position(|&b| b == 0.0) {
        Some(j) => Err(ArisError::ZeroCoordinate(j)),
        None => Ok(()),
    }
}

fn penalized_solve(gram: &Gram, idx: &[usize], penalty: &[f64]) -> Result<DVector<f64>> {
    if idx.is_empty() {
        return Ok(DVector::zeros(0));
    }
    spd_solve(gram.penalized(idx, penalty), &gram.xty_sub(idx))
}

/// Diagonal penalty of the independent-prior M-step.
pub fn em_penalty(n: usize, s2: f64, beta_prev: &DVector<f64>, eta: f64) -> DVector<f64> {
    beta_prev.map(|b| s2 * (2.0 * eta + 3.0) / (n as f64 * b * b))
}

/// Diagonal penalty of the explicit-sigma M-step, `(2η + 1) / t_j²` with
/// `t_j = β_j / σ`.
pub fn em_penalty_explicit(sigma2: f64, beta_prev: &DVector<f64>, eta: f64) -> DVector<f64> {
    beta_prev.map(|b| sigma2 * (2.0 * eta + 1.0) / (b * b))
}

/// One independent-prior EM iteration. Requires `eta >= -3/2` and no zero in
/// `beta_prev`.
pub fn em_step(data: &Dataset, beta_prev: &DVector<f64>, h: &Hyper) -> Result<DVector<f64>> {
    check_em_eta(h, -1.5)?;
    check_len(beta_prev.len(), data.p())?;
    check_nonzero(beta_prev)?;
    let idx: Vec<usize> = (0..data.p()).collect();
    let s2 = rss(&data.x, &data.y, &idx, beta_prev);
    if !(s2 > 0.0) {
        return Err(ArisError::ExactFit(0));
    }
    let gram = Gram::new(&data.x, &data.y);
    penalized_solve(&gram, &idx, em_penalty(data.n(), s2, beta_prev, h.eta).as_slice())
}

/// One explicit-sigma EM iteration, returning the new coefficients and
/// `σ² = ‖y − Xβ_new‖² / (n + 2)`. Requires `eta >= -1/2`.
pub fn em_step_explicit_sigma(
    data: &Dataset,
    beta_prev: &DVector<f64>,
    sigma2_prev: f64,
    h: &Hyper,
) -> Result<(DVector<f64>, f64)> {
    check_em_eta(h, -0.5)?;
    check_len(beta_prev.len(), data.p())?;
    check_nonzero(beta_prev)?;
    if !(sigma2_prev > 0.0) {
        return Err(ArisError::NonPositiveSigma2(sigma2_prev));
    }
    let idx: Vec<usize> = (0..data.p()).collect();
    let gram = Gram::new(&data.x, &data.y);
    let beta = penalized_solve(
        &gram,
        &idx,
        em_penalty_explicit(sigma2_prev, beta_prev, h.eta).as_slice(),
    )?;
    let r = rss(&data.x, &data.y, &idx, &beta);
    if !(r > 0.0) {
        return Err(ArisError::ExactFit(0));
    }
    Ok((beta, r / (data.n() + 2) as f64))
}

/// Noise variance update of the explicit-sigma variant.
pub fn explicit_sigma2(data: &Dataset, beta: &DVector<f64>) -> f64 {
    let idx: Vec<usize> = (0..data.p()).collect();
    rss(&data.x, &data.y, &idx, beta) / (data.n() + 2) as f64
}

fn check_em_eta(h: &Hyper, min: f64) -> Result<()> {
    h.validate()?;
    if h.eta < min {
        return Err(ArisError::InvalidHyper(format!(
            "EM variant needs eta >= {min}, got {}",
            h.eta
        )));
    }
    Ok(())
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(ArisError::DimensionMismatch(format!(
            "expected length {want}, got {got}"
        )));
    }
    Ok(())
}

/// Iterates the chosen M-step to convergence from OLS (or the small-ridge
/// fallback). Coordinates with `n β_j² / S² < prune_tol` (independent prior)
/// or `β_j² / σ² < prune_tol` (explicit sigma) are pruned to exact zero
/// before each step.
pub fn fit_em(data: &Dataset, h: &Hyper, opts: &FitOptions, variant: EmVariant) -> Result<EmFit> {
    let init = initializer(data)?;
    fit_em_from(data, init.beta, h, opts, variant)
}

/// [`fit_em`] from a caller-supplied starting point. Exact zeros in `beta0`
/// are pruned immediately.
pub fn fit_em_from(
    data: &Dataset,
    beta0: DVector<f64>,
    h: &Hyper,
    opts: &FitOptions,
    variant: EmVariant,
) -> Result<EmFit> {
    opts.validate()?;
    check_em_eta(
        h,
        match variant {
            EmVariant::IndependentPrior => -1.5,
            EmVariant::ExplicitSigma => -0.5,
        },
    )?;
    check_len(beta0.len(), data.p())?;
    let (n, p) = (data.n(), data.p());
    let gram = Gram::new(&data.x, &data.y);
    let mut idx: Vec<usize> = (0..p).collect();
    let mut beta_full = beta0;
    let mut sigma2 = match variant {
        EmVariant::ExplicitSigma => Some(rss(&data.x, &data.y, &idx, &beta_full) / (n + 2) as f64),
        EmVariant::IndependentPrior => None,
    };
    let mut s2_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        let beta_sub = DVector::from_iterator(idx.len(), idx.iter().map(|&j| beta_full[j]));
        let s2 = rss(&data.x, &data.y, &idx, &beta_sub);
        if !(s2 > 0.0) {
            return Err(ArisError::ExactFit(it));
        }
        s2_trace.push(s2);
        let scale = match (variant, sigma2) {
            (EmVariant::IndependentPrior, _) => n as f64 / s2,
            (EmVariant::ExplicitSigma, Some(s)) => 1.0 / s,
            (EmVariant::ExplicitSigma, None) => unreachable!("explicit variant tracks sigma2"),
        };
        let keep: Vec<usize> = (0..idx.len())
            .filter(|&a| beta_sub[a] * beta_sub[a] * scale >= opts.prune_tol)
            .collect();
        let kept_beta = DVector::from_iterator(keep.len(), keep.iter().map(|&a| beta_sub[a]));
        idx = keep.iter().map(|&a| idx[a]).collect();

        let penalty = match (variant, sigma2) {
            (EmVariant::IndependentPrior, _) => em_penalty(n, s2, &kept_beta, h.eta),
            (EmVariant::ExplicitSigma, Some(s)) => em_penalty_explicit(s, &kept_beta, h.eta),
            (EmVariant::ExplicitSigma, None) => unreachable!(),
        };
        let next_sub = penalized_solve(&gram, &idx, penalty.as_slice())?;
        let mut next = DVector::zeros(p);
        for (a, &j) in idx.iter().enumerate() {
            next[j] = next_sub[a];
        }
        if variant == EmVariant::ExplicitSigma {
            let r = rss(&data.x, &data.y, &idx, &next_sub);
            if !(r > 0.0) {
                return Err(ArisError::ExactFit(it));
            }
            sigma2 = Some(r / (n + 2) as f64);
        }
        let change = relative_change(&next, &beta_full);
        beta_full = next;
        if change < opts.conv_tol {
            converged = true;
            break;
        }
    }

    let mut active = vec![false; p];
    for &j in &idx {
        active[j] = true;
    }
    Ok(EmFit {
        beta: beta_full,
        active,
        s2_trace,
        sigma2,
        iterations,
        converged,
        variant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::fit_ols;
    use nalgebra::{dmatrix, dvector};

    fn data() -> Dataset {
        Dataset::new(
            dmatrix![1.0, 0.2, 0.1; 0.3, -1.0, 0.4; 0.5, 0.5, -0.9; -1.0, 0.4, 0.3; 0.2, 0.1, 0.8; 0.7, -0.6, 0.05],
            dvector![1.0, -1.0, 0.3, 0.2, 0.9, -0.4],
        )
        .unwrap()
    }

    #[test]
    fn flat_prior_step_is_ols() {
        let d = data();
        let b = em_step(&d, &dvector![1.0, 2.0, -3.0], &Hyper::new(-1.5)).unwrap();
        assert!((b - fit_ols(&d).unwrap()).amax() < 1e-12);
        let (b, _) = em_step_explicit_sigma(&d, &dvector![1.0, 2.0, -3.0], 0.7, &Hyper::new(-0.5)).unwrap();
        assert!((b - fit_ols(&d).unwrap()).amax() < 1e-12);
    }

    #[test]
    fn scalar_step() {
        // x'x = 1, x'y = 1, β_prev = 1, S² = n = 2, η = -1: D = 1
        let d = Dataset::new(dmatrix![1.0; 0.0], dvector![1.0, 2f64.sqrt()]).unwrap();
        let b = em_step(&d, &dvector![1.0], &Hyper::new(-1.0)).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sigma_update_at_zero_beta() {
        let d = data();
        let s = explicit_sigma2(&d, &DVector::zeros(3));
        assert!((s - d.y.norm_squared() / 8.0).abs() < 1e-15);
    }

    #[test]
    fn step_errors() {
        let d = data();
        assert_eq!(
            em_step(&d, &dvector![1.0, 0.0, 1.0], &Hyper::new(0.0)).unwrap_err(),
            ArisError::ZeroCoordinate(1)
        );
        assert!(matches!(
            em_step(&d, &dvector![1.0, 1.0, 1.0], &Hyper::new(-2.0)),
            Err(ArisError::InvalidHyper(_))
        ));
        let exact = Dataset::new(dmatrix![1.0; 2.0], dvector![1.0, 2.0]).unwrap();
        assert!(matches!(
            em_step(&exact, &dvector![1.0], &Hyper::new(0.0)),
            Err(ArisError::ExactFit(_))
        ));
    }

    #[test]
    fn flat_prior_fit_is_ols_after_one_step() {
        let d = data();
        let fit = fit_em(&d, &Hyper::new(-1.5), &FitOptions::default(), EmVariant::IndependentPrior).unwrap();
        assert!((fit.beta - fit_ols(&d).unwrap()).amax() < 1e-10);
        assert_eq!(fit.iterations, 1);
        assert!(fit.converged);
    }

    #[test]
    fn zero_start_coordinate_stays_zero() {
        let d = data();
        let mut b0 = fit_ols(&d).unwrap();
        b0[1] = 0.0;
        let fit = fit_em_from(&d, b0, &Hyper::new(-1.0), &FitOptions::default(), EmVariant::IndependentPrior).unwrap();
        assert_eq!(fit.beta[1], 0.0);
        assert!(!fit.active[1]);
    }
}
