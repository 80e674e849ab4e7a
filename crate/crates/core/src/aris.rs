//! Joint posterior mode by iterative conditional maximization.
//!
//! One cycle updates, in order,
//!
//! ```text
//! σ²  ← [(y − Xβ)'(y − Xβ) + β'V⁻¹β] / (n + p† + 2)
//! v_j ← (β_j² + 2σ²μ) / ((1 + 2η) σ²)
//! β   ← (X'X + V⁻¹)⁻¹ X'y
//! ```
//!
//! where `p†` is the number of live coordinates. A coordinate whose prior
//! variance `v_j` falls below `prune_tol` is removed for good: its
//! coefficient is set to exactly zero and its precision to `+inf`.
//!
//! [`fit_reweighted_ridge`] reaches the same fixed point through a sequence of
//! ordinary ridge problems on rescaled columns and is kept as a cross-check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::fit_ols;
use crate::error::{ArisError, Result};
use crate::linalg::{rss, select, select_columns, spd_solve, Gram};
use crate::model::{log_joint_parts, AriSFit, Dataset, FitOptions, Hyper, PosteriorState, Standardization};

/// Ridge penalty of the fallback initializer used when OLS is unavailable.
pub const FALLBACK_RIDGE: f64 = 1e-6;

/// Column scalings of the reweighted-ridge path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeWeights {
    /// Cumulative products of the per-iteration reweighting factors.
    pub omega: DVector<f64>,
    pub eta: f64,
}

/// Starting coefficients together with the diagonal penalty they solve.
#[derive(Debug, Clone)]
pub(crate) struct Initializer {
    pub beta: DVector<f64>,
    pub penalty: f64,
}

/// OLS when the design has full column rank and `n > p`, ridge with a tiny
/// penalty otherwise.
pub(crate) fn initializer(data: &Dataset) -> Result<Initializer> {
    if data.n() > data.p() {
        if let Ok(beta) = fit_ols(data) {
            return Ok(Initializer { beta, penalty: 0.0 });
        }
    }
    let p = data.p();
    let a = data.x.tr_mul(&data.x) + DMatrix::identity(p, p) * FALLBACK_RIDGE;
    let beta = spd_solve(a, &data.x.tr_mul(&data.y)).map_err(|_| ArisError::NoInitializer)?;
    Ok(Initializer {
        beta,
        penalty: FALLBACK_RIDGE,
    })
}

/// Conditional mode of `β` given the precisions: solves
/// `(X'X + V⁻¹) β = X'y` by Cholesky.
pub fn update_beta(data: &Dataset, v_inv: &DVector<f64>) -> Result<DVector<f64>> {
    check_len(v_inv.len(), data.p())?;
    let gram = Gram::new(&data.x, &data.y);
    let idx: Vec<usize> = (0..data.p()).collect();
    spd_solve(gram.penalized(&idx, v_inv.as_slice()), &gram.xty)
}

/// Conditional mode of `σ²` given `β` and the precisions.
pub fn update_sigma2(data: &Dataset, beta: &DVector<f64>, v_inv: &DVector<f64>) -> Result<f64> {
    check_len(beta.len(), data.p())?;
    check_len(v_inv.len(), data.p())?;
    let idx: Vec<usize> = (0..data.p()).collect();
    sigma2_mode(
        data.n(),
        rss(&data.x, &data.y, &idx, beta),
        beta.as_slice(),
        v_inv.as_slice(),
    )
}

fn sigma2_mode(n: usize, rss: f64, beta: &[f64], v_inv: &[f64]) -> Result<f64> {
    let quad: f64 = beta
        .iter()
        .zip(v_inv)
        .map(|(b, w)| if *b == 0.0 { 0.0 } else { w * b * b })
        .sum();
    let num = rss + quad;
    if !(num > 0.0) {
        return Err(ArisError::DegenerateResidual);
    }
    Ok(num / (n + beta.len() + 2) as f64)
}

/// Conditional modes of the prior variances `v_j`.
pub fn prior_variances(beta: &DVector<f64>, sigma2: f64, h: &Hyper) -> Result<DVector<f64>> {
    h.validate()?;
    if h.eta == -0.5 {
        return Err(ArisError::EtaAtOlsBoundary);
    }
    if h.eta < -0.5 {
        return Err(ArisError::InvalidHyper(format!(
            "the precision update needs eta > -1/2, got {}",
            h.eta
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(ArisError::NonPositiveSigma2(sigma2));
    }
    let denom = (1.0 + 2.0 * h.eta) * sigma2;
    Ok(beta.map(|b| (b * b + 2.0 * sigma2 * h.mu) / denom))
}

/// Conditional modes of the precisions `v_j⁻¹ = 1 / v_j`.
pub fn update_v(beta: &DVector<f64>, sigma2: f64, h: &Hyper) -> Result<DVector<f64>> {
    Ok(prior_variances(beta, sigma2, h)?.map(|v| 1.0 / v))
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(ArisError::DimensionMismatch(format!(
            "expected length {want}, got {got}"
        )));
    }
    Ok(())
}

fn check_joint_eta(h: &Hyper) -> Result<()> {
    h.validate_joint()?;
    if h.eta < -0.5 {
        return Err(ArisError::InvalidHyper(format!(
            "joint-mode fitting needs eta >= -1/2, got {}",
            h.eta
        )));
    }
    Ok(())
}

/// Relative change `max_j |new_j − old_j| / (1 + |old_j|)`.
pub(crate) fn relative_change(new: &DVector<f64>, old: &DVector<f64>) -> f64 {
    new.iter()
        .zip(old.iter())
        .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
        .fold(0.0, f64::max)
}

fn scatter(p: usize, idx: &[usize], sub: &[f64], fill: f64) -> DVector<f64> {
    let mut out = DVector::from_element(p, fill);
    for (a, &j) in idx.iter().enumerate() {
        out[j] = sub[a];
    }
    out
}

fn full_state(p: usize, idx: &[usize], beta: &[f64], sigma2: f64, v_inv: &[f64]) -> PosteriorState {
    let mut active = vec![false; p];
    for &j in idx {
        active[j] = true;
    }
    PosteriorState {
        beta: scatter(p, idx, beta, 0.0),
        sigma2,
        v_inv: scatter(p, idx, v_inv, f64::INFINITY),
        active,
    }
}

/// The `eta = -1/2` fit: the penalty vanishes and the mode is OLS.
fn ols_boundary_fit(data: &Dataset) -> Result<AriSFit> {
    let p = data.p();
    let beta = fit_ols(data)?;
    let idx: Vec<usize> = (0..p).collect();
    let zeros = vec![0.0; p];
    let sigma2 = sigma2_mode(data.n(), rss(&data.x, &data.y, &idx, &beta), beta.as_slice(), &zeros)
        .map_err(|_| ArisError::ExactFit(0))?;
    Ok(AriSFit {
        state: PosteriorState {
            beta,
            sigma2,
            v_inv: DVector::zeros(p),
            active: vec![true; p],
        },
        iterations: 0,
        converged: true,
        log_joint_trace: Vec::new(),
        active_trace: Vec::new(),
        standardization: Standardization::identity(p),
    })
}

/// Joint posterior mode `argmax p(β, σ², v⁻¹ | y, η, μ)` started from OLS.
pub fn fit_joint_mode(data: &Dataset, h: &Hyper, opts: &FitOptions) -> Result<AriSFit> {
    fit_joint_mode_observed(data, h, opts, |_, _| {})
}

/// [`fit_joint_mode`] with a callback receiving `(iteration, state)` after
/// every full cycle.
pub fn fit_joint_mode_observed<F>(data: &Dataset, h: &Hyper, opts: &FitOptions, mut observe: F) -> Result<AriSFit>
where
    F: FnMut(usize, &PosteriorState),
{
    opts.validate()?;
    check_joint_eta(h)?;
    if h.eta == -0.5 {
        return ols_boundary_fit(data);
    }
    let (n, p) = (data.n(), data.p());
    let gram = Gram::new(&data.x, &data.y);
    let init = initializer(data)?;

    let mut idx: Vec<usize> = (0..p).collect();
    let mut beta = init.beta.as_slice().to_vec();
    let mut v_inv = vec![init.penalty; p];
    let mut beta_full = init.beta.clone();
    let mut sigma2 = f64::NAN;
    let mut trace = Vec::new();
    let mut active_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        let beta_vec = DVector::from_column_slice(&beta);
        sigma2 = sigma2_mode(n, rss(&data.x, &data.y, &idx, &beta_vec), &beta, &v_inv)
            .map_err(|_| ArisError::ExactFit(it))?;
        let variances = prior_variances(&beta_vec, sigma2, h)?;

        let mut next_idx = Vec::with_capacity(idx.len());
        let mut next_v_inv = Vec::with_capacity(idx.len());
        for (a, &j) in idx.iter().enumerate() {
            if variances[a] >= opts.prune_tol {
                next_idx.push(j);
                next_v_inv.push(1.0 / variances[a]);
            }
        }
        idx = next_idx;
        v_inv = next_v_inv;

        beta = if idx.is_empty() {
            Vec::new()
        } else {
            spd_solve(gram.penalized(&idx, &v_inv), &gram.xty_sub(&idx))?
                .as_slice()
                .to_vec()
        };
        let beta_vec = DVector::from_column_slice(&beta);
        let lj = log_joint_parts(n, rss(&data.x, &data.y, &idx, &beta_vec), &beta, sigma2, &v_inv, h);
        trace.push(lj);
        active_trace.push(idx.len());

        let state = full_state(p, &idx, &beta, sigma2, &v_inv);
        let change = relative_change(&state.beta, &beta_full);
        beta_full = state.beta.clone();
        observe(it, &state);
        if change < opts.conv_tol {
            converged = true;
            break;
        }
    }

    Ok(AriSFit {
        state: full_state(p, &idx, &beta, sigma2, &v_inv),
        iterations,
        converged,
        log_joint_trace: trace,
        active_trace,
        standardization: Standardization::identity(p),
    })
}

/// The same fixed point as [`fit_joint_mode`], computed as a sequence of
/// standard ridge regressions with penalty `1 + 2η` on columns rescaled by
/// the cumulative weights `Π ω_j`, where
/// `ω_j = sqrt(β*_j² / σ² + 2μ / Ω_j²)` (the `μ → 0` limit gives
/// `|β_j| / σ`). Returns the final weights alongside the fit.
pub fn fit_reweighted_ridge(data: &Dataset, h: &Hyper, opts: &FitOptions) -> Result<(AriSFit, RidgeWeights)> {
    opts.validate()?;
    check_joint_eta(h)?;
    let p = data.p();
    if h.eta == -0.5 {
        let fit = ols_boundary_fit(data)?;
        return Ok((
            fit,
            RidgeWeights {
                omega: DVector::from_element(p, 1.0),
                eta: h.eta,
            },
        ));
    }
    let n = data.n();
    let ridge = 1.0 + 2.0 * h.eta;
    let init = initializer(data)?;

    let mut idx: Vec<usize> = (0..p).collect();
    let mut omega = DVector::from_element(p, 1.0);
    // Starred coefficients live on the rescaled columns.
    let mut beta_star = init.beta.clone();
    let mut penalty_term = init.penalty * init.beta.norm_squared();
    let mut beta_full = init.beta.clone();
    let mut sigma2 = f64::NAN;
    let mut trace = Vec::new();
    let mut active_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=opts.max_iter {
        iterations = it;
        let x_star = scaled_columns(&data.x, &idx, &omega);
        let resid = &data.y - &x_star * &beta_star;
        let num = resid.norm_squared() + penalty_term;
        if !(num > 0.0) {
            return Err(ArisError::ExactFit(it));
        }
        sigma2 = num / (n + idx.len() + 2) as f64;

        let mut next_idx = Vec::with_capacity(idx.len());
        for (a, &j) in idx.iter().enumerate() {
            let step = (beta_star[a] * beta_star[a] / sigma2 + 2.0 * h.mu / (omega[j] * omega[j])).sqrt();
            omega[j] *= step;
            if omega[j] * omega[j] / ridge >= opts.prune_tol {
                next_idx.push(j);
            } else {
                omega[j] = 0.0;
            }
        }
        idx = next_idx;

        if idx.is_empty() {
            beta_star = DVector::zeros(0);
        } else {
            let x_star = scaled_columns(&data.x, &idx, &omega);
            let a = x_star.tr_mul(&x_star) + DMatrix::identity(idx.len(), idx.len()) * ridge;
            beta_star = spd_solve(a, &x_star.tr_mul(&data.y))?;
        }
        penalty_term = ridge * beta_star.norm_squared();

        let beta: Vec<f64> = idx.iter().enumerate().map(|(a, &j)| omega[j] * beta_star[a]).collect();
        let v_inv: Vec<f64> = idx.iter().map(|&j| ridge / (omega[j] * omega[j])).collect();
        let beta_vec = DVector::from_column_slice(&beta);
        trace.push(log_joint_parts(
            n,
            rss(&data.x, &data.y, &idx, &beta_vec),
            &beta,
            sigma2,
            &v_inv,
            h,
        ));
        active_trace.push(idx.len());

        let state = full_state(p, &idx, &beta, sigma2, &v_inv);
        let change = relative_change(&state.beta, &beta_full);
        beta_full = state.beta;
        if change < opts.conv_tol {
            converged = true;
            break;
        }
    }

    let beta: Vec<f64> = idx.iter().enumerate().map(|(a, &j)| omega[j] * beta_star[a]).collect();
    let v_inv: Vec<f64> = idx.iter().map(|&j| ridge / (omega[j] * omega[j])).collect();
    Ok((
        AriSFit {
            state: full_state(p, &idx, &beta, sigma2, &v_inv),
            iterations,
            converged,
            log_joint_trace: trace,
            active_trace,
            standardization: Standardization::identity(p),
        },
        RidgeWeights {
            omega,
            eta: h.eta,
        },
    ))
}

fn scaled_columns(x: &DMatrix<f64>, idx: &[usize], omega: &DVector<f64>) -> DMatrix<f64> {
    let mut xs = select_columns(x, idx);
    for (a, &j) in idx.iter().enumerate() {
        xs.column_mut(a).scale_mut(omega[j]);
    }
    xs
}

/// Coefficients of the active coordinates, in index order.
pub fn active_beta(fit: &AriSFit) -> DVector<f64> {
    select(&fit.state.beta, &fit.state.active_indices())
}
