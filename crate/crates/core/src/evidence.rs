//! Marginal likelihood `p(y | η)` and empirical-Bayes choice of `η`.
//!
//! Two estimators are provided, both on the reduced model that keeps only
//! the coordinates surviving at the joint mode:
//!
//! * Laplace's method at the joint mode of `θ = (β, σ², v⁻¹)` using the
//!   closed-form negative Hessian;
//! * uniform sampling of `v⁻¹` over a box around the mode, integrating
//!   `p(y | v⁻¹) · p(v⁻¹ | η)` where `β` and `σ²` are integrated analytically.
//!
//! Products of densities are accumulated in log space throughout.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::aris::fit_joint_mode;
use crate::error::{ArisError, Result};
use crate::linalg::{chol_log_det, rss, spd_factor, Gram};
use crate::model::{log_joint_parts, AriSFit, Dataset, FitOptions, Hyper, PosteriorState};
use crate::seed::{derive_seed, EVIDENCE_STREAM};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Grid of `η` values scored by default.
pub const DEFAULT_ETA_GRID: [f64; 11] = [-0.45, -0.25, 0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
/// Box half-widths (in units of the precision's curvature scale) swept by default.
pub const DEFAULT_K_SWEEP: [f64; 4] = [3.0, 10.0, 100.0, 1000.0];
pub const DEFAULT_MC_DRAWS: usize = 1000;
/// Grid points whose log evidence differs by less than this are tied.
pub const TIE_TOL: f64 = 1e-12;

/// Blocks of the negative Hessian of `log p(y, θ | η)` over
/// `θ = (β, σ², v⁻¹)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    /// `(X'X + V⁻¹) / σ²`
    pub bb: DMatrix<f64>,
    /// `−(ν* + 1)/σ⁴ + 2λ*/σ⁶`
    pub ss: f64,
    /// Diagonal `v_k² (1/2 + η)`.
    pub vv: DVector<f64>,
    /// Diagonal coupling `β_k / σ²`.
    pub bv: DVector<f64>,
    /// `[x_k'(y − Xβ) − β_k v_k⁻¹] / σ⁴`
    pub sb: DVector<f64>,
    /// `−β_k² / (2σ⁴)`
    pub sv: DVector<f64>,
}

impl HessianBlocks {
    pub fn dim(&self) -> usize {
        2 * self.vv.len() + 1
    }

    /// Full symmetric matrix ordered `(β, σ², v⁻¹)`.
    pub fn assemble(&self) -> DMatrix<f64> {
        let p = self.vv.len();
        let s = p;
        let mut h = DMatrix::zeros(2 * p + 1, 2 * p + 1);
        h.view_mut((0, 0), (p, p)).copy_from(&self.bb);
        h[(s, s)] = self.ss;
        for k in 0..p {
            let v = p + 1 + k;
            h[(v, v)] = self.vv[k];
            h[(k, v)] = self.bv[k];
            h[(v, k)] = self.bv[k];
            h[(s, k)] = self.sb[k];
            h[(k, s)] = self.sb[k];
            h[(s, v)] = self.sv[k];
            h[(v, s)] = self.sv[k];
        }
        h
    }
}

/// How the `log 2π` constant of the Laplace approximation is dimensioned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LaplaceDimension {
    /// `2p† + 1`, the number of integrated parameters.
    #[default]
    Full,
    /// `p†`, the coefficient count alone.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceKind {
    Laplace,
    HypercubeMc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub log_value: f64,
    pub method: EvidenceKind,
    pub k: Option<f64>,
    pub mc_draws: Option<usize>,
    pub mc_se: Option<f64>,
}

/// Evidence estimator used by [`select_eta`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EvidenceMethod {
    Laplace(LaplaceDimension),
    HypercubeMc { k: f64, draws: usize, seed: u64 },
}

fn check_active_state(state: &PosteriorState, data: &Dataset) -> Result<()> {
    let p = data.p();
    if state.beta.len() != p || state.v_inv.len() != p {
        return Err(ArisError::DimensionMismatch(format!(
            "state has {} coefficients, data has {p} columns",
            state.beta.len()
        )));
    }
    if !(state.sigma2 > 0.0) {
        return Err(ArisError::NonPositiveSigma2(state.sigma2));
    }
    if let Some(j) = state.v_inv.iter().position(|w| !w.is_finite()) {
        return Err(ArisError::InfinitePrecision(j));
    }
    if state.v_inv.iter().any(|&w| !(w > 0.0)) {
        return Err(ArisError::NonInteriorMode);
    }
    Ok(())
}

/// Closed-form negative Hessian at `state`, which must already be restricted to
/// its active coordinates. Fails with [`ArisError::NonInteriorMode`] when the
/// assembled matrix is not positive definite.
pub fn negative_hessian(state: &PosteriorState, data: &Dataset, h: &Hyper) -> Result<HessianBlocks> {
    h.validate()?;
    if h.eta <= -0.5 {
        return Err(ArisError::InvalidHyper(format!(
            "the precision block needs eta > -1/2, got {}",
            h.eta
        )));
    }
    check_active_state(state, data)?;
    let blocks = hessian_blocks(state, data, h);
    scaled_log_det(&blocks.assemble())?;
    Ok(blocks)
}

/// `log |a|` through the Cholesky factor of `D^{-1/2} a D^{-1/2}` with
/// `D = diag(a)`, which keeps blocks of very different scales comparable.
fn scaled_log_det(a: &DMatrix<f64>) -> Result<f64> {
    let d = a.diagonal();
    if d.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(ArisError::NonInteriorMode);
    }
    let s = d.map(|x| 1.0 / x.sqrt());
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * s[i] * s[j]);
    let chol = spd_factor(scaled).map_err(|_| ArisError::NonInteriorMode)?;
    Ok(chol_log_det(&chol) + d.iter().map(|x| x.ln()).sum::<f64>())
}

fn hessian_blocks(state: &PosteriorState, data: &Dataset, h: &Hyper) -> HessianBlocks {
    let (n, p) = (data.n(), data.p());
    let s2 = state.sigma2;
    let s4 = s2 * s2;
    let beta = &state.beta;
    let w = &state.v_inv;
    let resid = &data.y - &data.x * beta;
    let xtr = data.x.tr_mul(&resid);
    let quad: f64 = (0..p).map(|k| w[k] * beta[k] * beta[k]).sum();
    let nu_star = (n + p) as f64 / 2.0;
    let lambda_star = (resid.norm_squared() + quad) / 2.0;

    let mut bb = data.x.tr_mul(&data.x);
    for k in 0..p {
        bb[(k, k)] += w[k];
    }
    bb /= s2;
    HessianBlocks {
        bb,
        ss: -(nu_star + 1.0) / s4 + 2.0 * lambda_star / (s4 * s2),
        vv: w.map(|wk| (0.5 + h.eta) / (wk * wk)),
        bv: beta / s2,
        sb: DVector::from_fn(p, |k, _| (xtr[k] - beta[k] * w[k]) / s4),
        sv: beta.map(|b| -b * b / (2.0 * s4)),
    }
}

/// Laplace approximation to `log p(y | η)` at the reduced-model mode.
pub fn laplace_log_evidence(fit: &AriSFit, data: &Dataset, h: &Hyper) -> Result<EvidenceEstimate> {
    laplace_log_evidence_with(fit, data, h, LaplaceDimension::Full)
}

pub fn laplace_log_evidence_with(
    fit: &AriSFit,
    data: &Dataset,
    h: &Hyper,
    dimension: LaplaceDimension,
) -> Result<EvidenceEstimate> {
    let (state, reduced) = fit.state.restrict(data);
    let p = reduced.p();
    let n = reduced.n();
    let log_value = if p == 0 {
        // Only σ² remains: a one-dimensional Laplace integral.
        h.validate()?;
        let s2 = state.sigma2;
        if !(s2 > 0.0) {
            return Err(ArisError::NonPositiveSigma2(s2));
        }
        let r = reduced.y.norm_squared();
        let lj = log_joint_parts(n, r, &[], s2, &[], h);
        let curvature = -(n as f64 / 2.0 + 1.0) / (s2 * s2) + r / (s2 * s2 * s2);
        if !(curvature > 0.0) {
            return Err(ArisError::NonInteriorMode);
        }
        let dim = match dimension {
            LaplaceDimension::Full => 1.0,
            LaplaceDimension::Literal => 0.0,
        };
        lj + 0.5 * dim * LN_2PI - 0.5 * curvature.ln()
    } else {
        let blocks = negative_hessian(&state, &reduced, h)?;
        let log_det = scaled_log_det(&blocks.assemble())?;
        let idx: Vec<usize> = (0..p).collect();
        let lj = log_joint_parts(
            n,
            rss(&reduced.x, &reduced.y, &idx, &state.beta),
            state.beta.as_slice(),
            state.sigma2,
            state.v_inv.as_slice(),
            h,
        );
        let dim = match dimension {
            LaplaceDimension::Full => blocks.dim() as f64,
            LaplaceDimension::Literal => p as f64,
        };
        lj + 0.5 * dim * LN_2PI - 0.5 * log_det
    };
    if !log_value.is_finite() {
        return Err(ArisError::NonFiniteEvidence);
    }
    Ok(EvidenceEstimate {
        log_value,
        method: EvidenceKind::Laplace,
        k: None,
        mc_draws: None,
        mc_se: None,
    })
}

/// Precomputed pieces for repeated evaluation of `log p(y | v⁻¹)`.
struct Marginal<'a> {
    data: &'a Dataset,
    gram: Gram,
    idx: Vec<usize>,
    constant: f64,
}

impl<'a> Marginal<'a> {
    fn new(data: &'a Dataset) -> Self {
        let n = data.n() as f64;
        Marginal {
            data,
            gram: Gram::new(&data.x, &data.y),
            idx: (0..data.p()).collect(),
            constant: -0.5 * n * LN_2PI + ln_gamma(0.5 * n),
        }
    }

    /// `log p(y | v⁻¹)` with `β` and `σ²` integrated out:
    /// `(2π)^{-n/2} |V|^{-1/2} |X'X + V⁻¹|^{-1/2} Γ(n/2) (S²/2)^{-n/2}`.
    fn log_value(&self, v_inv: &[f64]) -> Result<f64> {
        let n = self.data.n() as f64;
        let yty = self.gram.yty;
        if self.idx.is_empty() {
            if !(yty > 0.0) {
                return Err(ArisError::NonPositiveS2);
            }
            return Ok(self.constant - 0.5 * n * (0.5 * yty).ln());
        }
        let chol = spd_factor(self.gram.penalized(&self.idx, v_inv))?;
        let beta = chol.solve(&self.gram.xty);
        let mut s2 = yty - self.gram.xty.dot(&beta);
        if s2 < 1e-8 * yty {
            let quad: f64 = beta.iter().zip(v_inv).map(|(b, w)| w * b * b).sum();
            s2 = rss(&self.data.x, &self.data.y, &self.idx, &beta) + quad;
        }
        if !(s2 > 1e-12 * yty) {
            return Err(ArisError::NonPositiveS2);
        }
        let log_det_w: f64 = v_inv.iter().map(|w| w.ln()).sum();
        Ok(self.constant + 0.5 * log_det_w - 0.5 * chol_log_det(&chol) - 0.5 * n * (0.5 * s2).ln())
    }
}

/// `log p(y | v⁻¹)` under the Jeffreys prior on `σ²`, with every constant kept.
/// `v_inv` must have one finite positive entry per column of `data`.
pub fn conditional_marginal(data: &Dataset, v_inv: &DVector<f64>) -> Result<f64> {
    if v_inv.len() != data.p() {
        return Err(ArisError::DimensionMismatch(format!(
            "{} precisions for {} columns",
            v_inv.len(),
            data.p()
        )));
    }
    if let Some(j) = v_inv.iter().position(|w| !w.is_finite()) {
        return Err(ArisError::InfinitePrecision(j));
    }
    if v_inv.iter().any(|&w| !(w > 0.0)) {
        return Err(ArisError::SingularSystem);
    }
    Marginal::new(data).log_value(v_inv.as_slice())
}

/// `log Gamma(w; shape η + 1, rate μ)`.
pub fn log_precision_prior(w: f64, h: &Hyper) -> f64 {
    (h.eta + 1.0) * h.mu.ln() - ln_gamma(h.eta + 1.0) + h.eta * w.ln() - h.mu * w
}

/// Half-widths of the sampling box: `σ_j = [v_j²(1/2 + η)]^{-1/2}` with
/// `v_j = 1 / v_j⁻¹`.
pub fn precision_scales(v_inv: &DVector<f64>, h: &Hyper) -> DVector<f64> {
    v_inv.map(|w| w / (0.5 + h.eta).sqrt())
}

/// Sampling box `max(0, v̂⁻¹ − kσ) < v⁻¹ < v̂⁻¹ + kσ` per active coordinate.
pub fn sampling_box(v_inv: &DVector<f64>, h: &Hyper, k: f64) -> Vec<(f64, f64)> {
    precision_scales(v_inv, h)
        .iter()
        .zip(v_inv.iter())
        .map(|(s, w)| ((w - k * s).max(0.0), w + k * s))
        .collect()
}

/// Monte-Carlo estimate of `log p(y | η)`: uniform draws of `v⁻¹` over
/// [`sampling_box`], scaled by the box volume. `mc_se` is the delta-method
/// standard error of the log estimate.
pub fn mc_log_evidence(
    fit: &AriSFit,
    data: &Dataset,
    h: &Hyper,
    k: f64,
    draws: usize,
    seed: u64,
) -> Result<EvidenceEstimate> {
    h.validate()?;
    if h.eta <= -0.5 {
        return Err(ArisError::InvalidHyper(format!(
            "the sampling box needs eta > -1/2, got {}",
            h.eta
        )));
    }
    if draws == 0 {
        return Err(ArisError::InvalidOption("draws must be >= 1".into()));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(ArisError::InvalidOption(format!("box width k = {k}")));
    }
    let (state, reduced) = fit.state.restrict(data);
    let marginal = Marginal::new(&reduced);
    let estimate = |log_value: f64, se: f64| EvidenceEstimate {
        log_value,
        method: EvidenceKind::HypercubeMc,
        k: Some(k),
        mc_draws: Some(draws),
        mc_se: Some(se),
    };
    if reduced.p() == 0 {
        return Ok(estimate(marginal.log_value(&[])?, 0.0));
    }

    let bounds = sampling_box(&state.v_inv, h, k);
    let mut log_volume = 0.0;
    for &(lo, hi) in &bounds {
        if !(hi > lo) || !hi.is_finite() {
            return Err(ArisError::EmptyBox);
        }
        log_volume += (hi - lo).ln();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut logs = Vec::with_capacity(draws);
    let mut w = vec![0.0; bounds.len()];
    for _ in 0..draws {
        for (wj, &(lo, hi)) in w.iter_mut().zip(&bounds) {
            *wj = lo + (hi - lo) * rng.random::<f64>();
        }
        let value = if w.iter().any(|&wj| wj <= 0.0) {
            f64::NEG_INFINITY
        } else {
            marginal.log_value(&w)? + w.iter().map(|&wj| log_precision_prior(wj, h)).sum::<f64>()
        };
        if value.is_nan() || value == f64::INFINITY {
            return Err(ArisError::NonFiniteEvidence);
        }
        logs.push(value);
    }

    let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(ArisError::AllZeroIntegrand);
    }
    let scaled: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
    let m = draws as f64;
    let mean = scaled.iter().sum::<f64>() / m;
    let se = if draws > 1 {
        let var = scaled.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0);
        (var / m).sqrt() / mean
    } else {
        f64::INFINITY
    };
    let log_value = log_volume + shift + mean.ln();
    if !log_value.is_finite() {
        return Err(ArisError::NonFiniteEvidence);
    }
    Ok(estimate(log_value, se))
}

/// One scored grid point of an empirical-Bayes selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub eta: f64,
    pub fit: Option<AriSFit>,
    pub estimate: Option<EvidenceEstimate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EbSelection {
    /// Ascending `η` values.
    pub grid: Vec<f64>,
    pub points: Vec<GridPoint>,
    pub best_index: usize,
    pub best_eta: f64,
    pub refit: AriSFit,
}

impl EbSelection {
    pub fn best_log_evidence(&self) -> f64 {
        self.points[self.best_index]
            .estimate
            .as_ref()
            .map_or(f64::NEG_INFINITY, |e| e.log_value)
    }

    /// Active masks of every grid point that produced a fit.
    pub fn active_masks(&self) -> Vec<Vec<bool>> {
        self.points
            .iter()
            .filter_map(|pt| pt.fit.as_ref().map(|f| f.state.active.clone()))
            .collect()
    }
}

fn score(fit: &AriSFit, data: &Dataset, h: &Hyper, method: &EvidenceMethod, index: usize) -> Result<EvidenceEstimate> {
    match *method {
        EvidenceMethod::Laplace(dim) => laplace_log_evidence_with(fit, data, h, dim),
        EvidenceMethod::HypercubeMc { k, draws, seed } => {
            let stream = derive_seed(seed, &[EVIDENCE_STREAM, index as u64, k.to_bits()]);
            mc_log_evidence(fit, data, h, k, draws, stream)
        }
    }
}

/// Fits the joint mode at every grid value, scores each with `method` and
/// returns the maximizer. Ties within [`TIE_TOL`] go to the smaller `η`. The
/// selection fails only when every grid point fails.
pub fn select_eta(data: &Dataset, grid: &[f64], method: &EvidenceMethod, opts: &FitOptions) -> Result<EbSelection> {
    if grid.is_empty() {
        return Err(ArisError::EmptyInput);
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();

    let mut points = Vec::with_capacity(sorted.len());
    for (i, &eta) in sorted.iter().enumerate() {
        let h = opts.hyper(eta);
        let point = match fit_joint_mode(data, &h, opts) {
            Ok(fit) => match score(&fit, data, &h, method, i) {
                Ok(est) => GridPoint {
                    eta,
                    fit: Some(fit),
                    estimate: Some(est),
                    error: None,
                },
                Err(e) => GridPoint {
                    eta,
                    fit: Some(fit),
                    estimate: None,
                    error: Some(e.to_string()),
                },
            },
            Err(e) => GridPoint {
                eta,
                fit: None,
                estimate: None,
                error: Some(e.to_string()),
            },
        };
        points.push(point);
    }

    let mut best: Option<(usize, f64)> = None;
    for (i, pt) in points.iter().enumerate() {
        if let Some(est) = &pt.estimate {
            match best {
                Some((_, v)) if est.log_value <= v + TIE_TOL => {}
                _ => best = Some((i, est.log_value)),
            }
        }
    }
    let Some((best_index, _)) = best else {
        let reasons: Vec<String> = points
            .iter()
            .map(|p| format!("eta={}: {}", p.eta, p.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(ArisError::AllGridPointsFailed(reasons.join("; ")));
    };
    let refit = points[best_index].fit.clone().expect("scored points carry a fit");
    Ok(EbSelection {
        best_eta: sorted[best_index],
        grid: sorted,
        points,
        best_index,
        refit,
    })
}
