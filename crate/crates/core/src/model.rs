//! Shared domain types, the standardization protocol and the joint
//! log-posterior of the hierarchical model
//!
//! ```text
//! y | β, σ²      ~ N(Xβ, σ² I)
//! β | σ², v⁻¹    ~ N(0, σ² V),          V = diag(v_j)
//! p(σ²)          ∝ 1/σ²
//! v_j⁻¹ | η, μ   ~ Gamma(shape η+1, rate μ)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{ArisError, Result};
use crate::linalg::{rss, select, select_columns};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Design matrix and response. After [`standardize`] the columns of `x` have
/// unit 2-norm and `y` is centred.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(ArisError::EmptyInput);
        }
        if x.nrows() != y.len() {
            return Err(ArisError::DimensionMismatch(format!(
                "x has {} rows but y has length {}",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(ArisError::NonFiniteInput(format!(
                "x[{}, {}]",
                k % x.nrows(),
                k / x.nrows()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(ArisError::NonFiniteInput(format!("y[{i}]")));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Sub-design over the listed columns.
    pub fn columns(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: select_columns(&self.x, idx),
            y: self.y.clone(),
        }
    }
}

/// Record of the transform applied by [`standardize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub column_norms: Vec<f64>,
    pub y_mean: f64,
}

impl Standardization {
    /// The no-op transform for data that is already on the fitted scale.
    pub fn identity(p: usize) -> Self {
        Standardization {
            column_norms: vec![1.0; p],
            y_mean: 0.0,
        }
    }

    /// Maps raw-scale coefficients to the standardized scale.
    pub fn standardize_beta(&self, beta_raw: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(beta_raw.len(), self.column_norms.len())?;
        Ok(DVector::from_fn(beta_raw.len(), |j, _| {
            beta_raw[j] * self.column_norms[j]
        }))
    }
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(ArisError::DimensionMismatch(format!(
            "expected length {want}, got {got}"
        )));
    }
    Ok(())
}

/// Centres `y` and scales every column of `x` to unit 2-norm. No intercept
/// column is added; centring plays that role.
pub fn standardize(raw_x: &DMatrix<f64>, raw_y: &DVector<f64>) -> Result<(Dataset, Standardization)> {
    let raw = Dataset::new(raw_x.clone(), raw_y.clone())?;
    let n = raw.n();
    let mut x = raw.x;
    let mut norms = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let norm = x.column(j).norm();
        if norm == 0.0 {
            return Err(ArisError::ZeroNormColumn(j));
        }
        x.column_mut(j).unscale_mut(norm);
        norms.push(norm);
    }
    let y_mean = raw.y.sum() / n as f64;
    let y = raw.y.add_scalar(-y_mean);
    Ok((
        Dataset { x, y },
        Standardization {
            column_norms: norms,
            y_mean,
        },
    ))
}

/// Maps fitted (standardized-scale) coefficients back to the raw predictor
/// scale. The matching intercept is `s.y_mean`.
pub fn destandardize_beta(beta_std: &DVector<f64>, s: &Standardization) -> Result<DVector<f64>> {
    check_len(beta_std.len(), s.column_norms.len())?;
    Ok(DVector::from_fn(beta_std.len(), |j, _| {
        beta_std[j] / s.column_norms[j]
    }))
}

/// Prior hyper-parameters: gamma shape offset `eta` and inverse scale `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub eta: f64,
    pub mu: f64,
}

impl Hyper {
    /// `mu` defaults to machine epsilon.
    pub fn new(eta: f64) -> Self {
        Hyper {
            eta,
            mu: f64::EPSILON,
        }
    }

    pub fn with_mu(eta: f64, mu: f64) -> Result<Self> {
        let h = Hyper { eta, mu };
        h.validate()?;
        Ok(h)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() {
            return Err(ArisError::InvalidHyper(format!("eta = {}", self.eta)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(ArisError::InvalidHyper(format!(
                "mu must be > 0, got {}",
                self.mu
            )));
        }
        Ok(())
    }

    /// Joint-mode solvers need a proper precision prior, `eta > -1`.
    pub(crate) fn validate_joint(&self) -> Result<()> {
        self.validate()?;
        if self.eta <= -1.0 {
            return Err(ArisError::InvalidHyper(format!(
                "eta must exceed -1, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Posterior-mode state on the standardized scale. A pruned coordinate has
/// `v_inv = +inf`, `beta = 0` and `active = false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub v_inv: DVector<f64>,
    pub active: Vec<bool>,
}

impl PosteriorState {
    pub fn active_indices(&self) -> Vec<usize> {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(j, &a)| a.then_some(j))
            .collect()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// The reduced model: state and data restricted to the active coordinates.
    pub fn restrict(&self, data: &Dataset) -> (PosteriorState, Dataset) {
        let idx = self.active_indices();
        (
            PosteriorState {
                beta: select(&self.beta, &idx),
                sigma2: self.sigma2,
                v_inv: select(&self.v_inv, &idx),
                active: vec![true; idx.len()],
            },
            data.columns(&idx),
        )
    }
}

/// Iteration controls shared by the joint-mode and EM solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Threshold on `max_j |Δβ_j| / (1 + |β_j|)`.
    pub conv_tol: f64,
    /// A coordinate is pruned once its prior variance drops below this.
    pub prune_tol: f64,
    pub mu: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            conv_tol: 1e-8,
            prune_tol: 1e-8,
            mu: f64::EPSILON,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(ArisError::InvalidOption("max_iter must be >= 1".into()));
        }
        for (name, v) in [
            ("conv_tol", self.conv_tol),
            ("prune_tol", self.prune_tol),
            ("mu", self.mu),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ArisError::InvalidOption(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn hyper(&self, eta: f64) -> Hyper {
        Hyper { eta, mu: self.mu }
    }
}

/// Result of a joint posterior-mode fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AriSFit {
    pub state: PosteriorState,
    pub iterations: usize,
    pub converged: bool,
    /// Log joint posterior of the active submodel after each full cycle.
    pub log_joint_trace: Vec<f64>,
    /// Active-set size at each trace entry.
    pub active_trace: Vec<usize>,
    pub standardization: Standardization,
}

impl AriSFit {
    pub fn with_standardization(mut self, s: Standardization) -> Self {
        self.standardization = s;
        self
    }

    /// Coefficients on the raw predictor scale.
    pub fn raw_beta(&self) -> DVector<f64> {
        destandardize_beta(&self.state.beta, &self.standardization)
            .expect("standardization built for this fit")
    }

    pub fn intercept(&self) -> f64 {
        self.standardization.y_mean
    }
}

/// Log of the joint density `p(y, β, σ², v⁻¹ | η, μ)` with every normalizing
/// constant kept, so values are comparable across `eta`. All precisions must
/// be finite: evaluate pruned fits on [`PosteriorState::restrict`]ed inputs.
pub fn log_joint_posterior(state: &PosteriorState, data: &Dataset, h: &Hyper) -> Result<f64> {
    h.validate()?;
    let p = data.p();
    if state.beta.len() != p || state.v_inv.len() != p {
        return Err(ArisError::DimensionMismatch(format!(
            "state has {} coefficients, data has {p} columns",
            state.beta.len()
        )));
    }
    if !(state.sigma2 > 0.0) || !state.sigma2.is_finite() {
        return Err(ArisError::NonPositiveSigma2(state.sigma2));
    }
    if let Some(j) = state.v_inv.iter().position(|w| !w.is_finite()) {
        return Err(ArisError::InfinitePrecision(j));
    }
    let idx: Vec<usize> = (0..p).collect();
    Ok(log_joint_parts(
        data.n(),
        rss(&data.x, &data.y, &idx, &state.beta),
        state.beta.as_slice(),
        state.sigma2,
        state.v_inv.as_slice(),
        h,
    ))
}

/// Formula core of [`log_joint_posterior`], given the residual sum of squares.
pub(crate) fn log_joint_parts(
    n: usize,
    rss: f64,
    beta: &[f64],
    sigma2: f64,
    v_inv: &[f64],
    h: &Hyper,
) -> f64 {
    let p = beta.len();
    let half_dim = (n + p) as f64 / 2.0;
    let quad: f64 = beta.iter().zip(v_inv).map(|(b, w)| w * b * b).sum();
    let mut lp = -half_dim * LN_2PI - (half_dim + 1.0) * sigma2.ln() - (rss + quad) / (2.0 * sigma2);
    let shape = 0.5 + h.eta;
    let per_coord_const = (h.eta + 1.0) * h.mu.ln() - ln_gamma(h.eta + 1.0);
    for &w in v_inv {
        if shape != 0.0 {
            lp += shape * w.ln();
        }
        lp += per_coord_const - h.mu * w;
    }
    lp
}
