//! Independent numerical oracles for testing aris-core. Nothing here calls
//! into the solver or evidence code.

use aris_core::model::{standardize, Dataset, Standardization};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standardized random regression problem with correlated predictors,
/// `n` rows and `p` columns.
pub fn random_problem(seed: u64, n: usize, p: usize) -> (Dataset, Standardization) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho: f64 = rng.random_range(-0.4..0.6);
    let mut x = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        let common: f64 = StandardNormal.sample(&mut rng);
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = z + rho.max(0.0).sqrt() * common;
        }
    }
    let beta: Vec<f64> = (0..p)
        .map(|_| {
            if rng.random_bool(0.4) {
                0.0
            } else {
                rng.random_range(-3.0..3.0)
            }
        })
        .collect();
    let noise = rng.random_range(0.5..3.0);
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        (0..p).map(|j| x[(i, j)] * beta[j]).sum::<f64>() + noise * e + 2.0
    });
    standardize(&x, &y).unwrap()
}

/// Random problem with size drawn from the seed: `p` in 1..=6, `n` in
/// `p+3..=60`.
pub fn random_sized_problem(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let p = rng.random_range(1..=6);
    let n = rng.random_range(p + 3..=60);
    random_problem(seed, n, p).0
}

pub fn residual_ss(data: &Dataset, beta: &DVector<f64>) -> f64 {
    (&data.y - &data.x * beta).norm_squared()
}

/// Log joint density written term by term from the generative model.
pub fn log_joint_oracle(data: &Dataset, beta: &[f64], s: f64, w: &[f64], eta: f64, mu: f64) -> f64 {
    let n = data.n();
    let b = DVector::from_column_slice(beta);
    // Likelihood N(y | Xβ, sI).
    let mut total = -(n as f64) / 2.0 * (LN_2PI + s.ln()) - residual_ss(data, &b) / (2.0 * s);
    for (bj, wj) in beta.iter().zip(w) {
        // β_j | s, w_j ~ N(0, s / w_j).
        let var = s / wj;
        total += -0.5 * (LN_2PI + var.ln()) - bj * bj / (2.0 * var);
        // w_j ~ Gamma(shape η+1, rate μ).
        let a = eta + 1.0;
        total += a * mu.ln() - statrs::function::gamma::ln_gamma(a) + (a - 1.0) * wj.ln() - mu * wj;
    }
    // p(s) ∝ 1/s.
    total - s.ln()
}

/// Analytic gradient of [`log_joint_oracle`] in the order `(β, s, w)`.
pub fn log_joint_gradient(data: &Dataset, beta: &[f64], s: f64, w: &[f64], eta: f64, mu: f64) -> DVector<f64> {
    let (n, p) = (data.n(), beta.len());
    let b = DVector::from_column_slice(beta);
    let r = &data.y - &data.x * &b;
    let quad: f64 = beta.iter().zip(w).map(|(bj, wj)| wj * bj * bj).sum();
    let mut g = DVector::zeros(2 * p + 1);
    for k in 0..p {
        g[k] = (data.x.column(k).dot(&r) - w[k] * beta[k]) / s;
        g[p + 1 + k] = -beta[k] * beta[k] / (2.0 * s) + (0.5 + eta) / w[k] - mu;
    }
    g[p] = -(((n + p) as f64) / 2.0 + 1.0) / s + (r.norm_squared() + quad) / (2.0 * s * s);
    g
}

/// Negative Hessian by central differences of the analytic gradient, with
/// relative step sizes per coordinate.
pub fn fd_negative_hessian(data: &Dataset, beta: &[f64], s: f64, w: &[f64], eta: f64, mu: f64) -> DMatrix<f64> {
    let p = beta.len();
    let d = 2 * p + 1;
    let mut theta: Vec<f64> = beta.iter().copied().chain([s]).chain(w.iter().copied()).collect();
    let grad_at = |t: &[f64]| log_joint_gradient(data, &t[..p], t[p], &t[p + 1..], eta, mu);
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let step = 1e-5 * theta[i].abs().max(1e-3);
        let orig = theta[i];
        theta[i] = orig + step;
        let gp = grad_at(&theta);
        theta[i] = orig - step;
        let gm = grad_at(&theta);
        theta[i] = orig;
        for j in 0..d {
            h[(j, i)] = -(gp[j] - gm[j]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Log of `∫ exp(g(u)) du` over `[a, b]`, scaling by the peak found on a
/// coarse scan so the integrand stays near 1.
pub fn log_integral<G: Fn(f64) -> f64>(g: &G, a: f64, b: f64, rel_tol: f64) -> f64 {
    let peak = (0..=2000)
        .map(|i| g(a + (b - a) * i as f64 / 2000.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let f = |u: f64| (g(u) - peak).exp();
    peak + adaptive_simpson(&f, a, b, rel_tol).ln()
}

/// Exact `log p(y | w)` for a single predictor, integrating `β` and `s`
/// analytically from first principles.
pub fn scalar_conditional_marginal(x: &[f64], y: &[f64], w: f64) -> f64 {
    let n = y.len() as f64;
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let a = xx + w;
    let s2 = yy - xy * xy / a;
    // ∫ N(y|xβ, s) N(β|0, s/w) dβ = (2πs)^{-n/2} sqrt(w/a) exp(-S²/(2s)),
    // then ∫ s^{-n/2-1} exp(-S²/(2s)) ds = Γ(n/2) (S²/2)^{-n/2}.
    -n / 2.0 * LN_2PI + 0.5 * (w / a).ln() + statrs::function::gamma::ln_gamma(n / 2.0) - n / 2.0 * (s2 / 2.0).ln()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
