use aris_core::aris::fit_joint_mode;
use aris_core::evidence::{
    conditional_marginal, laplace_log_evidence, laplace_log_evidence_with, mc_log_evidence, negative_hessian, select_eta,
    EvidenceMethod, LaplaceDimension, TIE_TOL,
};
use aris_core::model::{standardize, Dataset, FitOptions, Hyper, PosteriorState};
use aris_validation::{fd_negative_hessian, log_integral, random_problem, scalar_conditional_marginal, LN_2PI};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Worst entry-wise error, each relative to `max(|H_ij|, sqrt(|H_ii H_jj|))`.
fn hessian_error(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    let d = got.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let scale = want[(i, j)].abs().max((want[(i, i)] * want[(j, j)]).abs().sqrt());
            worst = worst.max((got[(i, j)] - want[(i, j)]).abs() / scale);
        }
    }
    worst
}

#[test]
fn hessian_blocks_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    for seed in 0..40 {
        let p = 1 + seed as usize % 4;
        let (d, _) = random_problem(seed, 30, p);
        let eta = rng.random_range(0.0..3.0);
        let mu = rng.random_range(0.05..2.0);
        let h = Hyper::with_mu(eta, mu).unwrap();
        let fit = fit_joint_mode(&d, &h, &FitOptions { mu, ..FitOptions::default() }).unwrap();
        let (mode, reduced) = fit.state.restrict(&d);
        if reduced.p() == 0 {
            continue;
        }
        let jitter = |v: f64, rng: &mut ChaCha8Rng| {
            let z: f64 = StandardNormal.sample(rng);
            v * (0.05 * z).exp()
        };
        let point = PosteriorState {
            beta: mode.beta.map(|b| jitter(b, &mut rng)),
            sigma2: jitter(mode.sigma2, &mut rng),
            v_inv: mode.v_inv.map(|w| jitter(w, &mut rng)),
            active: mode.active.clone(),
        };
        let Ok(blocks) = negative_hessian(&point, &reduced, &h) else {
            continue;
        };
        let fd = fd_negative_hessian(
            &reduced,
            point.beta.as_slice(),
            point.sigma2,
            point.v_inv.as_slice(),
            eta,
            mu,
        );
        let err = hessian_error(&blocks.assemble(), &fd);
        assert!(err < 1e-5, "seed {seed}: relative error {err}");
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} interior points");
}

#[test]
fn conditional_marginal_matches_scalar_formula() {
    let (d, _) = random_problem(21, 25, 1);
    for w in [1e-3, 0.1, 1.0, 40.0, 1e6] {
        let got = conditional_marginal(&d, &DVector::from_element(1, w)).unwrap();
        let want = scalar_conditional_marginal(d.x.as_slice(), d.y.as_slice(), w);
        assert!((got - want).abs() < 1e-9, "w = {w}: {got} vs {want}");
    }
}

#[test]
fn conditional_marginal_matches_nested_quadrature() {
    let (d, _) = random_problem(8, 20, 1);
    let x = d.x.as_slice().to_vec();
    let y = d.y.as_slice().to_vec();
    let n = y.len() as f64;
    for w in [0.2, 3.0] {
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let b_hat = xy / (xx + w);
        let s_hat: f64 = y.iter().map(|v| v * v).sum::<f64>() / n;
        let sd = (s_hat / (xx + w)).sqrt();
        // log of N(y | xβ, s) N(β | 0, s/w) / s in (β, u = ln s); the ds = s du
        // Jacobian cancels the 1/s prior.
        let g = |beta: f64, u: f64| {
            let s = u.exp();
            let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - a * beta).powi(2)).sum();
            -n / 2.0 * (LN_2PI + u) - rss / (2.0 * s) - 0.5 * (LN_2PI + u - w.ln()) - w * beta * beta / (2.0 * s)
        };
        let inner = |beta: f64| log_integral(&|u| g(beta, u), s_hat.ln() - 12.0, s_hat.ln() + 12.0, 1e-12);
        let quad = log_integral(&inner, b_hat - 60.0 * sd, b_hat + 60.0 * sd, 1e-12);
        let got = conditional_marginal(&d, &DVector::from_element(1, w)).unwrap();
        assert!((got - quad).abs() < 1e-6, "w = {w}: {got} vs {quad}");
    }
}

/// `log ∫ p(y | σ²) p(σ²) dσ²` with no predictors, by quadrature in `ln σ²`.
fn null_model_quadrature(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let g = |u: f64| -n / 2.0 * (LN_2PI + u) - yy / (2.0 * u.exp());
    let centre = (yy / n).ln();
    log_integral(&g, centre - 15.0, centre + 15.0, 1e-12)
}

#[test]
fn pure_noise_laplace_matches_quadrature() {
    let mut found = 0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 50;
        let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let (d, _) = standardize(&x, &y).unwrap();
        let h = Hyper::new(0.0);
        let fit = fit_joint_mode(&d, &h, &FitOptions::default()).unwrap();
        if fit.state.n_active() > 0 {
            continue;
        }
        let lap = laplace_log_evidence(&fit, &d, &h).unwrap().log_value;
        let exact = null_model_quadrature(d.y.as_slice());
        assert!((lap - exact).abs() < 0.1, "seed {seed}: {lap} vs {exact}");
        let literal = laplace_log_evidence_with(&fit, &d, &h, LaplaceDimension::Literal).unwrap();
        assert!((lap - literal.log_value - 0.5 * LN_2PI).abs() < 1e-12);
        found += 1;
    }
    assert!(found >= 5, "only {found} fully pruned fits");
}

fn fitted(seed: u64, eta: f64) -> (Dataset, aris_core::AriSFit, Hyper) {
    let (d, _) = random_problem(seed, 40, 3);
    let h = Hyper::new(eta);
    let fit = fit_joint_mode(&d, &h, &FitOptions::default()).unwrap();
    (d, fit, h)
}

#[test]
fn mc_evidence_is_seed_deterministic_and_finite() {
    for seed in 0..10 {
        let (d, fit, h) = fitted(seed, 0.5);
        let a = mc_log_evidence(&fit, &d, &h, 10.0, 300, 4).unwrap();
        let b = mc_log_evidence(&fit, &d, &h, 10.0, 300, 4).unwrap();
        assert_eq!(a, b);
        assert!(a.log_value.is_finite());
        let se = a.mc_se.unwrap();
        assert!(se.is_finite() && se >= 0.0);
        if fit.state.n_active() > 0 {
            let c = mc_log_evidence(&fit, &d, &h, 10.0, 300, 5).unwrap();
            assert_ne!(a.log_value, c.log_value);
        }
    }
}

#[test]
fn mc_single_draw_has_infinite_se() {
    let (d, fit, h) = fitted(2, 1.0);
    let e = mc_log_evidence(&fit, &d, &h, 10.0, 1, 0).unwrap();
    assert!(e.log_value.is_finite());
    assert_eq!(e.mc_se, Some(f64::INFINITY));
}

#[test]
fn select_eta_breaks_ties_toward_smaller_eta() {
    // Every grid point prunes to the empty model, so all evidences coincide.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..200 {
        let x = DMatrix::from_fn(60, 2, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(60, |_, _| StandardNormal.sample(&mut rng));
        let (d, _) = standardize(&x, &y).unwrap();
        let sel = select_eta(
            &d,
            &[4.0, 1.0, 0.0, 2.0, 1.0],
            &EvidenceMethod::Laplace(LaplaceDimension::Full),
            &FitOptions::default(),
        )
        .unwrap();
        if sel.points.iter().any(|p| p.fit.as_ref().is_some_and(|f| f.state.n_active() > 0)) {
            continue;
        }
        assert_eq!(sel.grid, vec![0.0, 1.0, 2.0, 4.0]);
        let values: Vec<f64> = sel.points.iter().map(|p| p.estimate.as_ref().unwrap().log_value).collect();
        assert!(values.iter().all(|v| (v - values[0]).abs() <= TIE_TOL));
        assert_eq!(sel.best_eta, 0.0);
        return;
    }
    panic!("no fully pruned instance found");
}
