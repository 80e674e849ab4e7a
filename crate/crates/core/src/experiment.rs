//! Simulation experiments: configuration, replication runner and reports.
//!
//! Configuration files are flat `key = value` text. Blank lines and lines
//! starting with `#` are ignored, lists are comma separated, and every key may
//! appear at most once:
//!
//! ```text
//! model_id = 3
//! n = 100
//! sigma = 3
//! replications = 100
//! evidence_method = laplace
//! estimators = aris-eb, aris-eta0, ols, ridge-gcv
//! master_seed = 2024
//! ```
//!
//! Every replication draws from streams derived from `(master_seed, index)`,
//! so results do not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aris::fit_joint_mode;
use crate::baselines::{default_lambda_grid, fit_ols, fit_ridge_gcv};
use crate::em::{fit_em, EmVariant};
use crate::error::{ArisError, Result};
use crate::evidence::{
    select_eta, EbSelection, EvidenceMethod, LaplaceDimension, DEFAULT_ETA_GRID, DEFAULT_K_SWEEP, DEFAULT_MC_DRAWS,
};
use crate::metrics::{
    median_and_bootstrap_se, path_contains_truth, support_metrics, test_mse, ReplicationResult, DEFAULT_BOOTSTRAP,
};
use crate::model::{destandardize_beta, standardize, Dataset, FitOptions, Standardization};
use crate::seed::{derive_seed, BOOTSTRAP_STREAM, EVIDENCE_STREAM};
use crate::simgen::{draw_dataset, draw_test_set, DgpSpec, TruthRecord, DEFAULT_TEST_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    ArisEb,
    ArisEta0,
    Ols,
    RidgeGcv,
    Em,
    /// Best member of the solution path over `path_grid`; its CM is the
    /// proportion of paths containing the true model.
    ArisPath,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::ArisEb,
        Estimator::ArisEta0,
        Estimator::Ols,
        Estimator::RidgeGcv,
        Estimator::Em,
        Estimator::ArisPath,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::ArisEb => "aris-eb",
            Estimator::ArisEta0 => "aris-eta0",
            Estimator::Ols => "ols",
            Estimator::RidgeGcv => "ridge-gcv",
            Estimator::Em => "em",
            Estimator::ArisPath => "aris-path",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = ArisError;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| ArisError::Config(format!("unknown estimator `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceChoice {
    Laplace,
    Mc,
    Eta0Only,
}

impl EvidenceChoice {
    pub fn name(self) -> &'static str {
        match self {
            EvidenceChoice::Laplace => "laplace",
            EvidenceChoice::Mc => "mc",
            EvidenceChoice::Eta0Only => "eta0-only",
        }
    }
}

impl FromStr for EvidenceChoice {
    type Err = ArisError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(EvidenceChoice::Laplace),
            "mc" => Ok(EvidenceChoice::Mc),
            "eta0-only" => Ok(EvidenceChoice::Eta0Only),
            _ => Err(ArisError::Config(format!("unknown evidence_method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model_id: u8,
    pub n: usize,
    pub sigma: f64,
    pub replications: usize,
    pub test_size: usize,
    pub eta_grid: Vec<f64>,
    /// Grid for `aris-path`; defaults to `eta_grid`.
    pub path_grid: Vec<f64>,
    pub evidence_method: EvidenceChoice,
    pub laplace_dimension: LaplaceDimension,
    pub k_sweep: Vec<f64>,
    pub mc_draws: usize,
    pub master_seed: u64,
    pub estimators: Vec<Estimator>,
    pub em_eta: f64,
    pub em_variant: EmVariant,
    pub n_boot: usize,
    pub fit: FitOptions,
}

impl ExperimentConfig {
    /// Defaults for everything except the design.
    pub fn new(model_id: u8, n: usize, sigma: f64) -> Self {
        ExperimentConfig {
            model_id,
            n,
            sigma,
            replications: 100,
            test_size: DEFAULT_TEST_SIZE,
            eta_grid: DEFAULT_ETA_GRID.to_vec(),
            path_grid: DEFAULT_ETA_GRID.to_vec(),
            evidence_method: EvidenceChoice::Laplace,
            laplace_dimension: LaplaceDimension::Full,
            k_sweep: DEFAULT_K_SWEEP.to_vec(),
            mc_draws: DEFAULT_MC_DRAWS,
            master_seed: 0,
            estimators: vec![Estimator::ArisEb, Estimator::ArisEta0, Estimator::Ols, Estimator::RidgeGcv],
            em_eta: -1.0,
            em_variant: EmVariant::IndependentPrior,
            n_boot: DEFAULT_BOOTSTRAP,
            fit: FitOptions::default(),
        }
    }

    /// Parses the `key = value` grammar described in the module docs.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ArisError::Config(format!("line {}: expected `key = value`", lineno + 1)));
            };
            let key = key.trim().to_string();
            if entries.insert(key.clone(), (lineno + 1, value.trim().to_string())).is_some() {
                return Err(ArisError::Config(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
        }

        let take = |entries: &mut BTreeMap<String, (usize, String)>, key: &str| entries.remove(key);
        let required = |entries: &mut BTreeMap<String, (usize, String)>, key: &str| {
            take(entries, key).ok_or_else(|| ArisError::Config(format!("missing required key `{key}`")))
        };

        let model_id = parse_value(&required(&mut entries, "model_id")?, "model_id")?;
        let n = parse_value(&required(&mut entries, "n")?, "n")?;
        let sigma = parse_value(&required(&mut entries, "sigma")?, "sigma")?;
        let mut cfg = ExperimentConfig::new(model_id, n, sigma);
        let mut path_set = false;
        let mut estimators_set = false;

        let keys: Vec<String> = entries.keys().cloned().collect();
        for key in keys {
            let entry = take(&mut entries, &key).expect("key listed");
            match key.as_str() {
                "replications" => cfg.replications = parse_value(&entry, &key)?,
                "test_size" => cfg.test_size = parse_value(&entry, &key)?,
                "eta_grid" => cfg.eta_grid = parse_list(&entry, &key)?,
                "path_grid" => {
                    cfg.path_grid = parse_list(&entry, &key)?;
                    path_set = true;
                }
                "evidence_method" => cfg.evidence_method = parse_value(&entry, &key)?,
                "laplace_dimension" => {
                    cfg.laplace_dimension = match entry.1.as_str() {
                        "full" => LaplaceDimension::Full,
                        "literal" => LaplaceDimension::Literal,
                        other => {
                            return Err(ArisError::Config(format!(
                                "line {}: laplace_dimension must be `full` or `literal`, got `{other}`",
                                entry.0
                            )))
                        }
                    }
                }
                "k_sweep" => cfg.k_sweep = parse_list(&entry, &key)?,
                "mc_draws" => cfg.mc_draws = parse_value(&entry, &key)?,
                "master_seed" => cfg.master_seed = parse_value(&entry, &key)?,
                "estimators" => {
                    cfg.estimators = parse_list(&entry, &key)?;
                    estimators_set = true;
                }
                "em_eta" => cfg.em_eta = parse_value(&entry, &key)?,
                "em_variant" => {
                    cfg.em_variant = match entry.1.as_str() {
                        "independent-prior" => EmVariant::IndependentPrior,
                        "explicit-sigma" => EmVariant::ExplicitSigma,
                        other => {
                            return Err(ArisError::Config(format!(
                                "line {}: unknown em_variant `{other}`",
                                entry.0
                            )))
                        }
                    }
                }
                "n_boot" => cfg.n_boot = parse_value(&entry, &key)?,
                "max_iter" => cfg.fit.max_iter = parse_value(&entry, &key)?,
                "conv_tol" => cfg.fit.conv_tol = parse_value(&entry, &key)?,
                "prune_tol" => cfg.fit.prune_tol = parse_value(&entry, &key)?,
                "mu" => cfg.fit.mu = parse_value(&entry, &key)?,
                _ => return Err(ArisError::Config(format!("line {}: unknown key `{key}`", entry.0))),
            }
        }
        if !path_set {
            cfg.path_grid = cfg.eta_grid.clone();
        }
        if !estimators_set && cfg.evidence_method == EvidenceChoice::Eta0Only {
            cfg.estimators.retain(|e| *e != Estimator::ArisEb);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        DgpSpec {
            model_id: self.model_id,
            n: self.n,
            sigma: self.sigma,
            seed: 0,
        }
        .validate()?;
        let fail = |msg: String| Err(ArisError::Config(msg));
        if self.replications == 0 {
            return fail("replications must be >= 1".into());
        }
        if self.test_size == 0 {
            return fail("test_size must be >= 1".into());
        }
        if self.estimators.is_empty() {
            return fail("estimators must be non-empty".into());
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return fail("estimators contains duplicates".into());
        }
        if self.eta_grid.is_empty() || self.eta_grid.iter().any(|e| !(e.is_finite() && *e > -0.5)) {
            return fail("eta_grid must be non-empty with every value finite and > -0.5".into());
        }
        if self.path_grid.is_empty() || self.path_grid.iter().any(|e| !(e.is_finite() && *e >= -0.5)) {
            return fail("path_grid must be non-empty with every value finite and >= -0.5".into());
        }
        if self.estimators.contains(&Estimator::ArisEb) && self.evidence_method == EvidenceChoice::Eta0Only {
            return fail("estimator aris-eb needs evidence_method laplace or mc".into());
        }
        if self.evidence_method == EvidenceChoice::Mc {
            if self.k_sweep.is_empty() || self.k_sweep.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
                return fail("k_sweep must be non-empty with positive finite values".into());
            }
            let mut ks = self.k_sweep.clone();
            ks.sort_by(|a, b| a.total_cmp(b));
            ks.dedup();
            if ks.len() != self.k_sweep.len() {
                return fail("k_sweep contains duplicates".into());
            }
            if self.mc_draws == 0 {
                return fail("mc_draws must be >= 1".into());
            }
        }
        if !(self.em_eta.is_finite() && self.em_eta >= -1.5) {
            return fail(format!("em_eta must be >= -1.5, got {}", self.em_eta));
        }
        if self.em_variant == EmVariant::ExplicitSigma && self.em_eta < -0.5 {
            return fail("the explicit-sigma EM variant needs em_eta >= -0.5".into());
        }
        if self.n_boot < 2 {
            return fail("n_boot must be >= 2".into());
        }
        self.fit.validate()
    }

    /// Canonical text form; parsing it reproduces `self`.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let _ = writeln!(s, "model_id = {}", self.model_id);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "replications = {}", self.replications);
        let _ = writeln!(s, "test_size = {}", self.test_size);
        let _ = writeln!(s, "eta_grid = {}", list(&self.eta_grid));
        let _ = writeln!(s, "path_grid = {}", list(&self.path_grid));
        let _ = writeln!(s, "evidence_method = {}", self.evidence_method.name());
        let _ = writeln!(
            s,
            "laplace_dimension = {}",
            match self.laplace_dimension {
                LaplaceDimension::Full => "full",
                LaplaceDimension::Literal => "literal",
            }
        );
        let _ = writeln!(s, "k_sweep = {}", list(&self.k_sweep));
        let _ = writeln!(s, "mc_draws = {}", self.mc_draws);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let names: Vec<&str> = self.estimators.iter().map(|e| e.name()).collect();
        let _ = writeln!(s, "estimators = {}", names.join(", "));
        let _ = writeln!(s, "em_eta = {}", self.em_eta);
        let _ = writeln!(
            s,
            "em_variant = {}",
            match self.em_variant {
                EmVariant::IndependentPrior => "independent-prior",
                EmVariant::ExplicitSigma => "explicit-sigma",
            }
        );
        let _ = writeln!(s, "n_boot = {}", self.n_boot);
        let _ = writeln!(s, "max_iter = {}", self.fit.max_iter);
        let _ = writeln!(s, "conv_tol = {:e}", self.fit.conv_tol);
        let _ = writeln!(s, "prune_tol = {:e}", self.fit.prune_tol);
        let _ = writeln!(s, "mu = {:e}", self.fit.mu);
        s
    }

    /// Names of the report rows, in output order.
    pub fn row_names(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for e in &self.estimators {
            rows.push(e.name().to_string());
            if *e == Estimator::ArisEb && self.evidence_method == EvidenceChoice::Mc {
                rows.extend(self.k_sweep.iter().map(|k| k_row_name(*k)));
            }
        }
        rows
    }

    pub fn replication_seed(&self, index: usize) -> u64 {
        derive_seed(self.master_seed, &[index as u64])
    }
}

fn k_row_name(k: f64) -> String {
    format!("aris-eb-k{k}")
}

fn parse_value<T: FromStr>(entry: &(usize, String), key: &str) -> Result<T> {
    entry
        .1
        .parse()
        .map_err(|_| ArisError::Config(format!("line {}: cannot parse `{}` for `{key}`", entry.0, entry.1)))
}

fn parse_list<T: FromStr>(entry: &(usize, String), key: &str) -> Result<Vec<T>> {
    entry
        .1
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            item.parse()
                .map_err(|_| ArisError::Config(format!("line {}: cannot parse `{item}` in `{key}`", entry.0)))
        })
        .collect()
}

/// Outcome of one report row on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub estimator: String,
    pub result: Option<ReplicationResult>,
    /// `η` actually used, when the estimator chooses one.
    pub eta: Option<f64>,
    pub k: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub estimator: String,
    pub median_mse: f64,
    pub boot_se: f64,
    pub mean_c: f64,
    pub mean_i: f64,
    pub cm: f64,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: String,
    pub code_version: String,
    pub master_seed: u64,
    pub replication_seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    pub per_replication: Vec<ReplicationRecord>,
    pub provenance: Provenance,
}

impl ExperimentReport {
    pub fn row(&self, estimator: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReplicationRecord> {
        self.per_replication.iter().filter(|r| r.error.is_some())
    }
}

struct Scored {
    result: ReplicationResult,
    eta: Option<f64>,
}

fn score_beta(
    beta_std: &DVector<f64>,
    active: &[bool],
    st: &Standardization,
    truth: &TruthRecord,
    test: &Dataset,
) -> Result<ReplicationResult> {
    let beta_raw = destandardize_beta(beta_std, st)?;
    let mse = test_mse(&beta_raw, st.y_mean, test)?;
    let (c_count, i_count, correct_model) = support_metrics(active, &truth.support_true)?;
    Ok(ReplicationResult {
        mse,
        c_count,
        i_count,
        correct_model,
    })
}

fn score_selection(sel: &EbSelection, st: &Standardization, truth: &TruthRecord, test: &Dataset) -> Result<Scored> {
    let result = score_beta(&sel.refit.state.beta, &sel.refit.state.active, st, truth, test)?;
    Ok(Scored {
        result,
        eta: Some(sel.best_eta),
    })
}

fn mismatch(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn run_path(
    cfg: &ExperimentConfig,
    data: &Dataset,
    st: &Standardization,
    truth: &TruthRecord,
    test: &Dataset,
) -> Result<Scored> {
    let mut grid = cfg.path_grid.clone();
    grid.sort_by(|a, b| a.total_cmp(b));
    let mut fits = Vec::new();
    for &eta in &grid {
        if let Ok(fit) = fit_joint_mode(data, &cfg.fit.hyper(eta), &cfg.fit) {
            fits.push((eta, fit));
        }
    }
    if fits.is_empty() {
        return Err(ArisError::AllGridPointsFailed("every path fit failed".into()));
    }
    let masks: Vec<Vec<bool>> = fits.iter().map(|(_, f)| f.state.active.clone()).collect();
    let contains = path_contains_truth(&masks, &truth.support_true);
    // First exact match, else the closest mask; ties go to the smaller η.
    let (eta, fit) = fits
        .iter()
        .min_by_key(|(_, f)| mismatch(&f.state.active, &truth.support_true))
        .expect("non-empty");
    let mut result = score_beta(&fit.state.beta, &fit.state.active, st, truth, test)?;
    debug_assert_eq!(result.correct_model, contains);
    result.correct_model = contains;
    Ok(Scored {
        result,
        eta: Some(*eta),
    })
}

/// Runs every configured estimator on replication `index`. Estimator failures
/// are recorded per row; only data generation failures abort the replication.
pub fn run_replication(cfg: &ExperimentConfig, index: usize) -> Result<Vec<ReplicationRecord>> {
    let seed = cfg.replication_seed(index);
    let spec = DgpSpec {
        model_id: cfg.model_id,
        n: cfg.n,
        sigma: cfg.sigma,
        seed,
    };
    let (raw, truth) = draw_dataset(&spec)?;
    let test = draw_test_set(&spec, &truth, cfg.test_size)?;
    let (data, st) = standardize(&raw.x, &raw.y)?;
    let p = data.p();
    let all = vec![true; p];

    let mut records = Vec::new();
    let mut push = |name: String, outcome: Result<Scored>, k: Option<f64>| {
        let (result, eta, error) = match outcome {
            Ok(s) => (Some(s.result), s.eta, None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        records.push(ReplicationRecord {
            replication: index,
            seed,
            estimator: name,
            result,
            eta,
            k,
            error,
        });
    };

    for est in &cfg.estimators {
        let name = est.name().to_string();
        match est {
            Estimator::ArisEta0 => {
                let outcome = fit_joint_mode(&data, &cfg.fit.hyper(0.0), &cfg.fit).and_then(|fit| {
                    Ok(Scored {
                        result: score_beta(&fit.state.beta, &fit.state.active, &st, &truth, &test)?,
                        eta: Some(0.0),
                    })
                });
                push(name, outcome, None);
            }
            Estimator::Ols => {
                let outcome = fit_ols(&data).and_then(|b| {
                    Ok(Scored {
                        result: score_beta(&b, &all, &st, &truth, &test)?,
                        eta: None,
                    })
                });
                push(name, outcome, None);
            }
            Estimator::RidgeGcv => {
                let outcome = fit_ridge_gcv(&data, &default_lambda_grid()).and_then(|r| {
                    Ok(Scored {
                        result: score_beta(&r.beta, &all, &st, &truth, &test)?,
                        eta: None,
                    })
                });
                push(name, outcome, None);
            }
            Estimator::Em => {
                let outcome = fit_em(&data, &cfg.fit.hyper(cfg.em_eta), &cfg.fit, cfg.em_variant).and_then(|f| {
                    Ok(Scored {
                        result: score_beta(&f.beta, &f.active, &st, &truth, &test)?,
                        eta: Some(cfg.em_eta),
                    })
                });
                push(name, outcome, None);
            }
            Estimator::ArisPath => push(name, run_path(cfg, &data, &st, &truth, &test), None),
            Estimator::ArisEb => match cfg.evidence_method {
                EvidenceChoice::Laplace => {
                    let method = EvidenceMethod::Laplace(cfg.laplace_dimension);
                    let outcome = select_eta(&data, &cfg.eta_grid, &method, &cfg.fit)
                        .and_then(|sel| score_selection(&sel, &st, &truth, &test));
                    push(name, outcome, None);
                }
                EvidenceChoice::Mc => {
                    let ev_seed = derive_seed(seed, &[EVIDENCE_STREAM]);
                    let sweep: Vec<(f64, Result<EbSelection>)> = cfg
                        .k_sweep
                        .iter()
                        .map(|&k| {
                            let method = EvidenceMethod::HypercubeMc {
                                k,
                                draws: cfg.mc_draws,
                                seed: ev_seed,
                            };
                            (k, select_eta(&data, &cfg.eta_grid, &method, &cfg.fit))
                        })
                        .collect();
                    // Best k by evidence at its selected η; ties go to the smaller k.
                    let mut best: Option<(f64, &EbSelection)> = None;
                    let mut ordered: Vec<&(f64, Result<EbSelection>)> = sweep.iter().collect();
                    ordered.sort_by(|a, b| a.0.total_cmp(&b.0));
                    for (k, sel) in ordered {
                        if let Ok(sel) = sel {
                            if best.is_none_or(|(_, b)| sel.best_log_evidence() > b.best_log_evidence()) {
                                best = Some((*k, sel));
                            }
                        }
                    }
                    let best_outcome = match best {
                        Some((_, sel)) => score_selection(sel, &st, &truth, &test),
                        None => Err(ArisError::AllGridPointsFailed("every k failed".into())),
                    };
                    push(name, best_outcome, best.map(|(k, _)| k));
                    for (k, sel) in &sweep {
                        let outcome = match sel {
                            Ok(sel) => score_selection(sel, &st, &truth, &test),
                            Err(e) => Err(e.clone()),
                        };
                        push(k_row_name(*k), outcome, Some(*k));
                    }
                }
                EvidenceChoice::Eta0Only => {
                    push(
                        name,
                        Err(ArisError::Config("aris-eb needs laplace or mc evidence".into())),
                        None,
                    );
                }
            },
        }
    }
    Ok(records)
}

/// Runs all replications on `jobs` worker threads (`0` uses every core) and
/// aggregates them. Without `allow_failures` the first failing replication
/// (by index) aborts the experiment with [`ArisError::ReplicationFailed`].
pub fn run_experiment<F>(cfg: &ExperimentConfig, jobs: usize, allow_failures: bool, log: F) -> Result<ExperimentReport>
where
    F: Fn(usize, &[ReplicationRecord]) + Sync,
{
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| ArisError::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<Vec<ReplicationRecord>>> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let out = run_replication(cfg, r);
                if let Ok(recs) = &out {
                    log(r, recs);
                }
                out
            })
            .collect()
    });

    let mut per_replication = Vec::new();
    for (index, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(recs) => per_replication.extend(recs),
            Err(e) => {
                let seed = cfg.replication_seed(index);
                per_replication.extend(cfg.row_names().into_iter().map(|name| ReplicationRecord {
                    replication: index,
                    seed,
                    estimator: name,
                    result: None,
                    eta: None,
                    k: None,
                    error: Some(e.to_string()),
                }));
            }
        }
    }
    if !allow_failures {
        if let Some(bad) = per_replication.iter().find(|r| r.error.is_some()) {
            return Err(ArisError::ReplicationFailed {
                index: bad.replication,
                reason: format!("{}: {}", bad.estimator, bad.error.as_deref().unwrap_or("")),
            });
        }
    }

    let rows = aggregate(cfg, &per_replication)?;
    Ok(ExperimentReport {
        rows,
        per_replication,
        provenance: Provenance {
            config: cfg.to_text(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.master_seed,
            replication_seeds: (0..cfg.replications).map(|r| cfg.replication_seed(r)).collect(),
        },
    })
}

/// Per-row summaries over the successful records of each row.
pub fn aggregate(cfg: &ExperimentConfig, records: &[ReplicationRecord]) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    for (i, name) in cfg.row_names().into_iter().enumerate() {
        let ok: Vec<&ReplicationResult> = records
            .iter()
            .filter(|r| r.estimator == name)
            .filter_map(|r| r.result.as_ref())
            .collect();
        let m = ok.len();
        let row = if m == 0 {
            ReportRow {
                estimator: name,
                median_mse: f64::NAN,
                boot_se: f64::NAN,
                mean_c: f64::NAN,
                mean_i: f64::NAN,
                cm: f64::NAN,
                successes: 0,
            }
        } else {
            let mses: Vec<f64> = ok.iter().map(|r| r.mse).collect();
            let boot_seed = derive_seed(cfg.master_seed, &[BOOTSTRAP_STREAM, i as u64]);
            let (median_mse, boot_se) = median_and_bootstrap_se(&mses, cfg.n_boot, boot_seed)?;
            ReportRow {
                estimator: name,
                median_mse,
                boot_se,
                mean_c: ok.iter().map(|r| r.c_count as f64).sum::<f64>() / m as f64,
                mean_i: ok.iter().map(|r| r.i_count as f64).sum::<f64>() / m as f64,
                cm: ok.iter().filter(|r| r.correct_model).count() as f64 / m as f64,
                successes: m,
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// `estimator,median_mse,boot_se,mean_c,mean_i,cm`, one line per row.
pub fn report_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("estimator,median_mse,boot_se,mean_c,mean_i,cm\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            csv_field(&r.estimator),
            r.median_mse,
            r.boot_se,
            r.mean_c,
            r.mean_i,
            r.cm
        );
    }
    s
}

/// One line per (replication, row) with the raw metrics or the failure reason.
pub fn replications_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("replication,seed,estimator,mse,c_count,i_count,correct_model,eta,k,error\n");
    for r in &report.per_replication {
        let (mse, c, i, cm) = match &r.result {
            Some(res) => (
                res.mse.to_string(),
                res.c_count.to_string(),
                res.i_count.to_string(),
                res.correct_model.to_string(),
            ),
            None => Default::default(),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.replication,
            r.seed,
            csv_field(&r.estimator),
            mse,
            c,
            i,
            cm,
            opt_num(r.eta),
            opt_num(r.k),
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    s
}

/// Human-readable table in the `MSE (Sd) & C & I & CM` layout.
pub fn report_text(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "aris-core {}", report.provenance.code_version);
    let _ = writeln!(s, "master seed {}", report.provenance.master_seed);
    s.push_str("\n[config]\n");
    s.push_str(&report.provenance.config);
    s.push('\n');
    let width = report.rows.iter().map(|r| r.estimator.len()).max().unwrap_or(9).max(9);
    let _ = writeln!(s, "{:<width$}  {:>18}  {:>6}  {:>6}  {:>5}  {:>5}", "estimator", "MSE (Sd)", "C", "I", "CM", "ok");
    for r in &report.rows {
        let mse = format!("{:.4} ({:.4})", r.median_mse, r.boot_se);
        let _ = writeln!(
            s,
            "{:<width$}  {:>18}  {:>6.2}  {:>6.2}  {:>5.2}  {:>5}",
            r.estimator, mse, r.mean_c, r.mean_i, r.cm, r.successes
        );
    }
    let failures: Vec<&ReplicationRecord> = report.failures().collect();
    if !failures.is_empty() {
        let _ = writeln!(s, "\n{} failed records", failures.len());
        for f in failures {
            let _ = writeln!(
                s,
                "  replication {} {}: {}",
                f.replication,
                f.estimator,
                f.error.as_deref().unwrap_or("")
            );
        }
    }
    s
}

/// Writes `report.csv`, `replications.csv` and `report.txt` into `dir`.
pub fn write_reports(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), report_csv(report))?;
    std::fs::write(dir.join("replications.csv"), replications_csv(report))?;
    std::fs::write(dir.join("report.txt"), report_text(report))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_and_round_trip() {
        let cfg = ExperimentConfig::parse("model_id = 3\nn = 100\nsigma = 3\n# comment\n\nmaster_seed = 9\n").unwrap();
        assert_eq!(cfg.model_id, 3);
        assert_eq!(cfg.master_seed, 9);
        assert_eq!(cfg.test_size, 10_000);
        assert_eq!(cfg.path_grid, cfg.eta_grid);
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_errors() {
        assert!(ExperimentConfig::parse("n = 10\nsigma = 1").is_err());
        assert!(ExperimentConfig::parse("model_id = 1\nn = 10\nsigma = 1\nbogus = 2").is_err());
        assert!(ExperimentConfig::parse("model_id = 1\nn = 10\nn = 11\nsigma = 1").is_err());
        assert!(ExperimentConfig::parse("model_id = 1\nn = 10\nsigma = 1\nestimators = ols, lasso").is_err());
        assert!(ExperimentConfig::parse("model_id = 1\nn = 10\nsigma = 1\nreplications = 0").is_err());
        assert!(ExperimentConfig::parse("model_id = 1\nn = 10\nsigma = 1\neta_grid = -0.5, 0").is_err());
        assert!(ExperimentConfig::parse("model_id = 1\nn = 10\nsigma = 1\nevidence_method = eta0-only\nestimators = aris-eb").is_err());
    }

    #[test]
    fn eta0_only_drops_default_eb() {
        let cfg = ExperimentConfig::parse("model_id = 0\nn = 50\nsigma = 3\nevidence_method = eta0-only").unwrap();
        assert!(!cfg.estimators.contains(&Estimator::ArisEb));
    }

    #[test]
    fn mc_rows_include_sweep() {
        let mut cfg = ExperimentConfig::new(3, 20, 3.0);
        cfg.evidence_method = EvidenceChoice::Mc;
        cfg.estimators = vec![Estimator::ArisEb, Estimator::Ols];
        assert_eq!(
            cfg.row_names(),
            vec!["aris-eb", "aris-eb-k3", "aris-eb-k10", "aris-eb-k100", "aris-eb-k1000", "ols"]
        );
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}
