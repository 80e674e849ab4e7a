//! `aris`: fit, simulate and run experiments from the command line.
//!
//! Exit codes: 0 success, 2 invalid input (flags, CSV, config), 3 solver or
//! I/O failure, 4 failed replications without `--allow-failures`.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aris_core::aris::fit_joint_mode;
use aris_core::baselines::fit_ols;
use aris_core::evidence::{select_eta, EvidenceMethod, LaplaceDimension, DEFAULT_ETA_GRID, DEFAULT_MC_DRAWS};
use aris_core::experiment::{run_experiment, write_reports, ExperimentConfig};
use aris_core::model::{destandardize_beta, standardize, AriSFit, Dataset, FitOptions, PosteriorState};
use aris_core::simgen::{draw_dataset, draw_test_set, write_csv, DgpSpec, DEFAULT_TEST_SIZE};
use aris_core::ArisError;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "aris", version, about = "Adaptive ridge selector for sparse linear regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one dataset from a CSV file and print the model as JSON.
    Fit(FitArgs),
    /// Run a simulation experiment described by a config file.
    Experiment(ExperimentArgs),
    /// Write a simulated dataset as CSV.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EvidenceFlag {
    Laplace,
    Mc,
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-8)]
    conv_tol: f64,
    #[arg(long, default_value_t = 1e-8)]
    prune_tol: f64,
    /// Rate of the gamma prior on the precisions (machine epsilon by default).
    #[arg(long)]
    mu: Option<f64>,
}

impl SolverFlags {
    fn options(&self) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            conv_tol: self.conv_tol,
            prune_tol: self.prune_tol,
            mu: self.mu.unwrap_or(f64::EPSILON),
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// CSV file; the last column is the response unless --response is given.
    input: PathBuf,
    /// Shrinkage parameter η, `eb` for empirical Bayes over --grid, or `ols`.
    #[arg(long, default_value = "0", allow_hyphen_values = true)]
    eta: String,
    /// Response column, by header name or 1-based index.
    #[arg(long)]
    response: Option<String>,
    #[arg(long, value_enum, default_value = "laplace")]
    evidence: EvidenceFlag,
    /// Use the coefficient count alone as the Laplace dimension.
    #[arg(long)]
    literal_dimension: bool,
    /// Comma-separated η grid for `--eta eb`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    grid: Option<Vec<f64>>,
    /// Box half-width for Monte-Carlo evidence.
    #[arg(long, default_value_t = 1000.0)]
    k: f64,
    #[arg(long, default_value_t = DEFAULT_MC_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct ExperimentArgs {
    config: PathBuf,
    /// Directory receiving report.csv, replications.csv and report.txt.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "ARIS_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Exclude failed replications from the aggregates instead of aborting.
    #[arg(long)]
    allow_failures: bool,
    /// Suppress the per-replication log on stderr.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=3))]
    model: u8,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    #[arg(long)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training CSV path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a matched test set here.
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TEST_SIZE)]
    test_size: usize,
}

enum Failure {
    Input(String),
    Solver(String),
    Replication(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Replication(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Solver(m) | Failure::Replication(m) => m,
        }
    }
}

fn solver(e: ArisError) -> Failure {
    Failure::Solver(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Experiment(a) => cmd_experiment(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

struct Table {
    names: Vec<String>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    response: String,
}

fn read_table(path: &Path, response: Option<&str>) -> Result<Table, Failure> {
    let file = File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        rows.push(rec.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?);
    }
    if rows.is_empty() {
        return Err(Failure::Input(format!("{}: no rows", path.display())));
    }
    let width = rows[0].len();
    let has_header = rows[0].iter().any(|f| f.parse::<f64>().is_err());
    let names: Vec<String> = if has_header {
        rows.remove(0).iter().map(str::to_string).collect()
    } else {
        (1..=width).map(|j| format!("x{j}")).collect()
    };
    if width < 2 {
        return Err(Failure::Input("need at least one predictor column and a response".into()));
    }
    if rows.is_empty() {
        return Err(Failure::Input(format!("{}: no data rows", path.display())));
    }
    let y_col = match response {
        None => width - 1,
        Some(r) => match names.iter().position(|n| n == r) {
            Some(j) => j,
            None => match r.parse::<usize>() {
                Ok(j) if (1..=width).contains(&j) => j - 1,
                _ => return Err(Failure::Input(format!("response column `{r}` not found"))),
            },
        },
    };
    let first_line = if has_header { 2 } else { 1 };
    let mut values = Vec::with_capacity(rows.len() * width);
    for (i, row) in rows.iter().enumerate() {
        for (j, field) in row.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Failure::Input(format!(
                    "row {}, column {} ({}): cannot parse `{field}` as a number",
                    i + first_line,
                    j + 1,
                    names[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Failure::Input(format!(
                    "row {}, column {} ({}): non-finite value",
                    i + first_line,
                    j + 1,
                    names[j]
                )));
            }
            values.push(v);
        }
    }
    let n = rows.len();
    let all = DMatrix::from_row_slice(n, width, &values);
    let cols: Vec<usize> = (0..width).filter(|&j| j != y_col).collect();
    let x = DMatrix::from_fn(n, cols.len(), |i, a| all[(i, cols[a])]);
    let y = all.column(y_col).into_owned();
    Ok(Table {
        names: cols.iter().map(|&j| names[j].clone()).collect(),
        x,
        y,
        response: names[y_col].clone(),
    })
}

#[derive(Serialize)]
struct EvidenceRow {
    eta: f64,
    log_evidence: Option<f64>,
    mc_se: Option<f64>,
    active: Option<Vec<String>>,
    error: Option<String>,
}

#[derive(Serialize)]
struct FitOutput {
    method: String,
    eta: Option<f64>,
    response: String,
    columns: Vec<String>,
    coefficients: Vec<f64>,
    intercept: f64,
    active: Vec<String>,
    sigma2: f64,
    iterations: usize,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    evidence: Option<Vec<EvidenceRow>>,
}

fn active_names(names: &[String], active: &[bool]) -> Vec<String> {
    names.iter().zip(active).filter(|(_, a)| **a).map(|(n, _)| n.clone()).collect()
}

fn ols_fit(data: &Dataset) -> aris_core::Result<AriSFit> {
    let beta = fit_ols(data)?;
    let p = data.p();
    let v_inv = DVector::zeros(p);
    let sigma2 = aris_core::aris::update_sigma2(data, &beta, &v_inv)?;
    Ok(AriSFit {
        state: PosteriorState {
            beta,
            sigma2,
            v_inv,
            active: vec![true; p],
        },
        iterations: 0,
        converged: true,
        log_joint_trace: Vec::new(),
        active_trace: Vec::new(),
        standardization: aris_core::Standardization::identity(p),
    })
}

fn cmd_fit(a: &FitArgs) -> Result<(), Failure> {
    let table = read_table(&a.input, a.response.as_deref())?;
    let opts = a.solver.options();
    opts.validate().map_err(|e| Failure::Input(e.to_string()))?;
    let (data, st) = standardize(&table.x, &table.y).map_err(|e| Failure::Input(e.to_string()))?;

    let (method, eta, fit, evidence) = match a.eta.as_str() {
        "ols" => ("ols", None, ols_fit(&data).map_err(solver)?, None),
        "eb" => {
            let method = match a.evidence {
                EvidenceFlag::Laplace => EvidenceMethod::Laplace(if a.literal_dimension {
                    LaplaceDimension::Literal
                } else {
                    LaplaceDimension::Full
                }),
                EvidenceFlag::Mc => EvidenceMethod::HypercubeMc {
                    k: a.k,
                    draws: a.draws,
                    seed: a.seed,
                },
            };
            let grid = a.grid.clone().unwrap_or_else(|| DEFAULT_ETA_GRID.to_vec());
            let sel = select_eta(&data, &grid, &method, &opts).map_err(solver)?;
            let rows = sel
                .points
                .iter()
                .map(|pt| EvidenceRow {
                    eta: pt.eta,
                    log_evidence: pt.estimate.as_ref().map(|e| e.log_value),
                    mc_se: pt.estimate.as_ref().and_then(|e| e.mc_se),
                    active: pt.fit.as_ref().map(|f| active_names(&table.names, &f.state.active)),
                    error: pt.error.clone(),
                })
                .collect();
            ("aris-eb", Some(sel.best_eta), sel.refit, Some(rows))
        }
        text => {
            let eta: f64 = text
                .parse()
                .map_err(|_| Failure::Input(format!("--eta expects a number, `eb` or `ols`, got `{text}`")))?;
            let h = opts.hyper(eta);
            ("aris", Some(eta), fit_joint_mode(&data, &h, &opts).map_err(solver)?, None)
        }
    };

    let coefficients = destandardize_beta(&fit.state.beta, &st).map_err(solver)?;
    let out = FitOutput {
        method: method.to_string(),
        eta,
        response: table.response.clone(),
        columns: table.names.clone(),
        coefficients: coefficients.iter().copied().collect(),
        intercept: st.y_mean,
        active: active_names(&table.names, &fit.state.active),
        sigma2: fit.state.sigma2,
        iterations: fit.iterations,
        converged: fit.converged,
        evidence,
    };
    let text = serde_json::to_string_pretty(&out).map_err(|e| Failure::Solver(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn cmd_experiment(a: &ExperimentArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&a.config)
        .map_err(|e| Failure::Input(format!("{}: {e}", a.config.display())))?;
    let cfg = ExperimentConfig::parse(&text).map_err(|e| Failure::Input(e.to_string()))?;
    let quiet = a.quiet;
    let log = |r: usize, recs: &[aris_core::experiment::ReplicationRecord]| {
        if quiet {
            return;
        }
        let failed = recs.iter().filter(|x| x.error.is_some()).count();
        eprintln!("replication {r}: {} rows, {failed} failed", recs.len());
    };
    let report = match run_experiment(&cfg, a.jobs, a.allow_failures, log) {
        Ok(r) => r,
        Err(e @ ArisError::ReplicationFailed { .. }) => return Err(Failure::Replication(e.to_string())),
        Err(e @ ArisError::Config(_)) => return Err(Failure::Input(e.to_string())),
        Err(e) => return Err(solver(e)),
    };
    write_reports(&report, &a.out).map_err(solver)?;
    if !quiet {
        eprint!("{}", aris_core::experiment::report_text(&report));
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let spec = DgpSpec {
        model_id: a.model,
        n: a.n as usize,
        sigma: a.sigma,
        seed: a.seed,
    };
    spec.validate().map_err(|e| Failure::Input(e.to_string()))?;
    if a.test_size == 0 {
        return Err(Failure::Input("--test-size must be >= 1".into()));
    }
    let (train, truth) = draw_dataset(&spec).map_err(solver)?;
    write_dataset(&train, a.out.as_deref())?;
    if let Some(path) = &a.test_out {
        let test = draw_test_set(&spec, &truth, a.test_size).map_err(solver)?;
        write_dataset(&test, Some(path))?;
    }
    Ok(())
}

fn write_dataset(data: &Dataset, path: Option<&Path>) -> Result<(), Failure> {
    let io_err = |e: io::Error| Failure::Solver(e.to_string());
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).map_err(io_err)?);
            write_csv(data, &mut w).map_err(solver)?;
            w.flush().map_err(io_err)
        }
        None => {
            let stdout = io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            write_csv(data, &mut w).map_err(solver)?;
            w.flush().map_err(io_err)
        }
    }
}
