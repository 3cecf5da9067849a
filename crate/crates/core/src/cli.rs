//! Command-line front end.
//!
//! An experiment is one JSON file (see [`ExperimentConfig`]); every command
//! is a pure function of that file and the seed. Exit codes: `0` ok, `2`
//! invalid input, `3` solver non-convergence, `4` enumeration budget
//! exceeded, `5` a verification check failed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::exponent::{
    chernoff_stein_baseline, grid_oracle_exponent, relaxed_exponent_2x2, solve_exponent, ExponentError,
    ExponentResult, SolverOptions,
};
use crate::harness::exact::{exact_errors_with, ExactOptions};
use crate::harness::fit::{fit_exponent, EtaSchedule};
use crate::harness::monte_carlo::monte_carlo_errors;
use crate::harness::verify::{default_verify_suite, CheckOutcome};
use crate::harness::{fmt_real, ErrorReport, HarnessError, Method};
use crate::prob::{Alphabet, Distribution, JointPmf, Pmf, ProbError};
use crate::protocol::{EncoderKind, PolicyKind, ProtocolConfig, ProtocolError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;
pub const EXIT_VERIFY_FAILED: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "seqht", version, about = "Zero-rate sequential distributed hypothesis testing toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal type-II exponent, baselines and minimizing joint.
    Exponent(CommonArgs),
    /// Type-I/type-II error probabilities for the configured protocol.
    Simulate(CommonArgs),
    /// Least-squares exponent over the configured N grid.
    Fit(CommonArgs),
    /// Exhaustive stopped-divergence and data-processing checks.
    Verify(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; defaults to the configured `output_path`, else stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Overrides the configured evaluation method.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Exact,
    Mc,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Exact => Method::Exact,
            MethodArg::Mc => Method::MonteCarlo,
        }
    }
}

fn default_encoder() -> EncoderKind {
    EncoderKind::OneBit
}
fn default_policy() -> PolicyKind {
    PolicyKind::FixedHorizon
}
fn default_epsilon() -> f64 {
    0.05
}
fn default_trials() -> usize {
    10_000
}
fn default_grid_step() -> f64 {
    1e-5
}
fn default_horizon() -> usize {
    8
}
fn default_cases() -> usize {
    20
}
fn default_method() -> Method {
    Method::Exact
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    pub k: usize,
    /// Request budget; ignored by `fit`, which derives it from the grid.
    pub n: usize,
    /// Typicality margin; the default schedule when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderKind,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    /// Per-symbol null distribution; defaults to the x-marginal of `p_xy`.
    #[serde(default)]
    pub p: Option<Vec<f64>>,
    /// Per-symbol alternative; defaults to the x-marginal of `q_xy`.
    #[serde(default)]
    pub q: Option<Vec<f64>>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_cases")]
    pub cases: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            p: None,
            q: None,
            horizon: default_horizon(),
            cases: default_cases(),
        }
    }
}

/// The experiment file. Joint pmfs are row-major `|X| x |Y|` nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub p_xy: Vec<Vec<f64>>,
    pub q_xy: Vec<Vec<f64>>,
    #[serde(default)]
    pub labels_x: Option<Vec<String>>,
    #[serde(default)]
    pub labels_y: Option<Vec<String>>,
    pub protocol: ProtocolSpec,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub cell_budget: Option<u64>,
    #[serde(default)]
    pub verify: VerifySpec,
}

/// A failed command: exit code, message, and any output produced before
/// the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
    pub partial_output: Option<String>,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INVALID,
            message: message.into(),
            partial_output: None,
        }
    }
}

impl From<ProbError> for CliError {
    fn from(e: ProbError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<ExponentError> for CliError {
    fn from(e: ExponentError) -> Self {
        match e {
            ExponentError::MaxIterationsExceeded(partial) => Self {
                code: EXIT_NOT_CONVERGED,
                message: format!(
                    "solver did not converge within {} iterations (marginal residual {:e})",
                    partial.iterations, partial.marginal_residual
                ),
                partial_output: None,
            },
            other => Self::invalid(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::TooLarge(msg) => Self {
                code: EXIT_BUDGET,
                message: format!("{msg}; rerun with --method mc or raise cell_budget"),
                partial_output: None,
            },
            HarnessError::Exponent(inner) => inner.into(),
            other => Self::invalid(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A configuration whose distributions and protocol parameters have been
/// validated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub raw: ExperimentConfig,
    pub p: JointPmf,
    pub q: JointPmf,
    pub protocol: ProtocolConfig,
    pub method: Method,
    pub seed: u64,
}

fn build_joint(rows: &[Vec<f64>], labels_x: &Option<Vec<String>>, labels_y: &Option<Vec<String>>) -> CliResult<JointPmf> {
    let joint = JointPmf::from_rows(rows)?;
    if labels_x.is_none() && labels_y.is_none() {
        return Ok(joint);
    }
    let ax = match labels_x {
        Some(l) => Alphabet::with_labels(l.clone())?,
        None => Alphabet::new(joint.nx())?,
    };
    let ay = match labels_y {
        Some(l) => Alphabet::with_labels(l.clone())?,
        None => Alphabet::new(joint.ny())?,
    };
    Ok(JointPmf::with_alphabets(ax, ay, rows.concat())?)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::invalid(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Validates everything shared by all commands.
    pub fn prepare(self, seed: Option<u64>, method: Option<Method>) -> CliResult<Prepared> {
        let p = build_joint(&self.p_xy, &self.labels_x, &self.labels_y)?;
        let q = build_joint(&self.q_xy, &self.labels_x, &self.labels_y)?;
        if !p.same_alphabets(&q) {
            return Err(CliError::invalid(format!(
                "p_xy is {}x{} but q_xy is {}x{}",
                p.nx(),
                p.ny(),
                q.nx(),
                q.ny()
            )));
        }
        let spec = &self.protocol;
        let protocol = ProtocolConfig::new(spec.k, spec.n, spec.eta, spec.encoder, spec.policy, spec.epsilon)?;
        Ok(Prepared {
            p,
            q,
            protocol,
            method: method.unwrap_or(self.method),
            seed: seed.unwrap_or(self.seed),
            raw: self,
        })
    }
}

impl Prepared {
    fn solver_options(&self) -> CliResult<SolverOptions> {
        let mut opts = SolverOptions::default();
        if let Some(t) = self.raw.tolerance {
            opts.tolerance = t;
        }
        if let Some(m) = self.raw.max_iterations {
            opts.max_iterations = m;
        }
        opts.validate()?;
        Ok(opts)
    }

    fn exact_options(&self) -> ExactOptions {
        let mut opts = ExactOptions::default();
        if let Some(b) = self.raw.cell_budget {
            opts.cell_budget = b;
        }
        opts
    }
}

fn exponent_output(p: &JointPmf, q: &JointPmf, res: &ExponentResult, grid_step: f64) -> CliResult<String> {
    let baseline_x = chernoff_stein_baseline(&p.marginal_x(), &q.marginal_x())?;
    let baseline_xy = chernoff_stein_baseline(p, q)?;
    let oracle = if p.shape() == (2, 2) {
        fmt_real(grid_oracle_exponent(p, q, grid_step)?)
    } else {
        String::new()
    };
    let mut s = String::from(
        "theta_star,chernoff_stein_x,chernoff_stein_xy,grid_oracle,iterations,marginal_residual,duality_gap_bound,converged\n",
    );
    writeln!(
        s,
        "{},{},{},{},{},{},{},{}",
        fmt_real(res.theta_star),
        fmt_real(baseline_x),
        fmt_real(baseline_xy),
        oracle,
        res.iterations,
        fmt_real(res.marginal_residual),
        fmt_real(res.duality_gap_bound),
        res.converged
    )
    .expect("writing to a String");
    s.push_str("# minimizer\n");
    for row in res.minimizer.rows() {
        let cells: Vec<String> = row.iter().map(|&v| fmt_real(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn cmd_exponent(cfg: &Prepared) -> CliResult<String> {
    let opts = cfg.solver_options()?;
    if !(cfg.raw.grid_step > 0.0 && cfg.raw.grid_step < 1.0) {
        return Err(CliError::invalid("grid_step must lie in (0, 1)"));
    }
    match solve_exponent(&cfg.p, &cfg.q, &opts) {
        Ok(res) => exponent_output(&cfg.p, &cfg.q, &res, cfg.raw.grid_step),
        Err(ExponentError::MaxIterationsExceeded(partial)) => {
            let out = exponent_output(&cfg.p, &cfg.q, &partial, cfg.raw.grid_step)?;
            let mut err = CliError::from(ExponentError::MaxIterationsExceeded(partial));
            err.partial_output = Some(out);
            Err(err)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_simulate(cfg: &Prepared) -> CliResult<String> {
    let report: ErrorReport = match cfg.method {
        Method::Exact => exact_errors_with(&cfg.protocol, &cfg.p, &cfg.q, &cfg.exact_options())?,
        Method::MonteCarlo => {
            if cfg.raw.trials == 0 {
                return Err(CliError::invalid("trials must be at least 1"));
            }
            monte_carlo_errors(&cfg.protocol, &cfg.p, &cfg.q, cfg.raw.trials, cfg.seed)?
        }
    };
    Ok(format!("{}\n{}\n", ErrorReport::CSV_HEADER, report.csv_row()))
}

pub fn cmd_fit(cfg: &Prepared) -> CliResult<String> {
    let mut grid = cfg.raw.n_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.len() < 4 {
        return Err(CliError::invalid(format!(
            "n_grid needs at least 4 distinct values, got {}",
            grid.len()
        )));
    }
    let k = cfg.protocol.k;
    if let Some(&bad) = grid.iter().find(|&&n| n == 0 || n % k != 0) {
        return Err(CliError::invalid(format!("n_grid value {bad} is not a positive multiple of k = {k}")));
    }
    if cfg.method != Method::Exact {
        return Err(CliError::invalid("fit uses exact evaluation only"));
    }
    let schedule = match cfg.raw.protocol.eta {
        Some(eta) => EtaSchedule::Fixed(eta),
        None => EtaSchedule::Default,
    };
    let fit = fit_exponent(&cfg.protocol, schedule, &cfg.p, &cfg.q, &grid, &cfg.exact_options())?;

    let theta = if cfg.q.is_strictly_positive() {
        Some(solve_exponent(&cfg.p, &cfg.q, &cfg.solver_options()?)?.theta_star)
    } else {
        None
    };
    let theta_eta = match schedule {
        EtaSchedule::Fixed(eta) if cfg.p.shape() == (2, 2) && cfg.q.is_strictly_positive() => {
            Some(relaxed_exponent_2x2(&cfg.p, &cfg.q, eta, cfg.raw.grid_step)?)
        }
        _ => None,
    };
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), fmt_real);
    let mut s = fit.csv();
    writeln!(
        s,
        "# {},theta_star={},theta_star_eta={},slope_minus_theta_star={}",
        fit.summary(),
        opt(theta),
        opt(theta_eta),
        opt(theta.map(|t| fit.slope - t)),
    )
    .expect("writing to a String");
    Ok(s)
}

/// Runs the default verification battery. Failing checks are reported with
/// exit code 5 and the full CSV as partial output.
pub fn cmd_verify(cfg: &Prepared) -> CliResult<String> {
    let spec = &cfg.raw.verify;
    let p = match &spec.p {
        Some(v) => Pmf::new(v.clone())?,
        None => cfg.p.marginal_x(),
    };
    let q = match &spec.q {
        Some(v) => Pmf::new(v.clone())?,
        None => cfg.q.marginal_x(),
    };
    let checks = default_verify_suite(&p, &q, spec.horizon, spec.cases, cfg.seed)?;
    let mut s = String::from(CheckOutcome::CSV_HEADER);
    s.push('\n');
    for c in &checks {
        s.push_str(&c.csv_row());
        s.push('\n');
    }
    let failed: Vec<&CheckOutcome> = checks.iter().filter(|c| !c.passed).collect();
    if failed.is_empty() {
        return Ok(s);
    }
    let mut message = format!("{} of {} checks failed (seed {}):", failed.len(), checks.len(), cfg.seed);
    for c in failed {
        write!(message, "\n  {}: lhs={} rhs={}", c.name, fmt_real(c.lhs), fmt_real(c.rhs)).expect("writing to a String");
    }
    Err(CliError {
        code: EXIT_VERIFY_FAILED,
        message,
        partial_output: Some(s),
    })
}

/// Loads, validates and runs one command, returning its output text and the
/// path it should be written to (if any).
pub fn execute(command: &Command) -> (CliResult<String>, Option<PathBuf>) {
    let args = match command {
        Command::Exponent(a) | Command::Simulate(a) | Command::Fit(a) | Command::Verify(a) => a,
    };
    if let Some(threads) = args.threads {
        if threads == 0 {
            return (Err(CliError::invalid("--threads must be at least 1")), None);
        }
        // Fails only if a global pool already exists, which is harmless here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let prepared = ExperimentConfig::load(&args.config)
        .and_then(|c| c.prepare(args.seed, args.method.map(Method::from)));
    let prepared = match prepared {
        Ok(p) => p,
        Err(e) => return (Err(e), args.out.clone()),
    };
    let out_path = args.out.clone().or_else(|| prepared.raw.output_path.clone());
    let result = match command {
        Command::Exponent(_) => cmd_exponent(&prepared),
        Command::Simulate(_) => cmd_simulate(&prepared),
        Command::Fit(_) => cmd_fit(&prepared),
        Command::Verify(_) => cmd_verify(&prepared),
    };
    (result, out_path)
}

fn emit(text: &str, path: Option<&Path>) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let (result, out_path) = execute(&cli.command);
    let (text, code) = match result {
        Ok(text) => (Some(text), EXIT_OK),
        Err(e) => {
            eprintln!("error: {}", e.message);
            (e.partial_output, e.code)
        }
    };
    if let Some(text) = text {
        if let Err(e) = emit(&text, out_path.as_deref()) {
            eprintln!("error: cannot write output: {e}");
            return EXIT_INVALID;
        }
    }
    code
}
