//! Command-line front end for the proxqn solver.
//!
//! Three subcommands: `solve` runs the quasi-Newton solver and writes an
//! iteration trace, `oracle` computes a high-accuracy reference optimum
//! by proximal gradient, `verify` runs the self-check suites. Each maps
//! its outcome onto a distinct exit code so shell pipelines can branch
//! without parsing output:
//!
//! * 0: converged (solve), certified (oracle), no violations (verify)
//! * 1: input error (unreadable data, bad flag value, invalid config)
//! * 2: iteration cap hit before the tolerance (solve, oracle)
//! * 3: backtracking stalled or the objective left the finite range
//! * 4: a verify check failed; counterexamples go to stderr

pub mod trace;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use proxqn::inner::BudgetRule;
use proxqn::outer::{
    self, AcceptanceRule, InnerSolver, SolveError, SolveStatus, SolverConfig,
};
use proxqn::problem::{
    load_dense_csv, load_libsvm, CompositeProblem, Dataset, EvalMode, LabelPolicy, Loss,
    OracleError, ParseError,
};
use proxqn::reference;
use proxqn::rng::RNG_ALGORITHM;
use proxqn::theory::{self, AssertionRecord, SuiteOptions};

use trace::{TraceFormat, TraceMeta};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_ITERATION_CAP: i32 = 2;
pub const EXIT_BACKTRACK: i32 = 3;
pub const EXIT_VIOLATION: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "proxqn",
    version,
    about = "Proximal quasi-Newton solver for l1-regularized loss minimization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Minimize f(x) + lambda*||x||_1 and write an iteration trace.
    Solve(SolveArgs),
    /// Compute a reference optimum by proximal gradient descent.
    Oracle(OracleArgs),
    /// Run the self-check suites; exit 4 on any violation.
    Verify(VerifyArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossArg {
    /// Mean logistic loss; labels must be -1/+1 (0/1 and 1/2 codings are
    /// remapped when loading libsvm files).
    Logistic,
    /// Mean squared error, (1/2N)||Ax - b||^2.
    Lasso,
}

impl LossArg {
    fn to_loss(self) -> Loss {
        match self {
            LossArg::Logistic => Loss::Logistic,
            LossArg::Lasso => Loss::LeastSquares,
        }
    }

    fn echo(self) -> &'static str {
        match self {
            LossArg::Logistic => "logistic",
            LossArg::Lasso => "lasso",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum InnerArg {
    /// Randomized coordinate descent on the model.
    Rcd,
    /// Cyclic coordinate descent.
    Cyclic,
    /// Proximal gradient steps on the model.
    Ista,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcceptArg {
    /// Sufficient decrease against the model; gamma doubles on rejection.
    Prox,
    /// Same test with an explicit prox term 1/(2 mu); mu shrinks by beta.
    ProxMu,
    /// Armijo line search along the inner direction.
    Armijo,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalArg {
    /// One ordered pass per oracle call; bitwise deterministic.
    Sequential,
    /// Chunked sample-parallel oracle evaluation.
    Parallel,
}

/// Inner-step budget: "paper" scales one sweep by the memory turnover,
/// "linear:a,b" allots ceil(a*k + b) steps at outer iteration k.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetArg(pub BudgetRule);

impl FromStr for BudgetArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "paper" {
            return Ok(BudgetArg(BudgetRule::Scaled));
        }
        if let Some(rest) = s.strip_prefix("linear:") {
            let (a, b) = rest
                .split_once(',')
                .ok_or("linear budget needs two coefficients, e.g. linear:0.5,12")?;
            let a: f64 = a
                .trim()
                .parse()
                .map_err(|_| format!("bad budget slope {:?}", a))?;
            let b: f64 = b
                .trim()
                .parse()
                .map_err(|_| format!("bad budget offset {:?}", b))?;
            if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
                return Err("budget coefficients must be finite and nonnegative".into());
            }
            return Ok(BudgetArg(BudgetRule::Linear { a, b }));
        }
        Err(format!(
            "unknown budget rule {:?}; use \"paper\" or \"linear:a,b\"",
            s
        ))
    }
}

fn budget_echo(rule: BudgetRule) -> String {
    match rule {
        BudgetRule::Scaled => "paper".to_string(),
        BudgetRule::Linear { a, b } => format!("linear:{},{}", a, b),
    }
}

#[derive(Args, Clone, Debug)]
pub struct SolveArgs {
    /// Smooth loss term.
    #[arg(long, value_enum)]
    pub loss: LossArg,
    /// Dataset path: .csv reads dense rows with the target last, anything
    /// else parses as libsvm/svmlight.
    #[arg(long)]
    pub data: PathBuf,
    /// l1 penalty weight, >= 0.
    #[arg(long)]
    pub lambda: f64,
    /// Sufficient-decrease fraction, in (0, 1].
    #[arg(long, default_value_t = 0.01)]
    pub rho: f64,
    /// Backtracking factor, in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Initial prox parameter for --accept prox-mu.
    #[arg(long = "mu-bar", default_value_t = 1.0)]
    pub mu_bar: f64,
    /// Curvature pairs retained by the limited memory metric.
    #[arg(long, default_value_t = 10)]
    pub memory: usize,
    #[arg(long, value_enum, default_value_t = InnerArg::Rcd)]
    pub inner: InnerArg,
    #[arg(long, value_enum, default_value_t = AcceptArg::Prox)]
    pub accept: AcceptArg,
    /// Inner-step budget rule: "paper" or "linear:a,b".
    #[arg(long, default_value = "paper")]
    pub budget: BudgetArg,
    /// Stop when the minimum-norm subgradient infinity norm drops here.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long = "max-iter", default_value_t = 1000)]
    pub max_iter: u64,
    /// Rejections tolerated within one outer iteration before exit 3.
    #[arg(long = "max-backtracks", default_value_t = 40)]
    pub max_backtracks: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reference optimum: a float, or the path of an oracle output file.
    /// Enables the relative-gap stop at 1e-8 and the rel_gap column.
    #[arg(long)]
    pub fstar: Option<String>,
    /// Trace destination; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
    #[arg(long = "eval-mode", value_enum, default_value_t = EvalArg::Sequential)]
    pub eval_mode: EvalArg,
}

#[derive(Args, Clone, Debug)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub loss: LossArg,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub lambda: f64,
    /// Certification threshold on the subgradient infinity norm.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long = "max-steps", default_value_t = 50_000_000)]
    pub max_steps: u64,
    /// Output path for the JSON result; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteArg {
    /// Per-iteration invariants: monotone decrease, budget fidelity,
    /// metric positivity, residual certificates, step-norm bounds.
    Lemmas,
    /// Convergence-rate checks: envelopes, constants, schedule bounds.
    Rate,
    All,
}

#[derive(Args, Clone, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    pub suite: SuiteArg,
    /// Independent instances per check family.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Feature-count cap for generated instances.
    #[arg(long = "size-cap", default_value_t = 30)]
    pub size_cap: usize,
    /// Destination for the JSONL report; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Oracle output: consumed back through `solve --fstar <path>`.
#[derive(Serialize, Deserialize, Debug, Clone)]
pub struct OracleFile {
    pub fstar: f64,
    pub subgrad_inf: f64,
    pub steps: u64,
    pub certified: bool,
    pub lipschitz: f64,
    pub lambda: f64,
    pub dataset_hash: String,
    pub xstar: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("--lambda must be finite and nonnegative, got {0}")]
    Lambda(f64),
    #[error("--fstar {value:?} is neither a float nor a readable oracle file: {detail}")]
    FStar { value: String, detail: String },
}

/// Parses argv and dispatches. Returns the process exit code instead of
/// exiting so tests can drive the full command path in process.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests land here too; they are not errors.
            let code = if err.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = err.print();
            return code;
        }
    };
    match cli.command {
        Command::Solve(args) => cmd_solve(&args),
        Command::Oracle(args) => cmd_oracle(&args),
        Command::Verify(args) => cmd_verify(&args),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Write {
            path: path.display().to_string(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| CliError::Write {
                    path: "<stdout>".to_string(),
                    source,
                })
        }
    }
}

fn load_dataset(path: &Path, loss: Loss) -> Result<Dataset, ParseError> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    if is_csv {
        load_dense_csv(path, false)
    } else {
        let policy = match loss {
            Loss::Logistic => LabelPolicy::BinaryClassification,
            Loss::LeastSquares => LabelPolicy::Regression,
        };
        load_libsvm(path, policy, None)
    }
}

fn parse_fstar(raw: &Option<String>) -> Result<Option<f64>, CliError> {
    let Some(value) = raw else { return Ok(None) };
    if let Ok(v) = value.parse::<f64>() {
        return Ok(Some(v));
    }
    let text = fs::read_to_string(value).map_err(|e| CliError::FStar {
        value: value.clone(),
        detail: e.to_string(),
    })?;
    let file: OracleFile = serde_json::from_str(&text).map_err(|e| CliError::FStar {
        value: value.clone(),
        detail: e.to_string(),
    })?;
    Ok(Some(file.fstar))
}

fn status_echo(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Converged => "converged",
        SolveStatus::ConvergedRelGap => "converged-rel-gap",
        SolveStatus::IterationCap => "iteration-cap",
        SolveStatus::BacktrackFailure => "backtrack-failure",
        SolveStatus::NonFinite => "non-finite",
    }
}

fn solve_exit(status: SolveStatus) -> i32 {
    match status {
        SolveStatus::Converged | SolveStatus::ConvergedRelGap => EXIT_OK,
        SolveStatus::IterationCap => EXIT_ITERATION_CAP,
        // NonFinite is the same failure seen one step later: no finite
        // trial point was reachable from the accepted iterate.
        SolveStatus::BacktrackFailure | SolveStatus::NonFinite => EXIT_BACKTRACK,
    }
}

pub fn cmd_solve(args: &SolveArgs) -> i32 {
    match run_solve(args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("proxqn: {}", err);
            EXIT_INPUT
        }
    }
}

fn run_solve(args: &SolveArgs) -> Result<i32, CliError> {
    if !args.lambda.is_finite() || args.lambda < 0.0 {
        return Err(CliError::Lambda(args.lambda));
    }
    let loss = args.loss.to_loss();
    let dataset = load_dataset(&args.data, loss)?;
    let dataset_hash = dataset.content_hash();
    let n_samples = dataset.n_samples();
    let n_features = dataset.n_features();
    let eval_mode = match args.eval_mode {
        EvalArg::Sequential => EvalMode::Sequential,
        EvalArg::Parallel => EvalMode::Parallel,
    };
    let problem =
        CompositeProblem::new(dataset, loss, args.lambda)?.with_eval_mode(eval_mode);
    let fstar = parse_fstar(&args.fstar)?;

    let config = SolverConfig {
        rho: args.rho,
        beta: args.beta,
        mu_bar: args.mu_bar,
        memory: args.memory,
        acceptance: match args.accept {
            AcceptArg::Prox => AcceptanceRule::ProxGamma,
            AcceptArg::ProxMu => AcceptanceRule::ProxMu,
            AcceptArg::Armijo => AcceptanceRule::Armijo,
        },
        inner: match args.inner {
            InnerArg::Rcd => InnerSolver::Rcd,
            InnerArg::Cyclic => InnerSolver::Cyclic,
            InnerArg::Ista => InnerSolver::Ista,
        },
        budget: args.budget.0,
        tol: args.tol,
        max_iter: args.max_iter,
        max_backtracks: args.max_backtracks,
        seed: args.seed,
        fstar,
        ..SolverConfig::default()
    };
    let result = outer::solve(&problem, &config)?;

    let mut meta = TraceMeta::default();
    meta.push("trace", "proxqn-v1");
    meta.push("version", env!("CARGO_PKG_VERSION"));
    meta.push("command", "solve");
    meta.push("loss", args.loss.echo());
    meta.push("data", args.data.display().to_string());
    meta.push("dataset-hash", format!("{:016x}", dataset_hash));
    meta.push("samples", n_samples.to_string());
    meta.push("features", n_features.to_string());
    meta.push_float("lambda", args.lambda);
    meta.push_float("rho", config.rho);
    meta.push_float("beta", config.beta);
    meta.push_float("mu-bar", config.mu_bar);
    meta.push("memory", config.memory.to_string());
    meta.push(
        "inner",
        match args.inner {
            InnerArg::Rcd => "rcd",
            InnerArg::Cyclic => "cyclic",
            InnerArg::Ista => "ista",
        },
    );
    meta.push(
        "accept",
        match args.accept {
            AcceptArg::Prox => "prox",
            AcceptArg::ProxMu => "prox-mu",
            AcceptArg::Armijo => "armijo",
        },
    );
    meta.push("budget", budget_echo(config.budget));
    meta.push_float("tol", config.tol);
    meta.push("max-iter", config.max_iter.to_string());
    meta.push("max-backtracks", config.max_backtracks.to_string());
    meta.push("seed", config.seed.to_string());
    meta.push(
        "eval-mode",
        match args.eval_mode {
            EvalArg::Sequential => "sequential",
            EvalArg::Parallel => "parallel",
        },
    );
    meta.push("rng", RNG_ALGORITHM);
    if let Some(f) = fstar {
        meta.push_float("fstar", f);
    }
    meta.push("status", status_echo(result.status));

    let format = match args.format {
        FormatArg::Csv => TraceFormat::Csv,
        FormatArg::Jsonl => TraceFormat::Jsonl,
    };
    emit(&args.out, &trace::render(&meta, &result.trace, format))?;
    Ok(solve_exit(result.status))
}

pub fn cmd_oracle(args: &OracleArgs) -> i32 {
    match run_oracle(args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("proxqn: {}", err);
            EXIT_INPUT
        }
    }
}

fn run_oracle(args: &OracleArgs) -> Result<i32, CliError> {
    if !args.lambda.is_finite() || args.lambda < 0.0 {
        return Err(CliError::Lambda(args.lambda));
    }
    let loss = args.loss.to_loss();
    let dataset = load_dataset(&args.data, loss)?;
    let dataset_hash = format!("{:016x}", dataset.content_hash());
    let problem = CompositeProblem::new(dataset, loss, args.lambda)?;
    let run = reference::ista(&problem, args.tol, args.max_steps)?;
    if !run.certified {
        eprintln!(
            "proxqn: oracle not certified: subgradient norm {:.3e} above tol {:.3e} \
             after {} steps; best value written anyway",
            run.subgrad_inf, args.tol, run.steps
        );
    }
    let file = OracleFile {
        fstar: run.f_value,
        subgrad_inf: run.subgrad_inf,
        steps: run.steps,
        certified: run.certified,
        lipschitz: run.lipschitz,
        lambda: args.lambda,
        dataset_hash,
        xstar: run.x.clone(),
    };
    let mut text = serde_json::to_string(&file).expect("oracle serialization");
    text.push('\n');
    emit(&args.out, &text)?;
    Ok(if run.certified {
        EXIT_OK
    } else {
        EXIT_ITERATION_CAP
    })
}

pub fn cmd_verify(args: &VerifyArgs) -> i32 {
    let opts = SuiteOptions {
        seeds: args.seeds,
        size_cap: args.size_cap,
    };
    let collected: Result<Vec<AssertionRecord>, theory::TheoryError> = (|| {
        let mut records = Vec::new();
        if matches!(args.suite, SuiteArg::Lemmas | SuiteArg::All) {
            records.extend(theory::lemmas_suite(&opts)?);
        }
        if matches!(args.suite, SuiteArg::Rate | SuiteArg::All) {
            records.extend(theory::rate_suite(&opts)?);
        }
        Ok(records)
    })();
    let records = match collected {
        Ok(records) => records,
        Err(err) => {
            // A suite that cannot finish has not verified anything.
            eprintln!("proxqn: verify aborted: {}", err);
            return EXIT_VIOLATION;
        }
    };

    let mut body = String::with_capacity(records.len() * 96);
    for r in &records {
        body.push_str(&r.to_jsonl());
        body.push('\n');
    }
    if let Err(err) = emit(&args.out, &body) {
        eprintln!("proxqn: {}", err);
        return EXIT_INPUT;
    }

    let violations: Vec<&AssertionRecord> = records.iter().filter(|r| !r.pass).collect();
    eprintln!(
        "verify: {} checks, {} violations",
        records.len(),
        violations.len()
    );
    for v in &violations {
        eprintln!("counterexample: {}", v.to_jsonl());
    }
    if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    }
}
