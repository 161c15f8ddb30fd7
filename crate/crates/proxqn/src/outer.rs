//! Outer loop: build the quadratic model at the current point, solve it
//! approximately on the active set, accept or reshape, update the metric.
//!
//! Acceptance comes in three flavors. The prox rules test sufficient model
//! decrease F(p) - F(x) <= rho (Q(p) - F(x)) and on rejection either double
//! the gamma term of the metric (practical) or shrink the prox parameter mu
//! (tighter, used by the complexity analysis). Armijo instead backtracks a
//! step size along the inner direction.
//!
//! Invariants the trace must satisfy: F is nonincreasing, the accepted model
//! decrease is nonpositive, and a rerun with the same data, config, and seed
//! reproduces every field except wall-clock times.

use std::time::Instant;

use crate::inner::{self, BudgetRule, InnerReport};
use crate::lbfgs::LbfgsState;
use crate::linalg::{dot, norm1, norm_inf};
use crate::model::{min_norm_subgradient, QuadModel};
use crate::problem::{CompositeProblem, OracleError};
use crate::rng::SplitMix64;

/// Acceptance rule for trial points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AcceptanceRule {
    /// Sufficient model decrease; rejection doubles the metric's gamma term.
    #[default]
    ProxGamma,
    /// Sufficient model decrease with a 1/(2 mu) prox term in the model;
    /// rejection shrinks mu by beta. mu restarts at mu_bar every iteration.
    ProxMu,
    /// Backtracking line search on the step size along the inner direction.
    Armijo,
}

/// Which subproblem solver runs on the active set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InnerSolver {
    #[default]
    Rcd,
    Cyclic,
    Ista,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Sufficient-decrease fraction, in (0, 1].
    pub rho: f64,
    /// Backtracking factor, in (0, 1). Shrinks mu (ProxMu) or alpha (Armijo).
    pub beta: f64,
    /// Initial prox parameter for ProxMu.
    pub mu_bar: f64,
    /// Curvature pairs retained, >= 1.
    pub memory: usize,
    pub acceptance: AcceptanceRule,
    pub inner: InnerSolver,
    pub budget: BudgetRule,
    /// Stop when the minimum-norm subgradient infinity norm drops here.
    pub tol: f64,
    pub max_iter: u64,
    /// Rejections tolerated within one outer iteration before giving up.
    pub max_backtracks: u32,
    /// Slope fraction for the Armijo rule.
    pub armijo_sigma: f64,
    pub seed: u64,
    /// Reference optimum; enables the relative-gap stop at 1e-8.
    pub fstar: Option<f64>,
    /// Freeze the metric to fixed_gamma * I and store no curvature pairs,
    /// reducing the method to proximal gradient with step 1/fixed_gamma.
    pub fixed_gamma: Option<f64>,
    /// Lower eigenvalue floor enforced after each refresh. Costs a dense
    /// eigensolve per accepted step; small problems only.
    pub sigma_floor: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            beta: 0.5,
            mu_bar: 1.0,
            memory: 10,
            acceptance: AcceptanceRule::default(),
            inner: InnerSolver::default(),
            budget: BudgetRule::Scaled,
            tol: 1e-6,
            max_iter: 1000,
            max_backtracks: 40,
            armijo_sigma: 1e-3,
            seed: 0,
            fstar: None,
            fixed_gamma: None,
            sigma_floor: None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("rho must lie in (0, 1], got {0}")]
    Rho(f64),
    #[error("beta must lie in (0, 1), got {0}")]
    Beta(f64),
    #[error("mu_bar must be positive, got {0}")]
    MuBar(f64),
    #[error("memory must be at least 1")]
    Memory,
    #[error("tol must be nonnegative and finite, got {0}")]
    Tol(f64),
    #[error("armijo_sigma must lie in (0, 1), got {0}")]
    ArmijoSigma(f64),
    #[error("fixed_gamma must be positive and finite, got {0}")]
    FixedGamma(f64),
    #[error("sigma_floor must be positive and finite, got {0}")]
    SigmaFloor(f64),
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(ConfigError::Rho(self.rho));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(ConfigError::Beta(self.beta));
        }
        if !(self.mu_bar > 0.0 && self.mu_bar.is_finite()) {
            return Err(ConfigError::MuBar(self.mu_bar));
        }
        if self.memory == 0 {
            return Err(ConfigError::Memory);
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(ConfigError::Tol(self.tol));
        }
        if !(self.armijo_sigma > 0.0 && self.armijo_sigma < 1.0) {
            return Err(ConfigError::ArmijoSigma(self.armijo_sigma));
        }
        if let Some(g) = self.fixed_gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(ConfigError::FixedGamma(g));
            }
        }
        if let Some(s) = self.sigma_floor {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ConfigError::SigmaFloor(s));
            }
        }
        Ok(())
    }
}

/// Why the solve stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// Minimum-norm subgradient infinity norm reached tol.
    Converged,
    /// Relative gap to the supplied reference optimum reached 1e-8.
    ConvergedRelGap,
    IterationCap,
    /// No acceptable trial point within max_backtracks rejections (or the
    /// gamma multiplier overflowed). The result carries the best iterate.
    BacktrackFailure,
    /// An oracle evaluation went non-finite; the result carries the last
    /// finite iterate.
    NonFinite,
}

impl SolveStatus {
    pub fn converged(self) -> bool {
        matches!(self, SolveStatus::Converged | SolveStatus::ConvergedRelGap)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// One trace row. Row 0 describes the starting point; row k the k-th
/// accepted iterate.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub k: u64,
    /// Composite objective F at the iterate.
    pub f_value: f64,
    /// (F - F*) / F* against the configured reference; NaN when none is set.
    pub rel_gap: f64,
    pub subgrad_inf: f64,
    /// Effective gamma of the accepted model, or mu under ProxMu.
    pub gamma_or_mu: f64,
    pub backtracks: u32,
    pub inner_steps: u64,
    pub ws_size: usize,
    pub nnz: usize,
    pub elapsed_seconds: f64,
    /// Q(d) - F(x) of the accepted inner solution; nonpositive.
    pub model_decrease: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x: Vec<f64>,
    /// Composite objective at x.
    pub f_value: f64,
    pub status: SolveStatus,
    pub trace: Vec<IterationRecord>,
}

/// Everything the acceptance loop hands back for one accepted step. The
/// model itself cannot travel with it (it borrows the metric state), so the
/// caller rebuilds it from `mu` if needed; the state is untouched between
/// the accepted attempt and the return.
#[derive(Debug)]
pub struct AcceptedStep {
    pub x_next: Vec<f64>,
    /// Smooth value f at x_next.
    pub f_next: f64,
    pub grad_next: Vec<f64>,
    /// Composite F at x_next.
    pub big_f_next: f64,
    pub report: InnerReport,
    pub backtracks: u32,
    /// Prox parameter of the accepted model; infinity under gamma doubling.
    pub mu: f64,
    /// Step size along the inner direction; 1 except under Armijo.
    pub alpha: f64,
}

/// Outcome of one outer iteration's acceptance phase.
#[derive(Debug)]
pub enum StepOutcome {
    Accepted(AcceptedStep),
    /// max_backtracks rejections, or gamma overflow, or a stalled direction.
    Exhausted,
    /// Trial evaluation produced a non-finite value.
    NonFinite,
}

/// Observation handed to the callback of [`solve_observed`] after each
/// accepted step, before the curvature pair is pushed. `model` is the
/// accepted model: its base point, gradient, and metric are the ones the
/// sufficient-decrease test passed with.
pub struct StepObservation<'a> {
    /// Index of the record this step produces (1-based).
    pub k: u64,
    pub model: &'a QuadModel<'a>,
    pub report: &'a InnerReport,
    pub x_next: &'a [f64],
    /// Composite F at x_next.
    pub big_f_next: f64,
    pub alpha: f64,
    pub backtracks: u32,
    /// Budget the inner solver was allotted this iteration.
    pub budget: u64,
}

/// Union of the two index sets that can move: coordinates whose minimum-norm
/// subgradient is nonzero and coordinates currently away from zero.
pub fn select_active_set(x: &[f64], grad: &[f64], lambda: f64) -> Vec<usize> {
    let xi = min_norm_subgradient(x, grad, lambda);
    (0..x.len())
        .filter(|&i| x[i] != 0.0 || xi[i] != 0.0)
        .collect()
}

fn relative_gap(f_value: f64, fstar: f64) -> f64 {
    (f_value - fstar) / fstar
}

fn gap_or_nan(f_value: f64, fstar: Option<f64>) -> f64 {
    fstar.map_or(f64::NAN, |fs| relative_gap(f_value, fs))
}

/// Stopping test, in priority order: subgradient tolerance, then relative
/// gap to a known optimum, then the iteration cap.
pub fn check_termination(
    k: u64,
    subgrad_inf: f64,
    f_value: f64,
    config: &SolverConfig,
) -> Option<SolveStatus> {
    if subgrad_inf <= config.tol {
        return Some(SolveStatus::Converged);
    }
    if let Some(fstar) = config.fstar {
        if relative_gap(f_value, fstar) <= 1e-8 {
            return Some(SolveStatus::ConvergedRelGap);
        }
    }
    if k >= config.max_iter {
        return Some(SolveStatus::IterationCap);
    }
    None
}

/// Float-tie slack for the acceptance comparisons. Tiny relative to F and
/// capped absolutely, so audits at 1e-12 still hold.
fn acceptance_slack(big_f: f64) -> f64 {
    (1e-13 * (1.0 + big_f.abs())).min(1e-12)
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|c| c.is_finite())
}

fn run_inner(
    model: &QuadModel,
    working_set: &[usize],
    budget: u64,
    solver: InnerSolver,
    rng: &mut SplitMix64,
) -> InnerReport {
    match solver {
        InnerSolver::Rcd => inner::rcd(model, working_set, budget, rng),
        // The budget counts coordinate touches; convert to whole sweeps or
        // whole gradient steps, rounding up so a positive budget does work.
        InnerSolver::Cyclic => {
            let passes = budget.div_ceil(working_set.len().max(1) as u64);
            inner::cyclic_cd(model, working_set, passes)
        }
        InnerSolver::Ista => {
            let steps = budget.div_ceil(model.n().max(1) as u64);
            inner::ista_inner(model, steps)
        }
    }
}

/// Prox-style acceptance: solve the subproblem, test sufficient model
/// decrease, and on rejection reshape the model (double gamma, or shrink mu)
/// and re-solve from scratch with the same budget. The metric state is
/// mutated only by gamma doubling; a successful return leaves it exactly as
/// the accepted model saw it.
#[allow(clippy::too_many_arguments)]
pub fn accept_prox_update(
    problem: &CompositeProblem,
    state: &mut LbfgsState,
    x: &[f64],
    f_smooth: f64,
    grad: &[f64],
    working_set: &[usize],
    budget: u64,
    config: &SolverConfig,
    rng: &mut SplitMix64,
) -> Result<StepOutcome, OracleError> {
    let lambda = problem.lambda();
    let big_f = f_smooth + lambda * norm1(x);
    let slack = acceptance_slack(big_f);
    let mut backtracks = 0u32;
    loop {
        let mu = match config.acceptance {
            AcceptanceRule::ProxMu => {
                config.beta.powi(backtracks as i32) * config.mu_bar
            }
            _ => f64::INFINITY,
        };
        let model = QuadModel::new(x, grad, f_smooth, lambda, state, mu);
        let report = run_inner(&model, working_set, budget, config.inner, rng);
        let mut x_next = x.to_vec();
        for (idx, di) in x_next.iter_mut().zip(report.direction.iter()) {
            *idx += di;
        }
        let (f_next, grad_next) = problem.smooth_value_grad(&x_next)?;
        let big_f_next = f_next + lambda * norm1(&x_next);
        if !big_f_next.is_finite() || !all_finite(&grad_next) {
            return Ok(StepOutcome::NonFinite);
        }
        let decrease = report.q_end - big_f;
        // The monotone guard only matters in float ties; with exact
        // arithmetic the decrease test implies it.
        if big_f_next - big_f <= config.rho * decrease + slack && big_f_next <= big_f {
            return Ok(StepOutcome::Accepted(AcceptedStep {
                x_next,
                f_next,
                grad_next,
                big_f_next,
                report,
                backtracks,
                mu,
                alpha: 1.0,
            }));
        }
        backtracks += 1;
        if backtracks > config.max_backtracks {
            return Ok(StepOutcome::Exhausted);
        }
        if config.acceptance == AcceptanceRule::ProxGamma
            && state.double_gamma().is_err()
        {
            // Gamma multiplier overflow; no sane model remains.
            return Ok(StepOutcome::Exhausted);
        }
    }
}

/// Armijo backtracking along d: the largest alpha = beta^i with
/// F(x + alpha d) <= F(x) + alpha sigma_ls Delta, where Delta is the
/// directional model decrease grad.d + lambda(|x + d|_1 - |x|_1). Requires
/// Delta < 0. Returns the step size and the rejection count, or None when
/// max_backtracks rejections pass without success.
pub fn accept_armijo(
    problem: &CompositeProblem,
    x: &[f64],
    d: &[f64],
    delta: f64,
    beta: f64,
    sigma_ls: f64,
    max_backtracks: u32,
) -> Result<Option<(f64, u32)>, OracleError> {
    assert!(delta < 0.0, "line search needs a descent direction");
    let lambda = problem.lambda();
    let big_f = problem.smooth_value(x)? + lambda * norm1(x);
    let slack = acceptance_slack(big_f);
    let mut alpha = 1.0;
    let mut x_try = vec![0.0; x.len()];
    for backtracks in 0..=max_backtracks {
        for ((t, xi), di) in x_try.iter_mut().zip(x.iter()).zip(d.iter()) {
            *t = xi + alpha * di;
        }
        let f_try = problem.smooth_value(&x_try)? + lambda * norm1(&x_try);
        if !f_try.is_finite() {
            // Shorter steps may re-enter the finite region; treat like a
            // rejection.
            alpha *= beta;
            continue;
        }
        if f_try - big_f <= alpha * sigma_ls * delta + slack && f_try <= big_f {
            return Ok(Some((alpha, backtracks)));
        }
        alpha *= beta;
    }
    Ok(None)
}

/// Run the solver from the origin. See [`solve_observed`] for the variant
/// with a per-step callback.
pub fn solve(
    problem: &CompositeProblem,
    config: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    solve_observed(problem, config, &mut |_| {})
}

/// Run the solver, invoking `observer` after every accepted step with the
/// accepted model, the inner report, and the new point. The callback fires
/// before the curvature pair is pushed, so `observation.model.state()` is
/// the metric the step was accepted under.
pub fn solve_observed(
    problem: &CompositeProblem,
    config: &SolverConfig,
    observer: &mut dyn FnMut(&StepObservation),
) -> Result<SolveResult, SolveError> {
    config.validate()?;
    let n = problem.n_features();
    let lambda = problem.lambda();
    let start = Instant::now();
    let mut rng = SplitMix64::new(config.seed);

    let mut state = match config.fixed_gamma {
        Some(g) => LbfgsState::with_base_gamma(n, 0, g),
        None => LbfgsState::new(n, config.memory),
    };

    let mut x = vec![0.0; n];
    let (mut f_smooth, mut grad) = problem.smooth_value_grad(&x)?;
    let mut big_f = f_smooth + lambda * norm1(&x);
    let mut status = SolveStatus::NonFinite;
    let mut trace: Vec<IterationRecord> = Vec::new();

    if big_f.is_finite() && all_finite(&grad) {
        let mut subgrad_inf = norm_inf(&min_norm_subgradient(&x, &grad, lambda));
        trace.push(IterationRecord {
            k: 0,
            f_value: big_f,
            rel_gap: gap_or_nan(big_f, config.fstar),
            subgrad_inf,
            gamma_or_mu: match config.acceptance {
                AcceptanceRule::ProxMu => config.mu_bar,
                _ => state.gamma_eff(),
            },
            backtracks: 0,
            inner_steps: 0,
            ws_size: select_active_set(&x, &grad, lambda).len(),
            nnz: x.iter().filter(|v| **v != 0.0).count(),
            elapsed_seconds: start.elapsed().as_secs_f64(),
            model_decrease: 0.0,
        });

        let mut k = 0u64;
        status = loop {
            if let Some(s) = check_termination(k, subgrad_inf, big_f, config) {
                break s;
            }
            let working_set = select_active_set(&x, &grad, lambda);
            let budget =
                inner::compute_budget(k, config.memory, working_set.len(), config.budget);

            let outcome = match config.acceptance {
                AcceptanceRule::ProxGamma | AcceptanceRule::ProxMu => accept_prox_update(
                    problem,
                    &mut state,
                    &x,
                    f_smooth,
                    grad.as_slice(),
                    &working_set,
                    budget,
                    config,
                    &mut rng,
                )?,
                AcceptanceRule::Armijo => armijo_step(
                    problem,
                    &state,
                    &x,
                    f_smooth,
                    grad.as_slice(),
                    &working_set,
                    budget,
                    config,
                    &mut rng,
                )?,
            };
            let step = match outcome {
                StepOutcome::Accepted(step) => step,
                StepOutcome::Exhausted => break SolveStatus::BacktrackFailure,
                StepOutcome::NonFinite => break SolveStatus::NonFinite,
            };

            // The state was last mutated before the accepted attempt, so this
            // reconstruction is the accepted model bit for bit.
            let model = QuadModel::new(&x, &grad, f_smooth, lambda, &state, step.mu);
            observer(&StepObservation {
                k: k + 1,
                model: &model,
                report: &step.report,
                x_next: &step.x_next,
                big_f_next: step.big_f_next,
                alpha: step.alpha,
                backtracks: step.backtracks,
                budget,
            });
            let gamma_or_mu = match config.acceptance {
                AcceptanceRule::ProxMu => step.mu,
                _ => state.gamma_eff(),
            };
            let model_decrease = model.model_decrease(&step.report.direction);

            let s_pair: Vec<f64> = step
                .x_next
                .iter()
                .zip(x.iter())
                .map(|(a, b)| a - b)
                .collect();
            let t_pair: Vec<f64> = step
                .grad_next
                .iter()
                .zip(grad.iter())
                .map(|(a, b)| a - b)
                .collect();
            if state.push_pair(&s_pair, &t_pair) {
                state.refresh();
                if let Some(floor) = config.sigma_floor {
                    if let Ok(dense) = state.dense_materialize() {
                        let (lo, _) = crate::linalg::symmetric_eigen_range(&dense, n);
                        state.enforce_floor(floor, lo);
                    }
                }
            }

            x = step.x_next;
            f_smooth = step.f_next;
            grad = step.grad_next;
            big_f = step.big_f_next;
            subgrad_inf = norm_inf(&min_norm_subgradient(&x, &grad, lambda));
            k += 1;
            trace.push(IterationRecord {
                k,
                f_value: big_f,
                rel_gap: gap_or_nan(big_f, config.fstar),
                subgrad_inf,
                gamma_or_mu,
                backtracks: step.backtracks,
                inner_steps: step.report.steps_taken,
                ws_size: working_set.len(),
                nnz: x.iter().filter(|v| **v != 0.0).count(),
                elapsed_seconds: start.elapsed().as_secs_f64(),
                model_decrease,
            });
        };
    }

    Ok(SolveResult {
        f_value: big_f,
        x,
        status,
        trace,
    })
}

/// One Armijo-accepted step: a single inner solve fixes the direction, then
/// the line search picks the step size.
#[allow(clippy::too_many_arguments)]
fn armijo_step(
    problem: &CompositeProblem,
    state: &LbfgsState,
    x: &[f64],
    f_smooth: f64,
    grad: &[f64],
    working_set: &[usize],
    budget: u64,
    config: &SolverConfig,
    rng: &mut SplitMix64,
) -> Result<StepOutcome, OracleError> {
    let lambda = problem.lambda();
    let model = QuadModel::new(x, grad, f_smooth, lambda, state, f64::INFINITY);
    let report = run_inner(&model, working_set, budget, config.inner, rng);
    let d = &report.direction;
    let x_plus_d: Vec<f64> = x.iter().zip(d.iter()).map(|(a, b)| a + b).collect();
    let delta = dot(grad, d) + lambda * (norm1(&x_plus_d) - norm1(x));
    if delta >= 0.0 {
        // Inner monotonicity makes this possible only for a zero (or
        // float-tied) direction; no step size can help.
        return Ok(StepOutcome::Exhausted);
    }
    let Some((alpha, backtracks)) = accept_armijo(
        problem,
        x,
        d,
        delta,
        config.beta,
        config.armijo_sigma,
        config.max_backtracks,
    )?
    else {
        return Ok(StepOutcome::Exhausted);
    };
    let x_next: Vec<f64> = x
        .iter()
        .zip(d.iter())
        .map(|(xi, di)| xi + alpha * di)
        .collect();
    let (f_next, grad_next) = problem.smooth_value_grad(&x_next)?;
    let big_f_next = f_next + lambda * norm1(&x_next);
    if !big_f_next.is_finite() || !all_finite(&grad_next) {
        return Ok(StepOutcome::NonFinite);
    }
    Ok(StepOutcome::Accepted(AcceptedStep {
        x_next,
        f_next,
        grad_next,
        big_f_next,
        report,
        backtracks,
        mu: f64::INFINITY,
        alpha,
    }))
}
