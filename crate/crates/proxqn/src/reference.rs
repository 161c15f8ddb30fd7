//! Plain proximal-gradient (ISTA) baseline.
//!
//! Deliberately independent of the quasi-Newton machinery in the rest of the
//! crate: one soft-thresholded gradient step per iteration with a fixed
//! 1/L step size. Serves two jobs: computing certified reference optima
//! and acting as the known-good baseline the solver is cross-checked
//! against.

use crate::linalg::{norm1, norm_inf, soft_threshold};
use crate::model::min_norm_subgradient;
use crate::problem::{CompositeProblem, OracleError};

/// Result of an ISTA run.
#[derive(Debug, Clone)]
pub struct IstaRun {
    pub x: Vec<f64>,
    /// Composite objective F(x) = f(x) + lambda ||x||_1 at the final point.
    pub f_value: f64,
    /// Infinity norm of the minimum-norm subgradient at the final point.
    pub subgrad_inf: f64,
    /// Gradient steps actually taken.
    pub steps: u64,
    /// True iff subgrad_inf <= tol was reached within the step cap.
    pub certified: bool,
    /// Step-size constant used (estimated Lipschitz constant of grad f).
    pub lipschitz: f64,
}

/// Run ISTA from the origin with an internally estimated Lipschitz constant.
pub fn ista(
    problem: &CompositeProblem,
    tol: f64,
    max_steps: u64,
) -> Result<IstaRun, OracleError> {
    let lipschitz = problem.lipschitz_estimate().value;
    let x0 = vec![0.0; problem.n_features()];
    ista_with(problem, lipschitz, &x0, tol, max_steps)
}

/// Run ISTA from `x0` with a caller-supplied Lipschitz constant:
/// x <- soft(x - grad f(x) / L, lambda / L) until the minimum-norm
/// subgradient infinity norm drops to `tol` or `max_steps` is exhausted.
pub fn ista_with(
    problem: &CompositeProblem,
    lipschitz: f64,
    x0: &[f64],
    tol: f64,
    max_steps: u64,
) -> Result<IstaRun, OracleError> {
    assert!(
        lipschitz.is_finite() && lipschitz >= 0.0,
        "step constant must be finite and nonnegative"
    );
    // A zero estimate means grad f is constant; any positive step is valid.
    let step = 1.0 / lipschitz.max(f64::MIN_POSITIVE);
    let tau = step * problem.lambda();

    let mut x = x0.to_vec();
    let mut steps = 0u64;
    loop {
        let (f, grad) = problem.smooth_value_grad(&x)?;
        let xi = min_norm_subgradient(&x, &grad, problem.lambda());
        let subgrad_inf = norm_inf(&xi);
        if subgrad_inf <= tol || steps >= max_steps {
            return Ok(IstaRun {
                f_value: f + problem.lambda() * norm1(&x),
                x,
                subgrad_inf,
                steps,
                certified: subgrad_inf <= tol,
                lipschitz,
            });
        }
        for (xi_, gi) in x.iter_mut().zip(grad.iter()) {
            *xi_ = soft_threshold(*xi_ - step * gi, tau);
        }
        steps += 1;
    }
}
