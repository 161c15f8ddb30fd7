//! Piecewise-quadratic model around the current iterate and its minimizers.
//!
//! Q(u) = f(x) + grad^T (u-x) + 1/2 (u-x)^T H (u-x) + lambda ||u||_1,
//! with H the compact quasi-Newton matrix, optionally shifted by
//! 1/(2 mu) I when a prox term is in force. Q(x) = F(x) by construction.
//!
//! The one-dimensional restriction of Q to a coordinate has a closed-form
//! minimizer ([`coordinate_solve`]); [`dense_prox_min`] is the slow certified
//! solver used as the exact-subproblem oracle.

use thiserror::Error;

use crate::lbfgs::{LbfgsError, LbfgsState};
use crate::linalg::{dot, norm1, norm2, soft_threshold, symmetric_eigen_range, symv};

#[derive(Debug, Error)]
pub enum ProxOracleError {
    #[error("dense prox oracle: {0}")]
    Dense(#[from] LbfgsError),
    #[error("dense prox oracle: quadratic is not positive definite (min eigenvalue {sigma:.3e})")]
    NotPositiveDefinite { sigma: f64 },
    #[error("dense prox oracle: step cap reached, best subgradient norm {subgrad_norm:.3e}")]
    StepCap {
        /// Best iterate found before giving up.
        best: Vec<f64>,
        subgrad_norm: f64,
    },
}

/// Model of the objective at a fixed base point. Immutable; every method is
/// a pure read of the borrowed state.
#[derive(Debug, Clone, Copy)]
pub struct QuadModel<'a> {
    base: &'a [f64],
    grad: &'a [f64],
    fval: f64,
    big_f: f64,
    lambda: f64,
    /// Prox parameter; INFINITY means no prox term (practical mode).
    mu: f64,
    /// Cached 1/(2 mu), zero in practical mode.
    prox_shift: f64,
    state: &'a LbfgsState,
}

impl<'a> QuadModel<'a> {
    pub fn new(
        base: &'a [f64],
        grad: &'a [f64],
        fval: f64,
        lambda: f64,
        state: &'a LbfgsState,
        mu: f64,
    ) -> Self {
        assert_eq!(base.len(), state.n());
        assert_eq!(grad.len(), state.n());
        assert!(mu > 0.0, "prox parameter must be positive");
        let prox_shift = if mu.is_finite() { 0.5 / mu } else { 0.0 };
        Self {
            base,
            grad,
            fval,
            big_f: fval + lambda * norm1(base),
            lambda,
            mu,
            prox_shift,
            state,
        }
    }

    pub fn base(&self) -> &[f64] {
        self.base
    }

    pub fn grad(&self) -> &[f64] {
        self.grad
    }

    pub fn f_base(&self) -> f64 {
        self.fval
    }

    /// F at the base point; equals q_value(0).
    pub fn objective_base(&self) -> f64 {
        self.big_f
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn prox_shift(&self) -> f64 {
        self.prox_shift
    }

    pub fn state(&self) -> &LbfgsState {
        self.state
    }

    pub fn n(&self) -> usize {
        self.state.n()
    }

    /// Diagonal entry of the effective H (compact matrix plus prox shift).
    #[inline]
    pub fn h_diag(&self, i: usize) -> f64 {
        self.state.diag()[i] + self.prox_shift
    }

    /// (H d)_i given the compact dual vector v = Qhat d. O(m).
    #[inline]
    pub fn h_product_entry(&self, v: &[f64], i: usize, d_i: f64) -> f64 {
        self.state.product_entry(v, i, d_i) + self.prox_shift * d_i
    }

    /// Keeps v = Qhat d consistent after d_j += z.
    #[inline]
    pub fn h_update_v(&self, v: &mut [f64], j: usize, z: f64) {
        self.state.update_v(v, j, z);
    }

    pub fn h_compact_dual(&self, d: &[f64]) -> Vec<f64> {
        self.state.compact_dual(d)
    }

    /// Full product H u. O(mn).
    pub fn h_full_product(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.state.full_product(u);
        if self.prox_shift != 0.0 {
            for (o, &ui) in out.iter_mut().zip(u) {
                *o += self.prox_shift * ui;
            }
        }
        out
    }

    /// u^T H u. O(mn).
    pub fn h_quad_form(&self, u: &[f64]) -> f64 {
        dot(u, &self.h_full_product(u))
    }

    /// Cheap upper bound on lambda_max of the effective H. O(mn).
    pub fn m_est(&self) -> f64 {
        self.state.gamma_eff() + self.prox_shift + self.state.correction_norm_bound()
    }

    /// Dense effective H; test and theory oracle only.
    pub fn dense_hessian(&self) -> Result<Vec<f64>, LbfgsError> {
        let n = self.n();
        let mut h = self.state.dense_materialize()?;
        if self.prox_shift != 0.0 {
            for i in 0..n {
                h[i * n + i] += self.prox_shift;
            }
        }
        Ok(h)
    }

    /// Q at x + d: f(x) + grad^T d + 1/2 d^T H d + lambda ||x + d||_1.
    /// O(mn).
    pub fn q_value(&self, d: &[f64]) -> f64 {
        let shifted: f64 = self.base.iter().zip(d).map(|(x, di)| (x + di).abs()).sum();
        self.fval + dot(self.grad, d) + 0.5 * self.h_quad_form(d) + self.lambda * shifted
    }

    /// Q(x + d) - F(x); non-positive for any direction an inner solver
    /// produced, since they start from d = 0 and never increase Q.
    pub fn model_decrease(&self, d: &[f64]) -> f64 {
        self.q_value(d) - self.big_f
    }

    /// High-accuracy subproblem minimizer with a certified gap:
    /// Q(u) - min Q <= tol. Dense; for tests and the theory harness.
    pub fn exact_prox_oracle(&self, tol: f64) -> Result<ProxSolution, ProxOracleError> {
        let h = self.dense_hessian()?;
        dense_prox_min(self.base, self.grad, &h, self.lambda, tol)
    }
}

/// Exact minimizer of a z^2 + b z + lambda |c + z| over z:
/// z* = soft(c - b/(2a), lambda/(2a)) - c.
///
/// Callers minimizing Q along coordinate j pass a = H_jj / 2,
/// b = grad_j + (H d)_j, c = x_j + d_j (the 1/2 d^T H d convention folded
/// into the coefficients).
#[inline]
pub fn coordinate_solve(a: f64, b: f64, c: f64, lambda: f64) -> f64 {
    assert!(a > 0.0, "coordinate curvature must be positive, got {a}");
    soft_threshold(c - b / (2.0 * a), lambda / (2.0 * a)) - c
}

/// Minimal-l2-norm element of the subdifferential of F = f + lambda||.||_1
/// at x, given grad = grad f(x). Zero exactly at minimizers.
pub fn min_norm_subgradient(x: &[f64], grad: &[f64], lambda: f64) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .map(|(&xi, &gi)| {
            if xi != 0.0 {
                gi + lambda * xi.signum()
            } else {
                soft_threshold(gi, lambda)
            }
        })
        .collect()
}

/// Certified minimizer of q(u) = grad^T (u-x) + 1/2 (u-x)^T H (u-x)
/// + lambda ||u||_1 for an explicit symmetric positive definite H.
#[derive(Debug, Clone)]
pub struct ProxSolution {
    pub u: Vec<f64>,
    /// Full proximal-gradient sweeps performed.
    pub steps: u64,
    /// Certified bound on the objective gap at u.
    pub gap_bound: f64,
    /// Extreme eigenvalues of H used for the step size and certificate.
    pub sigma: f64,
    pub m: f64,
}

/// Proximal gradient on the dense quadratic with step 1/M, stopping when
/// the minimal-norm subgradient xi satisfies ||xi|| <= sqrt(2 sigma tol),
/// which certifies a gap of at most ||xi||^2 / (2 sigma) <= tol by strong
/// convexity. The step budget is 1e7 coordinate-equivalents.
pub fn dense_prox_min(
    x: &[f64],
    grad: &[f64],
    h: &[f64],
    lambda: f64,
    tol: f64,
) -> Result<ProxSolution, ProxOracleError> {
    assert!(tol > 0.0);
    let n = x.len();
    assert_eq!(h.len(), n * n);
    let (sigma, m) = symmetric_eigen_range(h, n);
    if sigma <= 0.0 {
        return Err(ProxOracleError::NotPositiveDefinite { sigma });
    }
    let step = 1.0 / m;
    let threshold = (2.0 * sigma * tol).sqrt();
    let cap = ((1e7 / n as f64).ceil() as u64).max(1);
    let mut u = x.to_vec();
    let mut gu = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut best_norm = f64::INFINITY;
    let mut best = u.clone();
    for k in 0..=cap {
        for (di, (&ui, &xi)) in diff.iter_mut().zip(u.iter().zip(x)) {
            *di = ui - xi;
        }
        symv(h, n, &diff, &mut gu);
        for (g, &gr) in gu.iter_mut().zip(grad) {
            *g += gr;
        }
        let xi = min_norm_subgradient(&u, &gu, lambda);
        let xin = norm2(&xi);
        if xin < best_norm {
            best_norm = xin;
            best.copy_from_slice(&u);
        }
        if xin <= threshold {
            return Ok(ProxSolution {
                u,
                steps: k,
                gap_bound: xin * xin / (2.0 * sigma),
                sigma,
                m,
            });
        }
        if k == cap {
            break;
        }
        for (ui, &gi) in u.iter_mut().zip(&gu) {
            *ui = soft_threshold(*ui - step * gi, step * lambda);
        }
    }
    Err(ProxOracleError::StepCap {
        best,
        subgrad_norm: best_norm,
    })
}
