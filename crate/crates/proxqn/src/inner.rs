//! Subproblem solvers over the working set and the inner-step budget.
//!
//! All solvers minimize the model Q starting from d = 0, so the returned
//! Q value never exceeds Q(0) = F(x). Each reports the direction, the step
//! count actually spent, and the incremental Q bookkeeping; the inexactness
//! phi = q_end - min Q is measured downstream against the dense oracle.

use crate::model::{coordinate_solve, QuadModel};
use crate::rng::SplitMix64;

/// How many inner coordinate steps an outer iteration may spend.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetRule {
    /// (1 + floor(k/m)) * |working set|: one sweep-equivalent early, growing
    /// as the memory window turns over.
    Scaled,
    /// ceil(a k + b) steps regardless of working-set size.
    Linear { a: f64, b: f64 },
}

/// Steps allotted to outer iteration k.
pub fn compute_budget(k: u64, memory: usize, ws_size: usize, rule: BudgetRule) -> u64 {
    match rule {
        BudgetRule::Scaled => {
            let m = memory.max(1) as u64;
            (1 + k / m) * ws_size as u64
        }
        BudgetRule::Linear { a, b } => {
            let raw = a * k as f64 + b;
            raw.max(0.0).ceil() as u64
        }
    }
}

/// Outcome of one inner solve.
#[derive(Debug, Clone)]
pub struct InnerReport {
    /// Direction d; the candidate point is x + d.
    pub direction: Vec<f64>,
    /// Coordinate steps performed (full-vector iterations for ISTA).
    pub steps_taken: u64,
    /// Q at d = 0, i.e. F(x).
    pub q_start: f64,
    /// Q at the returned d, tracked incrementally; never above q_start.
    pub q_end: f64,
    /// Steps allotted.
    pub budget: u64,
    /// Per-working-set-position draw counts (rcd) or sweep counts (cyclic);
    /// empty for ISTA.
    pub selection_counts: Vec<u64>,
}

/// One exact coordinate move of the model restricted to coordinate j:
/// returns (z, delta_q). The 1/2 d^T H d convention is folded into the
/// coefficients here (a = H_jj / 2, b = grad_j + (Hd)_j).
#[inline]
fn coordinate_step(model: &QuadModel, v: &[f64], d: &[f64], j: usize) -> (f64, f64) {
    let a = 0.5 * model.h_diag(j);
    let b = model.grad()[j] + model.h_product_entry(v, j, d[j]);
    let c = model.base()[j] + d[j];
    let lambda = model.lambda();
    let z = coordinate_solve(a, b, c, lambda);
    let delta = (a * z + b) * z + lambda * ((c + z).abs() - c.abs());
    (z, delta)
}

/// Randomized coordinate descent: each step draws a working-set position
/// uniformly and applies the closed-form coordinate minimizer. A move whose
/// tracked decrease would round above zero is skipped (the draw still
/// counts), keeping q_end <= q_start exact.
pub fn rcd(
    model: &QuadModel,
    working_set: &[usize],
    budget: u64,
    rng: &mut SplitMix64,
) -> InnerReport {
    assert!(!working_set.is_empty(), "rcd needs a nonempty working set");
    let q_start = model.objective_base();
    let mut q = q_start;
    let mut d = vec![0.0; model.n()];
    let mut v = model.h_compact_dual(&d);
    let mut selection_counts = vec![0u64; working_set.len()];
    for _ in 0..budget {
        let pos = rng.below(working_set.len() as u64) as usize;
        selection_counts[pos] += 1;
        let j = working_set[pos];
        let (z, delta) = coordinate_step(model, &v, &d, j);
        debug_assert!(
            delta <= 1e-10 * (1.0 + q.abs()),
            "coordinate step increased Q by {delta}"
        );
        if delta <= 0.0 && z != 0.0 {
            d[j] += z;
            model.h_update_v(&mut v, j, z);
            q += delta;
        }
    }
    InnerReport {
        direction: d,
        steps_taken: budget,
        q_start,
        q_end: q,
        budget,
        selection_counts,
    }
}

/// Cyclic (Gauss-Seidel) coordinate descent: ascending-index sweeps over the
/// working set. steps = passes * |working set|.
pub fn cyclic_cd(model: &QuadModel, working_set: &[usize], passes: u64) -> InnerReport {
    assert!(!working_set.is_empty(), "cyclic_cd needs a nonempty working set");
    let q_start = model.objective_base();
    let mut q = q_start;
    let mut d = vec![0.0; model.n()];
    let mut v = model.h_compact_dual(&d);
    for _ in 0..passes {
        for &j in working_set {
            let (z, delta) = coordinate_step(model, &v, &d, j);
            debug_assert!(
                delta <= 1e-10 * (1.0 + q.abs()),
                "coordinate step increased Q by {delta}"
            );
            if delta <= 0.0 && z != 0.0 {
                d[j] += z;
                model.h_update_v(&mut v, j, z);
                q += delta;
            }
        }
    }
    let steps = passes * working_set.len() as u64;
    InnerReport {
        direction: d,
        steps_taken: steps,
        q_start,
        q_end: q,
        budget: steps,
        selection_counts: vec![passes; working_set.len()],
    }
}

/// Proximal gradient on Q itself with fixed step 1/M_est, M_est the cheap
/// bound from the model; each full-vector iteration counts as one step.
/// Monotone because 1/M_est majorizes the quadratic.
pub fn ista_inner(model: &QuadModel, steps: u64) -> InnerReport {
    let q_start = model.objective_base();
    let n = model.n();
    let step = 1.0 / model.m_est();
    let tau = step * model.lambda();
    let mut d = vec![0.0; n];
    let mut q = q_start;
    for _ in 0..steps {
        let hd = model.h_full_product(&d);
        let mut moved = false;
        for i in 0..n {
            let gi = model.grad()[i] + hd[i];
            let target = model.base()[i] + d[i] - step * gi;
            let ui = crate::linalg::soft_threshold(target, tau);
            let di = ui - model.base()[i];
            if di != d[i] {
                moved = true;
            }
            d[i] = di;
        }
        let q_new = model.q_value(&d);
        debug_assert!(
            q_new <= q + 1e-10 * (1.0 + q.abs()),
            "ista step increased Q from {q} to {q_new}"
        );
        q = q_new.min(q);
        if !moved {
            break;
        }
    }
    InnerReport {
        direction: d,
        steps_taken: steps,
        q_start,
        q_end: q,
        budget: steps,
        selection_counts: Vec::new(),
    }
}
