//! Compact limited-memory BFGS approximation G = gamma I - Q Qhat.
//!
//! The state stores up to `memory` curvature pairs (s, t) and keeps the
//! compact factors in a layout that makes per-coordinate products O(m):
//! row i of Q and column i of Qhat are both contiguous. The inner solver
//! maintains v = Qhat d and calls [`LbfgsState::product_entry`] /
//! [`LbfgsState::update_v`] as coordinates move.
//!
//! Refreshing factorizes the middle matrix
//!   W = [[gamma S^T S, L], [L^T, -D]]
//! (L the strictly lower part of S^T T, D = diag(s_i^T t_i)) and solves
//! W Qhat = Q^T. A singular W sheds the oldest pair and retries; with no
//! pairs left the state degenerates to gamma I.

use std::collections::VecDeque;

use thiserror::Error;

use crate::linalg::{dot, lu_factor, lu_solve, norm2};

/// Relative curvature threshold: a pair is stored only when
/// s^T t > CURVATURE_EPS * ||s|| ||t||.
pub const CURVATURE_EPS: f64 = 1e-12;

/// gamma_multiplier values beyond this indicate runaway backtracking.
const MULTIPLIER_CAP: f64 = (1u64 << 30) as f64;

/// Largest n for which dense materialization is allowed (test oracle).
const DENSE_CAP: usize = 2000;

#[derive(Debug, Error)]
pub enum LbfgsError {
    #[error("gamma multiplier exceeded 2^30; backtracking cannot make progress")]
    GammaOverflow,
    #[error("dense materialization requested for n={n}, cap is {cap}")]
    DenseTooLarge { n: usize, cap: usize },
}

/// One stored curvature pair with its cached inner product.
#[derive(Debug, Clone)]
pub struct CurvaturePair {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
    pub st: f64,
}

/// Compact L-BFGS state. Single-writer: refresh/push/double_gamma must not
/// race with the read-only product routines.
#[derive(Debug, Clone)]
pub struct LbfgsState {
    n: usize,
    memory: usize,
    pairs: VecDeque<CurvaturePair>,
    /// Scale of the isotropic part, t^T t / t^T s of the newest pair.
    gamma: f64,
    /// gamma when no pairs are stored (1 unless overridden for fixed-metric
    /// runs).
    base_gamma: f64,
    /// Backtracking factor, power of two, reset to 1 when a pair lands.
    gamma_multiplier: f64,
    /// Additive diagonal shift from floor enforcement; cleared on refresh.
    extra_shift: f64,
    /// Row-major n x 2l, columns [gamma*S, T]; row i is q_i.
    q: Vec<f64>,
    /// Row-major n x 2l holding Qhat^T, so row i is qhat_i = W^{-1} q_i.
    qhat: Vec<f64>,
    /// Cached diagonal of the effective matrix.
    diag_g: Vec<f64>,
}

impl LbfgsState {
    pub fn new(n: usize, memory: usize) -> Self {
        Self::with_base_gamma(n, memory, 1.0)
    }

    /// Fixed-metric variant: with `memory` forced to zero and base gamma
    /// L(f), the model is the proximal-gradient majorizer.
    pub fn with_base_gamma(n: usize, memory: usize, base_gamma: f64) -> Self {
        assert!(base_gamma > 0.0, "base gamma must be positive");
        Self {
            n,
            memory,
            pairs: VecDeque::new(),
            gamma: base_gamma,
            base_gamma,
            gamma_multiplier: 1.0,
            extra_shift: 0.0,
            q: Vec::new(),
            qhat: Vec::new(),
            diag_g: vec![base_gamma; n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Scale actually applied to the isotropic part:
    /// gamma * multiplier + extra_shift.
    pub fn gamma_eff(&self) -> f64 {
        self.gamma * self.gamma_multiplier + self.extra_shift
    }

    pub fn gamma_multiplier(&self) -> f64 {
        self.gamma_multiplier
    }

    /// Diagonal of the effective matrix.
    pub fn diag(&self) -> &[f64] {
        &self.diag_g
    }

    /// Offers a curvature pair. Stored (evicting the oldest when full) iff
    /// s^T t > CURVATURE_EPS ||s|| ||t||; acceptance resets the
    /// backtracking multiplier. A rejected pair leaves the state untouched.
    /// The factorization is NOT rebuilt here; call [`refresh`] after.
    ///
    /// [`refresh`]: LbfgsState::refresh
    pub fn push_pair(&mut self, s: &[f64], t: &[f64]) -> bool {
        assert_eq!(s.len(), self.n);
        assert_eq!(t.len(), self.n);
        if self.memory == 0 {
            return false;
        }
        let st = dot(s, t);
        if st <= CURVATURE_EPS * norm2(s) * norm2(t) {
            return false;
        }
        while self.pairs.len() >= self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back(CurvaturePair {
            s: s.to_vec(),
            t: t.to_vec(),
            st,
        });
        self.gamma_multiplier = 1.0;
        true
    }

    /// Rebuilds gamma, the middle-matrix factorization, Qhat, and the
    /// cached diagonal from the stored pairs. O(m^2 n + m^3).
    pub fn refresh(&mut self) {
        self.extra_shift = 0.0;
        if let Some(newest) = self.pairs.back() {
            let g = dot(&newest.t, &newest.t) / newest.st;
            if g.is_finite() && g > 0.0 {
                self.gamma = g;
            } else {
                // Unreachable through the curvature gate; defensive reset.
                self.pairs.clear();
            }
        }
        loop {
            let l = self.pairs.len();
            if l == 0 {
                self.gamma = self.base_gamma;
                self.q.clear();
                self.qhat.clear();
                let ge = self.gamma_eff();
                self.diag_g.iter_mut().for_each(|d| *d = ge);
                return;
            }
            match self.try_factorize(l) {
                Some(()) => return,
                None => {
                    // Middle matrix numerically singular: shed the oldest
                    // pair and retry with the remainder.
                    self.pairs.pop_front();
                }
            }
        }
    }

    /// Builds W for the current l pairs, factorizes it, and fills Q, Qhat,
    /// diagG. None when W is singular.
    fn try_factorize(&mut self, l: usize) -> Option<()> {
        let two_l = 2 * l;
        let g = self.gamma;
        // W = [[gamma S^T S, L], [L^T, -D]].
        let mut w = vec![0.0; two_l * two_l];
        for i in 0..l {
            for j in 0..l {
                let ss = dot(&self.pairs[i].s, &self.pairs[j].s);
                w[i * two_l + j] = g * ss;
                if i > j {
                    let st = dot(&self.pairs[i].s, &self.pairs[j].t);
                    w[i * two_l + (l + j)] = st;
                    w[(l + j) * two_l + i] = st;
                }
            }
            w[(l + i) * two_l + (l + i)] = -self.pairs[i].st;
        }
        let perm = lu_factor(&mut w, two_l)?;
        self.q.resize(self.n * two_l, 0.0);
        self.qhat.resize(self.n * two_l, 0.0);
        for i in 0..self.n {
            let row = &mut self.q[i * two_l..(i + 1) * two_l];
            for j in 0..l {
                row[j] = g * self.pairs[j].s[i];
                row[l + j] = self.pairs[j].t[i];
            }
        }
        let mut rhs = vec![0.0; two_l];
        for i in 0..self.n {
            rhs.copy_from_slice(&self.q[i * two_l..(i + 1) * two_l]);
            lu_solve(&w, two_l, &perm, &mut rhs);
            self.qhat[i * two_l..(i + 1) * two_l].copy_from_slice(&rhs);
        }
        let ge = self.gamma_eff();
        for i in 0..self.n {
            let qi = &self.q[i * two_l..(i + 1) * two_l];
            let qhi = &self.qhat[i * two_l..(i + 1) * two_l];
            self.diag_g[i] = ge - dot(qi, qhi);
        }
        Some(())
    }

    /// Doubles the isotropic part (backtracking step): the diagonal gains
    /// the pre-call gamma * multiplier, the compact correction is untouched.
    pub fn double_gamma(&mut self) -> Result<(), LbfgsError> {
        let increment = self.gamma * self.gamma_multiplier;
        self.gamma_multiplier *= 2.0;
        if self.gamma_multiplier > MULTIPLIER_CAP {
            return Err(LbfgsError::GammaOverflow);
        }
        self.diag_g.iter_mut().for_each(|d| *d += increment);
        Ok(())
    }

    /// Lifts the smallest eigenvalue estimate to at least `sigma_floor` by
    /// an isotropic shift. Used by the theory harness only.
    pub fn enforce_floor(&mut self, sigma_floor: f64, lambda_min_est: f64) {
        if lambda_min_est < sigma_floor {
            let add = sigma_floor - lambda_min_est;
            self.extra_shift += add;
            self.diag_g.iter_mut().for_each(|d| *d += add);
        }
    }

    /// (G d)_i in O(m), given v = Qhat d maintained by the caller.
    #[inline]
    pub fn product_entry(&self, v: &[f64], i: usize, d_i: f64) -> f64 {
        let two_l = 2 * self.pairs.len();
        let qi = &self.q[i * two_l..i * two_l + two_l];
        self.gamma_eff() * d_i - dot(qi, v)
    }

    /// v <- v + z * qhat_j, keeping v = Qhat d consistent after
    /// d_j += z. O(m).
    #[inline]
    pub fn update_v(&self, v: &mut [f64], j: usize, z: f64) {
        let two_l = 2 * self.pairs.len();
        let qhj = &self.qhat[j * two_l..j * two_l + two_l];
        for (vi, qi) in v.iter_mut().zip(qhj) {
            *vi += z * qi;
        }
    }

    /// Builds v = Qhat d from scratch. O(mn); initialization and audits.
    pub fn compact_dual(&self, d: &[f64]) -> Vec<f64> {
        let two_l = 2 * self.pairs.len();
        let mut v = vec![0.0; two_l];
        for (i, &di) in d.iter().enumerate() {
            if di != 0.0 {
                self.update_v(&mut v, i, di);
            }
        }
        v
    }

    /// Full product G u in O(mn).
    pub fn full_product(&self, u: &[f64]) -> Vec<f64> {
        let v = self.compact_dual(u);
        (0..self.n)
            .map(|i| self.product_entry(&v, i, u[i]))
            .collect()
    }

    /// Quadratic form u^T G u. O(mn).
    pub fn quad_form(&self, u: &[f64]) -> f64 {
        dot(u, &self.full_product(u))
    }

    /// ||Q||_F ||Qhat||_F, a cheap overestimate of the correction's
    /// spectral norm; gamma_eff plus this bounds lambda_max(G).
    pub fn correction_norm_bound(&self) -> f64 {
        norm2(&self.q) * norm2(&self.qhat)
    }

    /// Explicit gamma_eff I - Q Qhat, symmetrized entry by entry. Test and
    /// theory oracle only; errors above the size cap.
    pub fn dense_materialize(&self) -> Result<Vec<f64>, LbfgsError> {
        if self.n > DENSE_CAP {
            return Err(LbfgsError::DenseTooLarge {
                n: self.n,
                cap: DENSE_CAP,
            });
        }
        let n = self.n;
        let two_l = 2 * self.pairs.len();
        let ge = self.gamma_eff();
        // P = Q Qhat; the true correction is symmetric, floating point P is
        // only nearly so; average the two triangles.
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            let qi = &self.q[i * two_l..i * two_l + two_l];
            for j in 0..n {
                let qhj = &self.qhat[j * two_l..j * two_l + two_l];
                p[i * n + j] = dot(qi, qhj);
            }
        }
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let sym = 0.5 * (p[i * n + j] + p[j * n + i]);
                h[i * n + j] = if i == j { ge - sym } else { -sym };
            }
        }
        Ok(h)
    }

    /// Test-forensics dump of the compact factors as CSV sections.
    pub fn debug_dump(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        let two_l = 2 * self.pairs.len();
        writeln!(
            out,
            "# n={} pairs={} gamma={:.16e} multiplier={} extra_shift={:.16e}",
            self.n,
            self.pairs.len(),
            self.gamma,
            self.gamma_multiplier,
            self.extra_shift
        )?;
        for (name, buf) in [("Q", &self.q), ("Qhat", &self.qhat)] {
            writeln!(out, "# {name}")?;
            for i in 0..self.n {
                let row: Vec<String> = buf[i * two_l..(i + 1) * two_l]
                    .iter()
                    .map(|v| format!("{v:.16e}"))
                    .collect();
                writeln!(out, "{}", row.join(","))?;
            }
        }
        writeln!(out, "# diagG")?;
        for d in &self.diag_g {
            writeln!(out, "{d:.16e}")?;
        }
        Ok(())
    }
}
