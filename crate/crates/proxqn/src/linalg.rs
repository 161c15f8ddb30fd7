//! Small dense linear algebra helpers shared across the solver.
//!
//! Everything here works on flat `&[f64]` slices. Matrices are square,
//! row-major, and desk sized: the LU factorization handles the 2m x 2m
//! middle matrix of the compact quasi-Newton form, and the Jacobi
//! eigensolver backs the verification harness. Neither is meant for large n.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

pub fn norm2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm2(a: &[f64]) -> f64 {
    norm2_sq(a).sqrt()
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Soft-thresholding: sign(w) * max(|w| - tau, 0) for tau >= 0.
#[inline]
pub fn soft_threshold(w: f64, tau: f64) -> f64 {
    if w > tau {
        w - tau
    } else if w < -tau {
        w + tau
    } else {
        0.0
    }
}

/// In-place LU factorization with partial pivoting of a square matrix.
///
/// Returns the row permutation, or `None` when a pivot falls below
/// `1e-14 * max|a_ij|` of the input, which we treat as singular.
pub fn lu_factor(a: &mut [f64], n: usize) -> Option<Vec<usize>> {
    debug_assert_eq!(a.len(), n * n);
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if n > 0 && scale == 0.0 {
        return None;
    }
    let tiny = 1e-14 * scale;
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= tiny {
            return None;
        }
        if pivot_row != col {
            perm.swap(pivot_row, col);
            for j in 0..n {
                a.swap(pivot_row * n + j, col * n + j);
            }
        }
        let inv = 1.0 / a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] * inv;
            a[row * n + col] = factor;
            for j in col + 1..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
        }
    }
    Some(perm)
}

/// Solves L U x = P b given the output of [`lu_factor`]. Overwrites `rhs`
/// with the solution.
pub fn lu_solve(lu: &[f64], n: usize, perm: &[usize], rhs: &mut [f64]) {
    debug_assert_eq!(rhs.len(), n);
    let mut x: Vec<f64> = perm.iter().map(|&p| rhs[p]).collect();
    for row in 1..n {
        let mut acc = x[row];
        for col in 0..row {
            acc -= lu[row * n + col] * x[col];
        }
        x[row] = acc;
    }
    for row in (0..n).rev() {
        let mut acc = x[row];
        for col in row + 1..n {
            acc -= lu[row * n + col] * x[col];
        }
        x[row] = acc / lu[row * n + row];
    }
    rhs.copy_from_slice(&x);
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Rotates until every off-diagonal entry is below 1e-14 of the Frobenius
/// norm or 64 sweeps have run. Quadratic convergence makes the cap academic
/// for symmetric input; asymmetric input is a caller bug.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let fro = norm2(&m);
    if n == 0 || fro == 0.0 {
        return vec![0.0; n];
    }
    let stop = 1e-14 * fro;
    for _sweep in 0..64 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() <= stop {
                    continue;
                }
                rotated = true;
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eig
}

/// Extreme eigenvalues (min, max) of a symmetric matrix.
pub fn symmetric_eigen_range(a: &[f64], n: usize) -> (f64, f64) {
    let eig = symmetric_eigenvalues(a, n);
    (eig[0], eig[n - 1])
}

/// Dense symmetric matrix-vector product y = A x.
pub fn symv(a: &[f64], n: usize, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        y[i] = dot(&a[i * n..(i + 1) * n], x);
    }
}

/// FNV-1a 64-bit hash, used to fingerprint datasets and instances in
/// headers and reports.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
