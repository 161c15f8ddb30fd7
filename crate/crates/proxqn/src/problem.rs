//! Problem data and smooth-loss oracles.
//!
//! A [`Dataset`] is a row-compressed sparse design matrix with one label per
//! sample. A [`CompositeProblem`] pairs it with a smooth loss f and an l1
//! weight lambda, and exposes the value/gradient oracles the solver calls.
//! The objective throughout the crate is F(x) = f(x) + lambda * ||x||_1.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::linalg::{dot, fnv1a64, norm1, norm2, norm2_sq};
use crate::rng::SplitMix64;

/// Sample rows processed per work unit in chunked evaluation. Fixed so the
/// reduction order, and therefore the floating point result, does not depend
/// on the thread count.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: labels are not a recognized binary coding ({0:?} distinct values)", .distinct.len())]
    NonBinaryLabels { path: String, distinct: Vec<f64> },
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("triplet ({sample}, {feature}, _) out of bounds for {n_samples} x {n_features}")]
    TripletOutOfBounds {
        sample: usize,
        feature: usize,
        n_samples: usize,
        n_features: usize,
    },
    #[error("triplets must be row-major with strictly increasing columns within a row")]
    NotRowMajor,
    #[error("expected {n_samples} labels, got {got}")]
    LabelCount { n_samples: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("dataset has no features")]
    NoFeatures,
    #[error("point has dimension {got}, problem has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("logistic loss requires labels in {{-1,+1}}, found {found}")]
    LabelDomain { found: f64 },
}

/// Sparse design matrix in compressed-row form plus per-sample labels.
///
/// Feature indices are 0-based internally. The libsvm reader converts from
/// the 1-based on-disk convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_samples: usize,
    n_features: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major triplets (sample, feature, value).
    /// Triplets must be sorted by sample and strictly increasing in feature
    /// within each sample.
    pub fn from_triplets(
        n_samples: usize,
        n_features: usize,
        triplets: &[(usize, usize, f64)],
        labels: Vec<f64>,
    ) -> Result<Self, DataError> {
        if labels.len() != n_samples {
            return Err(DataError::LabelCount {
                n_samples,
                got: labels.len(),
            });
        }
        let mut row_ptr = vec![0usize; n_samples + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &(s, f, v) in triplets {
            if s >= n_samples || f >= n_features {
                return Err(DataError::TripletOutOfBounds {
                    sample: s,
                    feature: f,
                    n_samples,
                    n_features,
                });
            }
            if let Some((ps, pf)) = last {
                if s < ps || (s == ps && f <= pf) {
                    return Err(DataError::NotRowMajor);
                }
            }
            last = Some((s, f));
            row_ptr[s + 1] += 1;
            col_idx.push(f);
            values.push(v);
        }
        for i in 0..n_samples {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            n_samples,
            n_features,
            row_ptr,
            col_idx,
            values,
            labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Column indices and values of one sample row.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    /// Iterates all stored entries as (sample, feature, value) triplets in
    /// row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_samples).flat_map(move |s| {
            let (cols, vals) = self.row(s);
            cols.iter().zip(vals).map(move |(&c, &v)| (s, c, v))
        })
    }

    /// Row-vector product a_i . x for sample i.
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (cols, vals) = self.row(i);
        let mut acc = 0.0;
        for (&c, &v) in cols.iter().zip(vals) {
            acc += v * x[c];
        }
        acc
    }

    /// Content fingerprint over shape, entries, and labels, reported in
    /// trace headers so runs can be tied to their inputs. Zero entries
    /// are skipped: dense and sparse encodings of the same matrix hash
    /// identically. Entries are stored row-major, so the stream order is
    /// canonical.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(16 + self.nnz() * 24 + self.n_samples * 8);
        bytes.extend_from_slice(&(self.n_samples as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.n_features as u64).to_le_bytes());
        for (s, f, v) in self.entries() {
            if v == 0.0 {
                continue;
            }
            bytes.extend_from_slice(&(s as u64).to_le_bytes());
            bytes.extend_from_slice(&(f as u64).to_le_bytes());
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        for &y in &self.labels {
            bytes.extend_from_slice(&y.to_bits().to_le_bytes());
        }
        fnv1a64(&bytes)
    }

    /// Writes the dataset in libsvm format (1-based feature indices).
    pub fn save_libsvm(&self, path: &Path) -> std::io::Result<()> {
        let mut out = String::new();
        for s in 0..self.n_samples {
            let _ = write!(out, "{}", fmt_num(self.labels[s]));
            let (cols, vals) = self.row(s);
            for (&c, &v) in cols.iter().zip(vals) {
                let _ = write!(out, " {}:{}", c + 1, fmt_num(v));
            }
            out.push('\n');
        }
        let mut file = fs::File::create(path)?;
        file.write_all(out.as_bytes())
    }
}

fn fmt_num(v: f64) -> String {
    // Shortest decimal that parses back to the same f64.
    format!("{v}")
}

/// How labels read from disk are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelPolicy {
    /// Map a recognized binary coding ({-1,+1}, {0,1}, or {1,2}) onto
    /// {-1,+1}; anything else is an error.
    BinaryClassification,
    /// Keep labels as real-valued targets.
    Regression,
}

/// Reads a libsvm/svmlight file: one sample per line,
/// `label index:value ...` with 1-based strictly increasing indices.
///
/// The feature count is the largest index seen, or `feature_override` if
/// that is larger (useful to pad a test split to the train split's width).
pub fn load_libsvm(
    path: &Path,
    policy: LabelPolicy,
    feature_override: Option<usize>,
) -> Result<Dataset, ParseError> {
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: display.clone(),
        source,
    })?;
    let err = |line: usize, msg: String| ParseError::Malformed {
        path: display.clone(),
        line,
        msg,
    };
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    let mut max_feature = 0usize;
    for (lineno, raw) in content.lines().enumerate() {
        let line = lineno + 1;
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        let sample = labels.len();
        let mut tokens = text.split_ascii_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = label_tok
            .parse()
            .map_err(|_| err(line, format!("bad label {label_tok:?}")))?;
        labels.push(label);
        let mut prev_idx = 0usize;
        for tok in tokens {
            let (idx_s, val_s) = tok
                .split_once(':')
                .ok_or_else(|| err(line, format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| err(line, format!("bad feature index {idx_s:?}")))?;
            if idx == 0 {
                return Err(err(line, "feature indices are 1-based".into()));
            }
            if idx <= prev_idx {
                return Err(err(
                    line,
                    format!("feature indices must be strictly increasing, {idx} after {prev_idx}"),
                ));
            }
            let val: f64 = val_s
                .parse()
                .map_err(|_| err(line, format!("bad feature value {val_s:?}")))?;
            triplets.push((sample, idx - 1, val));
            prev_idx = idx;
            max_feature = max_feature.max(idx);
        }
    }
    if policy == LabelPolicy::BinaryClassification {
        map_binary_labels(&mut labels).map_err(|distinct| ParseError::NonBinaryLabels {
            path: display.clone(),
            distinct,
        })?;
    }
    let n_features = max_feature.max(feature_override.unwrap_or(0));
    let n_samples = labels.len();
    Dataset::from_triplets(n_samples, n_features, &triplets, labels)
        .map_err(|e| err(0, e.to_string()))
}

/// Maps labels onto {-1,+1} in place. Recognized codings: {-1,+1} (kept),
/// {0,1} (0 -> -1), {1,2} (2 -> -1). Returns the distinct values on failure.
fn map_binary_labels(labels: &mut [f64]) -> Result<(), Vec<f64>> {
    let mut distinct: Vec<f64> = Vec::new();
    for &y in labels.iter() {
        if !distinct.contains(&y) {
            distinct.push(y);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let subset_of = |allowed: &[f64]| distinct.iter().all(|d| allowed.contains(d));
    if subset_of(&[-1.0, 1.0]) {
        return Ok(());
    }
    if subset_of(&[0.0, 1.0]) {
        for y in labels.iter_mut() {
            *y = if *y == 0.0 { -1.0 } else { 1.0 };
        }
        return Ok(());
    }
    if subset_of(&[1.0, 2.0]) {
        for y in labels.iter_mut() {
            *y = if *y == 2.0 { -1.0 } else { 1.0 };
        }
        return Ok(());
    }
    Err(distinct)
}

/// Reads a dense numeric CSV where the last column is the target and the
/// rest are features. Every row must have the same width. All feature
/// entries are materialized, zeros included.
pub fn load_dense_csv(path: &Path, has_header: bool) -> Result<Dataset, ParseError> {
    let display = path.display().to_string();
    let content = fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: display.clone(),
        source,
    })?;
    let err = |line: usize, msg: String| ParseError::Malformed {
        path: display.clone(),
        line,
        msg,
    };
    let mut width: Option<usize> = None;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for (lineno, raw) in content.lines().enumerate() {
        let line = lineno + 1;
        if has_header && lineno == 0 {
            continue;
        }
        let text = raw.trim();
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').map(str::trim).collect();
        match width {
            None => {
                if fields.len() < 2 {
                    return Err(err(line, "need at least one feature and a target".into()));
                }
                width = Some(fields.len());
            }
            Some(w) if fields.len() != w => {
                return Err(err(
                    line,
                    format!("row has {} fields, expected {w}", fields.len()),
                ));
            }
            _ => {}
        }
        let sample = labels.len();
        let w = width.unwrap();
        for (j, tok) in fields.iter().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| err(line, format!("bad number {tok:?}")))?;
            if j + 1 == w {
                labels.push(v);
            } else {
                triplets.push((sample, j, v));
            }
        }
    }
    let n_features = width.map_or(0, |w| w - 1);
    Dataset::from_triplets(labels.len(), n_features, &triplets, labels)
        .map_err(|e| err(0, e.to_string()))
}

/// Smooth loss families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// f(x) = (1/N) sum log(1 + exp(-y_i a_i.x)), labels in {-1,+1}.
    Logistic,
    /// f(x) = (1/(2N)) ||Ax - b||^2.
    LeastSquares,
}

/// Sample-loop execution mode for the oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvalMode {
    /// One pass over samples in order. Bitwise deterministic; the default.
    #[default]
    Sequential,
    /// Fixed-size sample chunks reduced in chunk order. Bitwise
    /// deterministic for any thread count; runs on rayon when the
    /// `parallel` feature is enabled and serially otherwise.
    Parallel,
}

/// Smooth loss plus l1 term: the objective F(x) = f(x) + lambda ||x||_1.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    data: Dataset,
    loss: Loss,
    lambda: f64,
    eval_mode: EvalMode,
}

/// Largest-eigenvalue based bound on the gradient Lipschitz constant.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzEstimate {
    pub value: f64,
    /// False when power iteration did not converge and the value fell back
    /// to the (larger, always valid) Frobenius bound.
    pub certified: bool,
}

impl CompositeProblem {
    pub fn new(data: Dataset, loss: Loss, lambda: f64) -> Result<Self, OracleError> {
        if loss == Loss::Logistic {
            if let Some(&bad) = data.labels().iter().find(|&&y| y != 1.0 && y != -1.0) {
                return Err(OracleError::LabelDomain { found: bad });
            }
        }
        Ok(Self {
            data,
            loss,
            lambda,
            eval_mode: EvalMode::Sequential,
        })
    }

    pub fn with_eval_mode(mut self, mode: EvalMode) -> Self {
        self.eval_mode = mode;
        self
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eval_mode(&self) -> EvalMode {
        self.eval_mode
    }

    pub fn n_features(&self) -> usize {
        self.data.n_features()
    }

    fn check_point(&self, x: &[f64]) -> Result<(), OracleError> {
        if self.data.n_samples() == 0 {
            return Err(OracleError::EmptyDataset);
        }
        if self.data.n_features() == 0 {
            return Err(OracleError::NoFeatures);
        }
        if x.len() != self.data.n_features() {
            return Err(OracleError::DimensionMismatch {
                expected: self.data.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Smooth part f(x).
    pub fn smooth_value(&self, x: &[f64]) -> Result<f64, OracleError> {
        self.check_point(x)?;
        Ok(match self.eval_mode {
            EvalMode::Sequential => self.range_eval(0..self.data.n_samples(), x, None),
            EvalMode::Parallel => self.chunked_eval(x, None),
        })
    }

    /// Smooth part and its gradient in one pass.
    pub fn smooth_value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>), OracleError> {
        self.check_point(x)?;
        let mut grad = vec![0.0; self.data.n_features()];
        let f = match self.eval_mode {
            EvalMode::Sequential => {
                self.range_eval(0..self.data.n_samples(), x, Some(&mut grad))
            }
            EvalMode::Parallel => self.chunked_eval(x, Some(&mut grad)),
        };
        Ok((f, grad))
    }

    /// Full objective F(x) = f(x) + lambda ||x||_1.
    pub fn objective(&self, x: &[f64]) -> Result<f64, OracleError> {
        Ok(self.smooth_value(x)? + self.lambda * norm1(x))
    }

    /// One contiguous range of samples; the only place loss math lives.
    /// Writes scaled gradient contributions into `grad` when given.
    fn range_eval(
        &self,
        rows: std::ops::Range<usize>,
        x: &[f64],
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let n = self.data.n_samples() as f64;
        let mut value = 0.0;
        for i in rows {
            let z = self.data.row_dot(i, x);
            let y = self.data.labels()[i];
            // coeff is d loss_i / d z, already divided by N.
            let (v, coeff) = match self.loss {
                Loss::LeastSquares => {
                    let r = z - y;
                    (r * r / (2.0 * n), r / n)
                }
                Loss::Logistic => {
                    let m = y * z;
                    // log(1 + exp(-m)) without overflow on either tail.
                    let v = if m >= 0.0 {
                        (-m).exp().ln_1p()
                    } else {
                        -m + m.exp().ln_1p()
                    };
                    // sigma(-m) = 1 / (1 + exp(m)).
                    let s = if m >= 0.0 {
                        let e = (-m).exp();
                        e / (1.0 + e)
                    } else {
                        1.0 / (1.0 + m.exp())
                    };
                    (v / n, -y * s / n)
                }
            };
            value += v;
            if let Some(g) = grad.as_deref_mut() {
                let (cols, vals) = self.data.row(i);
                for (&c, &a) in cols.iter().zip(vals) {
                    g[c] += coeff * a;
                }
            }
        }
        value
    }

    /// Chunked evaluation: fixed chunk boundaries, partials reduced in
    /// chunk order, so the result is independent of scheduling.
    fn chunked_eval(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let n = self.data.n_samples();
        let n_chunks = n.div_ceil(EVAL_CHUNK);
        let want_grad = grad.is_some();
        let p = self.data.n_features();
        let one = |c: usize| -> (f64, Option<Vec<f64>>) {
            let lo = c * EVAL_CHUNK;
            let hi = (lo + EVAL_CHUNK).min(n);
            let mut part = want_grad.then(|| vec![0.0; p]);
            let v = self.range_eval(lo..hi, x, part.as_deref_mut());
            (v, part)
        };
        #[cfg(feature = "parallel")]
        let parts: Vec<(f64, Option<Vec<f64>>)> = {
            use rayon::prelude::*;
            (0..n_chunks).into_par_iter().map(one).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<(f64, Option<Vec<f64>>)> = (0..n_chunks).map(one).collect();
        let mut value = 0.0;
        let mut grad = grad;
        for (v, part) in parts {
            value += v;
            if let (Some(g), Some(pg)) = (grad.as_deref_mut(), part) {
                for (gi, pi) in g.iter_mut().zip(&pg) {
                    *gi += pi;
                }
            }
        }
        value
    }

    /// Bound on the Lipschitz constant of grad f: sigma_max(A)^2 / N for
    /// least squares, sigma_max(A)^2 / (4N) for logistic.
    ///
    /// sigma_max^2 comes from power iteration on A^T A (relative tolerance
    /// 1e-8, at most 1000 iterations, deterministic start vector). If that
    /// fails to settle, the Frobenius norm bound is returned instead with
    /// `certified` cleared.
    pub fn lipschitz_estimate(&self) -> LipschitzEstimate {
        let n = self.data.n_samples().max(1) as f64;
        let scale = |s2: f64| match self.loss {
            Loss::LeastSquares => s2 / n,
            Loss::Logistic => s2 / (4.0 * n),
        };
        let p = self.data.n_features();
        if p == 0 || self.data.nnz() == 0 {
            return LipschitzEstimate {
                value: 0.0,
                certified: true,
            };
        }
        let mut rng = SplitMix64::new(0x5EED0FA11);
        let mut v: Vec<f64> = (0..p).map(|_| rng.next_normal()).collect();
        let nv = norm2(&v);
        for vi in &mut v {
            *vi /= nv;
        }
        let mut w = vec![0.0; p];
        let mut lam_prev = 0.0;
        for _ in 0..1000 {
            // w = A^T (A v)
            w.iter_mut().for_each(|wi| *wi = 0.0);
            for i in 0..self.data.n_samples() {
                let zi = self.data.row_dot(i, &v);
                let (cols, vals) = self.data.row(i);
                for (&c, &a) in cols.iter().zip(vals) {
                    w[c] += zi * a;
                }
            }
            let lam = dot(&v, &w);
            let nw = norm2(&w);
            if nw == 0.0 {
                return LipschitzEstimate {
                    value: 0.0,
                    certified: true,
                };
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / nw;
            }
            if (lam - lam_prev).abs() <= 1e-8 * lam.abs().max(1e-300) {
                return LipschitzEstimate {
                    value: scale(lam),
                    certified: true,
                };
            }
            lam_prev = lam;
        }
        let fro_sq: f64 = norm2_sq(&self.data.values);
        LipschitzEstimate {
            value: scale(fro_sq),
            certified: false,
        }
    }
}
