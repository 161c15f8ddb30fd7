//! Trace serialization: the on-disk record of one solve.
//!
//! A trace is a block of '#'-prefixed header lines (configuration echo,
//! dataset hash, rng id) followed by one data row per accepted iterate,
//! plus a row for the initial point. Floats are printed with 17
//! significant digits, so rerunning the same command reproduces every
//! row byte for byte except the elapsed_seconds field, which is wall
//! clock. [`deterministic_body`] strips that field for comparisons.

use std::fmt::Write as _;

use proxqn::outer::IterationRecord;

/// Column order of a data row. Fixed; consumers index by position.
pub const COLUMNS: [&str; 11] = [
    "k",
    "F",
    "rel_gap",
    "subgrad_inf",
    "gamma_or_mu",
    "backtracks",
    "inner_steps",
    "ws_size",
    "nnz",
    "elapsed_seconds",
    "model_decrease",
];

/// Position of elapsed_seconds, the only nondeterministic column.
pub const ELAPSED_COLUMN: usize = 9;

/// 17 significant digits round-trip any f64 exactly.
pub fn format_float(v: f64) -> String {
    format!("{:.16e}", v)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TraceFormat {
    Csv,
    Jsonl,
}

/// Ordered key/value header lines. Keys repeat only by caller error;
/// [`parse_csv`] keeps the first occurrence.
#[derive(Default, Debug)]
pub struct TraceMeta {
    pub entries: Vec<(String, String)>,
}

impl TraceMeta {
    pub fn push(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn push_float(&mut self, key: &str, value: f64) {
        self.push(key, format_float(value));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn csv_row(r: &IterationRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.k,
        format_float(r.f_value),
        format_float(r.rel_gap),
        format_float(r.subgrad_inf),
        format_float(r.gamma_or_mu),
        r.backtracks,
        r.inner_steps,
        r.ws_size,
        r.nnz,
        format_float(r.elapsed_seconds),
        format_float(r.model_decrease),
    )
}

/// JSON has no NaN literal; rel_gap without a reference becomes null.
fn json_float(v: f64) -> String {
    if v.is_finite() {
        format_float(v)
    } else {
        "null".to_string()
    }
}

fn jsonl_row(r: &IterationRecord) -> String {
    format!(
        concat!(
            r#"{{"k":{},"F":{},"rel_gap":{},"subgrad_inf":{},"gamma_or_mu":{},"#,
            r#""backtracks":{},"inner_steps":{},"ws_size":{},"nnz":{},"#,
            r#""elapsed_seconds":{},"model_decrease":{}}}"#
        ),
        r.k,
        json_float(r.f_value),
        json_float(r.rel_gap),
        json_float(r.subgrad_inf),
        json_float(r.gamma_or_mu),
        r.backtracks,
        r.inner_steps,
        r.ws_size,
        r.nnz,
        json_float(r.elapsed_seconds),
        json_float(r.model_decrease),
    )
}

/// Renders a complete trace. Header first, then rows; both formats share
/// the header syntax so `grep -v '^#'` isolates the data either way.
pub fn render(meta: &TraceMeta, rows: &[IterationRecord], format: TraceFormat) -> String {
    let mut out = String::new();
    for (key, value) in &meta.entries {
        let _ = writeln!(out, "# {} {}", key, value);
    }
    let _ = writeln!(out, "# columns {}", COLUMNS.join(","));
    for r in rows {
        let line = match format {
            TraceFormat::Csv => csv_row(r),
            TraceFormat::Jsonl => jsonl_row(r),
        };
        let _ = writeln!(out, "{}", line);
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum TraceParseError {
    #[error("trace line {line}: expected {expected} fields, found {found}")]
    FieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("trace line {line}: bad {column} value {value:?}")]
    BadValue {
        line: usize,
        column: &'static str,
        value: String,
    },
}

#[derive(Debug)]
pub struct ParsedTrace {
    pub meta: TraceMeta,
    pub rows: Vec<IterationRecord>,
}

fn parse_num<T: std::str::FromStr>(
    field: &str,
    line: usize,
    column: &'static str,
) -> Result<T, TraceParseError> {
    field.parse().map_err(|_| TraceParseError::BadValue {
        line,
        column,
        value: field.to_string(),
    })
}

/// Parses CSV-format trace text back into records. Header lines become
/// meta entries; the synthetic "columns" line is kept like any other.
pub fn parse_csv(text: &str) -> Result<ParsedTrace, TraceParseError> {
    let mut meta = TraceMeta::default();
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if let Some(rest) = raw.strip_prefix('#') {
            let rest = rest.trim_start();
            match rest.split_once(' ') {
                Some((key, value)) => meta.push(key, value),
                None => meta.push(rest, ""),
            }
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(TraceParseError::FieldCount {
                line,
                expected: COLUMNS.len(),
                found: fields.len(),
            });
        }
        rows.push(IterationRecord {
            k: parse_num(fields[0], line, "k")?,
            f_value: parse_num(fields[1], line, "F")?,
            rel_gap: parse_num(fields[2], line, "rel_gap")?,
            subgrad_inf: parse_num(fields[3], line, "subgrad_inf")?,
            gamma_or_mu: parse_num(fields[4], line, "gamma_or_mu")?,
            backtracks: parse_num(fields[5], line, "backtracks")?,
            inner_steps: parse_num(fields[6], line, "inner_steps")?,
            ws_size: parse_num(fields[7], line, "ws_size")?,
            nnz: parse_num(fields[8], line, "nnz")?,
            elapsed_seconds: parse_num(fields[9], line, "elapsed_seconds")?,
            model_decrease: parse_num(fields[10], line, "model_decrease")?,
        });
    }
    Ok(ParsedTrace { meta, rows })
}

/// Data rows with the elapsed_seconds field blanked, for byte comparison
/// across reruns. Works on both formats; header lines are dropped.
pub fn deterministic_body(text: &str) -> String {
    let mut out = String::new();
    for raw in text.lines() {
        if raw.starts_with('#') || raw.trim().is_empty() {
            continue;
        }
        if raw.starts_with('{') {
            // JSONL row: cut the elapsed_seconds pair.
            let start = raw.find("\"elapsed_seconds\":");
            let line = match start {
                Some(s) => {
                    let tail = &raw[s..];
                    let end = tail.find(',').map(|e| s + e + 1).unwrap_or(raw.len());
                    format!("{}{}", &raw[..s], &raw[end..])
                }
                None => raw.to_string(),
            };
            let _ = writeln!(out, "{}", line);
        } else {
            let fields: Vec<&str> = raw.split(',').collect();
            let kept: Vec<&str> = fields
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != ELAPSED_COLUMN)
                .map(|(_, f)| *f)
                .collect();
            let _ = writeln!(out, "{}", kept.join(","));
        }
    }
    out
}
