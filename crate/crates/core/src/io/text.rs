//! Delimited text: data ingestion, sample export, evaluation reports and
//! plot grids.
//!
//! Floating point values are written in Rust's shortest round-trip form, so
//! re-reading a written file recovers the values exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, EvalReport, EvalSummary};
use crate::scalar::Real;

pub const REPORT_FORMAT: &str = "tgp-eval-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct IngestOptions {
    pub delimiter: char,
    /// `Some(true)`: first non-comment line is a header; `Some(false)`: no
    /// header; `None`: treat it as a header if any cell is non-numeric.
    pub header: Option<bool>,
    pub center: bool,
    pub max_rows: Option<usize>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            delimiter: ',',
            header: None,
            center: false,
            max_rows: None,
        }
    }
}

/// Reads numeric rows. Blank lines and lines starting with `#` are skipped.
/// Rows with the wrong number of cells or with NaN/Inf values are rejected
/// and counted; the column count is fixed by the header or the first
/// accepted row. A non-numeric cell outside the header is an error.
pub fn ingest<T: Real>(path: &Path, opts: &IngestOptions) -> Result<Dataset<T>> {
    let reader = BufReader::new(File::open(path).map_err(Error::io_at(path))?);
    let mut names: Option<Vec<String>> = None;
    let mut first = true;
    let mut d = None;
    let mut values: Vec<T> = Vec::new();
    let mut n = 0usize;
    let mut rejected = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::io_at(path))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(opts.delimiter).map(str::trim).collect();
        let parsed: Option<Vec<f64>> = cells.iter().map(|c| c.parse::<f64>().ok()).collect();
        if first {
            first = false;
            let is_header = match opts.header {
                Some(h) => h,
                None => parsed.is_none(),
            };
            if is_header {
                names = Some(cells.iter().map(|c| c.to_string()).collect());
                d = Some(cells.len());
                continue;
            }
        }
        let Some(row) = parsed else {
            let cell = cells.iter().find(|c| c.parse::<f64>().is_err()).unwrap_or(&"");
            return Err(Error::Format(format!(
                "{}:{}: non-numeric cell {cell:?}",
                path.display(),
                lineno + 1
            )));
        };
        if d.is_some_and(|d| row.len() != d) || row.iter().any(|v| !v.is_finite()) {
            rejected += 1;
            continue;
        }
        d.get_or_insert(row.len());
        values.extend(row.iter().map(|&v| T::of(v)));
        n += 1;
        if opts.max_rows.is_some_and(|m| n >= m) {
            break;
        }
    }
    let d = d.unwrap_or(0);
    if n == 0 || d == 0 {
        return Err(Error::DegenerateData(format!(
            "no usable rows in {} ({rejected} rejected)",
            path.display()
        )));
    }
    let rows = DMatrix::from_row_slice(n, d, &values);
    let mut ds = Dataset::new(rows)?.with_rejected_rows(rejected);
    if let Some(names) = names {
        ds = ds.with_column_names(names);
    }
    Ok(if opts.center { ds.centered() } else { ds })
}

fn join_row<T: Real>(out: &mut String, values: impl Iterator<Item = T>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

/// Comma-separated points, one per row, with a header line and an optional
/// trailing weight column.
pub fn format_samples<T: Real>(points: &DMatrix<T>, weights: Option<&DVector<T>>, names: Option<&[String]>) -> String {
    let d = points.ncols();
    let mut out = String::new();
    let mut header: Vec<String> = match names {
        Some(n) if n.len() == d => n.to_vec(),
        _ => (1..=d).map(|j| format!("x{j}")).collect(),
    };
    if weights.is_some() {
        header.push("weight".into());
    }
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..points.nrows() {
        let w = weights.map(|w| w[i]);
        join_row(&mut out, points.row(i).iter().copied().chain(w));
    }
    out
}

pub fn write_samples<T: Real>(path: &Path, points: &DMatrix<T>, weights: Option<&DVector<T>>, names: Option<&[String]>) -> Result<()> {
    std::fs::write(path, format_samples(points, weights, names)).map_err(Error::io_at(path))?;
    Ok(())
}

/// Report layout:
///
/// ```text
/// tgp-eval-report 1
/// subject <label>
/// n_directions <int>
/// grid_points <int>
/// n_s <int>
/// seed <int>
/// ess <float>
/// clamped <int>
/// warning <text>            (zero or more)
/// [directions]
/// direction,ks,wd
/// <index>,<ks>,<wd>         (one per direction, in draw order)
/// [summary]
/// median_ks <float>
/// mean_ks <float>
/// median_wd <float>
/// mean_wd <float>
/// ```
pub fn format_report(r: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{REPORT_FORMAT} {REPORT_VERSION}");
    let _ = writeln!(out, "subject {}", r.subject);
    let _ = writeln!(out, "n_directions {}", r.config.n_directions);
    let _ = writeln!(out, "grid_points {}", r.config.grid_points);
    let _ = writeln!(out, "n_s {}", r.config.n_s);
    let _ = writeln!(out, "seed {}", r.config.seed);
    let _ = writeln!(out, "ess {}", r.ess);
    let _ = writeln!(out, "clamped {}", r.clamped);
    for w in &r.warnings {
        let _ = writeln!(out, "warning {}", w.replace('\n', " "));
    }
    out.push_str("[directions]\ndirection,ks,wd\n");
    for (i, (k, w)) in r.ks.iter().zip(&r.wd).enumerate() {
        let _ = writeln!(out, "{i},{k},{w}");
    }
    out.push_str("[summary]\n");
    let s = &r.summary;
    let _ = writeln!(out, "median_ks {}", s.median_ks);
    let _ = writeln!(out, "mean_ks {}", s.mean_ks);
    let _ = writeln!(out, "median_wd {}", s.median_wd);
    let _ = writeln!(out, "mean_wd {}", s.mean_wd);
    out
}

pub fn write_report(path: &Path, r: &EvalReport) -> Result<()> {
    std::fs::write(path, format_report(r)).map_err(Error::io_at(path))?;
    Ok(())
}

/// Parsed form of a report file. Direction vectors are not stored in the
/// file, so they come back empty.
pub fn parse_report(text: &str) -> Result<EvalReport> {
    let bad = |m: &str| Error::Format(format!("malformed report: {m}"));
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| bad("empty"))?;
    if head != format!("{REPORT_FORMAT} {REPORT_VERSION}") {
        return Err(bad("unknown header"));
    }
    let mut kv = std::collections::BTreeMap::new();
    let mut warnings = Vec::new();
    let mut ks = Vec::new();
    let mut wd = Vec::new();
    let mut section = "";
    for line in lines {
        match line {
            "[directions]" => section = "directions",
            "[summary]" => section = "summary",
            "direction,ks,wd" if section == "directions" => {}
            _ if section == "directions" => {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(bad("direction record"));
                }
                ks.push(f[1].parse::<f64>().map_err(|_| bad("ks value"))?);
                wd.push(f[2].parse::<f64>().map_err(|_| bad("wd value"))?);
            }
            _ => {
                let (k, v) = line.split_once(' ').ok_or_else(|| bad(line))?;
                if k == "warning" {
                    warnings.push(v.to_string());
                } else {
                    kv.insert(format!("{section}.{k}"), v.to_string());
                }
            }
        }
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| bad(k));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(k)) };
    let int = |k: &str| -> Result<u64> { get(k)?.parse().map_err(|_| bad(k)) };
    Ok(EvalReport {
        subject: get(".subject")?.clone(),
        config: EvalConfig {
            n_directions: int(".n_directions")? as usize,
            grid_points: int(".grid_points")? as usize,
            n_s: int(".n_s")? as usize,
            seed: int(".seed")?,
        },
        directions: Vec::new(),
        ks,
        wd,
        summary: EvalSummary {
            median_ks: num("summary.median_ks")?,
            mean_ks: num("summary.mean_ks")?,
            median_wd: num("summary.median_wd")?,
            mean_wd: num("summary.mean_wd")?,
        },
        ess: num(".ess")?,
        clamped: int(".clamped")? as usize,
        warnings,
    })
}

/// Three-column grid `x,y,logdensity`, x varying fastest.
pub fn format_grid<T: Real>(xs: &[T], ys: &[T], values: &[T]) -> String {
    let mut out = String::from("x,y,logdensity\n");
    for (j, &y) in ys.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            join_row(&mut out, [x, y, values[j * xs.len() + i]].into_iter());
        }
    }
    out
}
