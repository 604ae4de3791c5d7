//! Per-sample CSV records and summary statistics.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of the report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: usize,
    pub label: usize,
    pub clean_correct: bool,
    pub method: String,
    pub verdict: String,
    pub margin_min: Option<f64>,
    pub eps_lower: Option<f64>,
    pub eps_upper: Option<f64>,
    pub gap_percent: Option<f64>,
    pub wall_time_s: Option<f64>,
}

/// Writes the records as CSV with a header row, preceded by `comment` lines
/// prefixed with `#`.
pub fn write_records<W: Write>(mut out: W, records: &[SampleRecord], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        for line in c.lines() {
            writeln!(out, "# {line}").map_err(|e| Error::io("<report>", e))?;
        }
    }
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    if records.is_empty() {
        w.write_record([
            "sample_id",
            "label",
            "clean_correct",
            "method",
            "verdict",
            "margin_min",
            "eps_lower",
            "eps_upper",
            "gap_percent",
            "wall_time_s",
        ])
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))
}

pub fn save_records(path: impl AsRef<Path>, records: &[SampleRecord], comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(std::io::BufWriter::new(file), records, comment)
}

/// Reads records back, skipping `#` comment lines.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<SampleRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

/// Median of the finite values, or `None` if there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// 95% confidence interval of the median from the normal approximation to
/// the binomial distribution of order-statistic ranks.
pub fn median_ci95(values: &[f64]) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let half = 1.96 * n.sqrt() / 2.0;
    let lo = ((n / 2.0 - half).floor().max(1.0) as usize).min(v.len()) - 1;
    let hi = ((n / 2.0 + half).ceil() as usize + 1).clamp(1, v.len()) - 1;
    Some((v[lo], v[hi]))
}
