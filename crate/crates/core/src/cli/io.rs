//! CSV tables. Floats are written with 17 significant digits so every value
//! reads back bit-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenario::{Observation, TargetState, TruthLabel, LABELS};

pub const TRUTH_FILE: &str = "truth.csv";
pub const MEASUREMENTS_FILE: &str = "measurements.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const HMM_POSTERIOR_FILE: &str = "hmm_posterior.csv";
pub const HMM_DIAGNOSTICS_FILE: &str = "hmm_diagnostics.csv";
pub const ESSM_POSTERIOR_FILE: &str = "essm_posterior.csv";
pub const ESSM_ESTIMATE_FILE: &str = "essm_estimate.csv";
pub const ESSM_DIAGNOSTICS_FILE: &str = "essm_diagnostics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.json";

/// Scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(BufWriter::new(f))
}

fn write_rows<I>(path: &Path, header: &str, rows: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let mut w = create(path)?;
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_states(path: &Path, states: &[[f64; 4]]) -> Result<()> {
    write_rows(
        path,
        "k,x,vx,y,vy",
        states
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{},{}", i + 1, s.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","))),
    )
}

pub fn write_truth(path: &Path, truth: &[TargetState]) -> Result<()> {
    let rows: Vec<[f64; 4]> = truth.iter().map(|s| s.0).collect();
    write_states(path, &rows)
}

pub fn write_measurements(path: &Path, obs: &[Observation]) -> Result<()> {
    write_rows(
        path,
        "k,bearing_deg,range_m",
        obs.iter().map(|y| format!("{},{},{}", y.k, fmt_f64(y.bearing.to_degrees()), fmt_f64(y.range))),
    )
}

pub fn write_labels(path: &Path, labels: &[TruthLabel]) -> Result<()> {
    write_rows(
        path,
        "k,label,region",
        labels.iter().enumerate().map(|(i, l)| {
            let region = l.region.map(|r| r.to_string()).unwrap_or_default();
            format!("{},{},{}", i + 1, LABELS[l.situation], region)
        }),
    )
}

pub fn write_posteriors(path: &Path, labels: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    write_rows(
        path,
        &format!("k,{}", labels.join(",")),
        rows.iter()
            .enumerate()
            .map(|(i, p)| format!("{},{}", i + 1, p.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","))),
    )
}

pub fn write_lines(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    write_rows(path, header, rows)
}

fn data_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

/// Reads a CSV, checking the header and that `k` runs 1, 2, ….
fn read_table(path: &Path, expected_header: Option<&[&str]>) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| data_err(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| data_err(path, e))?.iter().map(str::to_string).collect();
    if let Some(exp) = expected_header {
        if header.iter().map(String::as_str).ne(exp.iter().copied()) {
            return Err(data_err(path, format!("header {header:?}, expected {exp:?}")));
        }
    }
    if header.first().map(String::as_str) != Some("k") {
        return Err(data_err(path, "first column must be k"));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data_err(path, e))?;
        let k: usize = rec[0].parse().map_err(|e| data_err(path, format!("row {}: k: {e}", i + 1)))?;
        if k != i + 1 {
            return Err(data_err(path, format!("row {}: expected k = {}, found {k}", i + 1, i + 1)));
        }
        rows.push(rec);
    }
    Ok((header, rows))
}

fn parse_f64(path: &Path, row: usize, field: &str) -> Result<f64> {
    field.parse().map_err(|e| data_err(path, format!("row {row}: '{field}': {e}")))
}

pub fn read_states(path: &Path) -> Result<Vec<[f64; 4]>> {
    let (_, rows) = read_table(path, Some(&["k", "x", "vx", "y", "vy"]))?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let mut s = [0.0; 4];
            for (j, v) in s.iter_mut().enumerate() {
                *v = parse_f64(path, i + 1, &r[j + 1])?;
            }
            Ok(s)
        })
        .collect()
}

pub fn read_truth(path: &Path) -> Result<Vec<TargetState>> {
    Ok(read_states(path)?.into_iter().map(TargetState).collect())
}

pub fn read_measurements(path: &Path) -> Result<Vec<Observation>> {
    let (_, rows) = read_table(path, Some(&["k", "bearing_deg", "range_m"]))?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let b = parse_f64(path, i + 1, &r[1])?;
            let range = parse_f64(path, i + 1, &r[2])?;
            Observation::new(i + 1, b.to_radians(), range).map_err(|e| data_err(path, format!("row {}: {e}", i + 1)))
        })
        .collect()
}

pub fn read_labels(path: &Path) -> Result<Vec<TruthLabel>> {
    let (_, rows) = read_table(path, Some(&["k", "label", "region"]))?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let situation = LABELS
                .iter()
                .position(|l| *l == &r[1])
                .ok_or_else(|| data_err(path, format!("row {}: unknown label '{}'", i + 1, &r[1])))?;
            let region = if r[2].is_empty() {
                None
            } else {
                Some(r[2].parse().map_err(|e| data_err(path, format!("row {}: region: {e}", i + 1)))?)
            };
            Ok(TruthLabel { situation, region })
        })
        .collect()
}

/// Returns the label columns and one probability row per step.
pub fn read_posteriors(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = read_table(path, None)?;
    let labels = header[1..].to_vec();
    let probs = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.len() != header.len() {
                return Err(data_err(path, format!("row {}: {} fields, expected {}", i + 1, r.len(), header.len())));
            }
            r.iter().skip(1).map(|f| parse_f64(path, i + 1, f)).collect()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok((labels, probs))
}
