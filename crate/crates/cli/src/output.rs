//! CSV tables and the run manifest.
//!
//! Every table has a one-line header. Numbers use Rust's shortest
//! round-trip formatting, so equal values always print to equal bytes.

use std::fs;
use std::path::Path;

use qni_core::ensemble::WindowObservables;
use qni_core::Estimate;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const OBSERVABLE_COLUMNS: [&str; 12] = [
    "t_ps", "nA", "nB", "nS1", "nS2", "V", "V_err", "V_clamped", "nA_se", "nB_se", "nS1_se", "nS2_se",
];

/// Columns that follow the parameter column(s) in sweep tables.
pub const SWEEP_COLUMNS: [&str; 13] = [
    "nA", "nB", "nS1", "nS2", "V", "V_err", "V_clamped", "V_peak", "V_peak_err", "nA_se", "nB_se", "nS1_se", "nS2_se",
];

fn num(x: f64) -> String {
    x.to_string()
}

fn table(header: Vec<String>, rows: Vec<Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| CliError::io("<csv buffer>", e.into_error()))
}

/// Time-resolved observables of one detector window size.
pub fn observables_csv(obs: &WindowObservables) -> CliResult<Vec<u8>> {
    let rows = (0..obs.t_ps.len())
        .map(|i| {
            vec![
                num(obs.t_ps[i]),
                num(obs.n_a[i].mean),
                num(obs.n_b[i].mean),
                num(obs.n_s1[i].mean),
                num(obs.n_s2[i].mean),
                num(obs.v[i]),
                num(obs.v_err[i]),
                num(obs.v_clamped[i]),
                num(obs.n_a[i].se),
                num(obs.n_b[i].se),
                num(obs.n_s1[i].se),
                num(obs.n_s2[i].se),
            ]
        })
        .collect();
    table(OBSERVABLE_COLUMNS.iter().map(|s| s.to_string()).collect(), rows)
}

/// Aggregate columns of [`SWEEP_COLUMNS`] for one window size.
pub fn summary_fields(obs: &WindowObservables) -> Vec<String> {
    let a = &obs.aggregate;
    let (peak, peak_err) = obs.peak().unwrap_or((f64::NAN, f64::NAN));
    let e = |x: &Estimate| num(x.mean);
    vec![
        e(&a.n_a),
        e(&a.n_b),
        e(&a.n_s1),
        e(&a.n_s2),
        num(a.v),
        num(a.v_err),
        num(a.v.clamp(0.0, 1.0)),
        num(peak),
        num(peak_err),
        num(a.n_a.se),
        num(a.n_b.se),
        num(a.n_s1.se),
        num(a.n_s2.se),
    ]
}

/// One row per window size.
pub fn summary_csv(all: &[WindowObservables]) -> CliResult<Vec<u8>> {
    let mut header = vec!["avg_bins".to_string()];
    header.extend(SWEEP_COLUMNS.iter().map(|s| s.to_string()));
    let rows = all
        .iter()
        .map(|o| {
            let mut r = vec![o.avg_bins.to_string()];
            r.extend(summary_fields(o));
            r
        })
        .collect();
    table(header, rows)
}

/// One row per sweep point.
pub fn sweep_csv(parameter: &str, points: &[(f64, WindowObservables)]) -> CliResult<Vec<u8>> {
    let mut header = vec![parameter.to_string()];
    header.extend(SWEEP_COLUMNS.iter().map(|s| s.to_string()));
    let rows = points
        .iter()
        .map(|(v, o)| {
            let mut r = vec![num(*v)];
            r.extend(summary_fields(o));
            r
        })
        .collect();
    table(header, rows)
}

/// Time series of every sweep point, stacked.
pub fn sweep_series_csv(parameter: &str, points: &[(f64, WindowObservables)]) -> CliResult<Vec<u8>> {
    let mut header = vec![parameter.to_string()];
    header.extend(OBSERVABLE_COLUMNS.iter().map(|s| s.to_string()));
    let mut rows = Vec::new();
    for (v, obs) in points {
        for i in 0..obs.t_ps.len() {
            rows.push(vec![
                num(*v),
                num(obs.t_ps[i]),
                num(obs.n_a[i].mean),
                num(obs.n_b[i].mean),
                num(obs.n_s1[i].mean),
                num(obs.n_s2[i].mean),
                num(obs.v[i]),
                num(obs.v_err[i]),
                num(obs.v_clamped[i]),
                num(obs.n_a[i].se),
                num(obs.n_b[i].se),
                num(obs.n_s1[i].se),
                num(obs.n_s2[i].se),
            ]);
        }
    }
    table(header, rows)
}

/// A row of the estimator table.
pub struct EstimateRow<'a> {
    /// `reference` or `target`.
    pub point: &'a str,
    pub value: f64,
    /// `naive` or `corrected`.
    pub estimator: &'a str,
    pub obs: &'a WindowObservables,
}

pub fn estimate_csv(parameter: &str, rows: &[EstimateRow<'_>]) -> CliResult<Vec<u8>> {
    let mut header = vec!["point".to_string(), parameter.to_string(), "estimator".to_string()];
    header.extend(SWEEP_COLUMNS.iter().map(|s| s.to_string()));
    let body = rows
        .iter()
        .map(|r| {
            let mut out = vec![r.point.to_string(), num(r.value), r.estimator.to_string()];
            out.extend(summary_fields(r.obs));
            out
        })
        .collect();
    table(header, body)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Serialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
}

/// Everything needed to regenerate a run's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub background_seed: Option<u64>,
    pub workers: usize,
    pub wall_time_s: f64,
    pub config_sha256: String,
    pub files: Vec<OutputFile>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    /// Full scenario echo; the estimator stores its target file under `targets`.
    pub config: toml::Value,
    pub targets: Option<toml::Value>,
}

impl Manifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

pub fn version_string() -> String {
    format!("qni {}", env!("CARGO_PKG_VERSION"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn table_has_one_header_line() {
        let bytes = table(vec!["a".into(), "b".into()], vec![vec![num(0.1), num(2.0)]]).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "a,b\n0.1,2\n");
    }
}
