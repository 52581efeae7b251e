//! Artifact writers. Every file carries the schema version and the resolved
//! configuration so that it can be interpreted on its own.

use std::fs;
use std::io::Write;
use std::path::Path;

use boltzlab::solver::{DiagnosticsSeries, Snapshot};
use serde::Serialize;

use crate::config::RunConfig;

/// Bumped whenever a column or a JSON field changes meaning.
pub const SCHEMA_VERSION: &str = "boltzlab/1";

#[derive(Debug, Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub schema_version: &'static str,
    pub command: &'a str,
    pub config: &'a RunConfig,
    pub result: T,
}

pub fn envelope<'a, T: Serialize>(command: &'a str, config: &'a RunConfig, result: T) -> Envelope<'a, T> {
    Envelope {
        schema_version: SCHEMA_VERSION,
        command,
        config,
        result,
    }
}

pub fn write_json<T: Serialize>(path: &Path, command: &str, config: &RunConfig, result: T) -> std::io::Result<()> {
    let mut text = serde_json::to_string_pretty(&envelope(command, config, result))?;
    text.push('\n');
    fs::write(path, text)
}

/// One `#`-prefixed line per header entry, understood by the csv reader's
/// comment setting.
fn csv_preamble(command: &str, config: &RunConfig, extra: Option<String>) -> std::io::Result<String> {
    let mut head = format!("# schema_version={SCHEMA_VERSION}\n# command={command}\n");
    head.push_str(&format!("# config={}\n", serde_json::to_string(config)?));
    if let Some(extra) = extra {
        head.push_str(&format!("# {extra}\n"));
    }
    Ok(head)
}

fn fmt_pair(prefix: &str, a: f64, b: f64) -> String {
    format!("{prefix}_{a}_{b}")
}

/// Column names of the diagnostics file for a given configuration.
pub fn diagnostics_columns(config: &RunConfig) -> Vec<String> {
    let mut cols = vec!["time".to_string(), "mass".to_string()];
    cols.extend((0..config.kernel.dim).map(|k| format!("momentum_{k}")));
    cols.extend(["energy", "entropy", "dissipation", "fisher_information"].map(String::from));
    cols.extend(config.truncations.iter().map(|t| fmt_pair("phi", t[0], t[1])));
    cols.extend(
        config
            .solver
            .weighted_norms
            .iter()
            .map(|t| fmt_pair("norm", t[0], t[1])),
    );
    cols.extend(config.solver.moments.iter().map(|k| format!("moment_{k}")));
    cols.extend(["iterations", "residual", "clipped_mass", "min_value"].map(String::from));
    cols
}

pub fn write_diagnostics(path: &Path, config: &RunConfig, series: &DiagnosticsSeries) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(csv_preamble("simulate", config, None)?.as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(diagnostics_columns(config))?;
    for d in &series.records {
        let mut row = vec![d.time.to_string(), d.mass.to_string()];
        row.extend(d.momentum.iter().map(f64::to_string));
        row.push(d.energy.to_string());
        row.push(d.entropy.to_string());
        row.push(d.dissipation.map_or_else(String::new, |x| x.to_string()));
        row.push(d.fisher_information.to_string());
        row.extend(d.truncated_integrals.iter().map(f64::to_string));
        row.extend(d.weighted_norms.iter().map(f64::to_string));
        row.extend(d.moments.iter().map(f64::to_string));
        row.push(d.iterations.to_string());
        row.push(d.residual.to_string());
        row.push(d.clipped_mass.to_string());
        row.push(d.min_value.to_string());
        w.write_record(&row)?;
    }
    w.flush()
}

#[derive(Serialize)]
struct SnapshotHeader<'a> {
    time: f64,
    dim: usize,
    half_width: f64,
    points: usize,
    kernel: &'a crate::config::KernelSection,
}

/// Node values as CSV with a one-line JSON header.
pub fn write_snapshot(path: &Path, config: &RunConfig, snap: &Snapshot) -> std::io::Result<()> {
    let g = snap.density.grid();
    let header = SnapshotHeader {
        time: snap.time,
        dim: g.dim(),
        half_width: g.half_width(),
        points: g.points_per_axis(),
        kernel: &config.kernel,
    };
    let mut file = fs::File::create(path)?;
    let extra = format!("header={}", serde_json::to_string(&header)?);
    file.write_all(csv_preamble("simulate", config, Some(extra))?.as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    let mut cols = vec!["index".to_string()];
    cols.extend((0..g.dim()).map(|k| format!("v{k}")));
    cols.push("f".to_string());
    w.write_record(&cols)?;
    for (i, (node, value)) in g.nodes().zip(snap.density.values()).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(node[..g.dim()].iter().map(f64::to_string));
        row.push(value.to_string());
        w.write_record(&row)?;
    }
    w.flush()
}

/// Reads a two-column `time,phi_integral` series; `#` lines are skipped.
pub fn read_series(path: &Path) -> Result<(Vec<f64>, Vec<f64>), String> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let field = |i: usize| -> Result<f64, String> {
            record
                .get(i)
                .ok_or_else(|| format!("row {}: missing column {i}", k + 1))?
                .parse::<f64>()
                .map_err(|e| format!("row {}: {e}", k + 1))
        };
        times.push(field(0)?);
        values.push(field(1)?);
    }
    Ok((times, values))
}

pub fn write_series(path: &Path, config: &RunConfig, times: &[f64], values: &[f64]) -> std::io::Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(csv_preamble("detect-singular", config, None)?.as_bytes())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["time", "phi_integral"])?;
    for (t, v) in times.iter().zip(values) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let t = [0.0, 0.1, 0.2];
        let v = [1.0, 2.5e-3, 1.0 / 3.0];
        write_series(&path, &RunConfig::default(), &t, &v).unwrap();
        assert_eq!(read_series(&path).unwrap(), (t.to_vec(), v.to_vec()));
    }

    #[test]
    fn columns_follow_the_configuration() {
        let mut cfg = RunConfig::default();
        cfg.solver.weighted_norms = vec![[2.0, 1.0]];
        let cols = diagnostics_columns(&cfg);
        assert_eq!(cols[..4], ["time", "mass", "momentum_0", "momentum_1"]);
        assert!(cols.contains(&"phi_1.5_1".to_string()));
        assert!(cols.contains(&"norm_2_1".to_string()));
        assert_eq!(cols.last().unwrap(), "min_value");
    }
}
