//! Per-iteration trace as CSV.

use std::path::Path;

use qpat::trace::IterateTrace;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// Illumination indices separated by `;`.
    pub picked_i: String,
    pub picked_l: Option<usize>,
    pub objective: f64,
    pub fidelity: f64,
    pub penalty: f64,
    pub rel_err_mu_a: f64,
    pub rel_err_mu_s: f64,
    pub rte_solves: u64,
    #[serde(rename = "applyM_count")]
    pub apply_m_count: u64,
    pub wall_s: f64,
}

pub fn rows(trace: &IterateTrace, wall_clock: bool) -> Vec<TraceRow> {
    trace
        .records
        .iter()
        .map(|r| TraceRow {
            iter: r.iter,
            picked_i: r
                .picked_i
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            picked_l: r.picked_l,
            objective: r.objective,
            fidelity: r.fidelity,
            penalty: r.penalty,
            rel_err_mu_a: r.rel_err_mu_a,
            rel_err_mu_s: r.rel_err_mu_s,
            rte_solves: r.rte_solves,
            apply_m_count: r.apply_m,
            wall_s: if wall_clock { r.wall_s } else { 0.0 },
        })
        .collect()
}

pub fn write(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    if rows.is_empty() {
        w.write_record([
            "iter",
            "picked_i",
            "picked_l",
            "objective",
            "fidelity",
            "penalty",
            "rel_err_mu_a",
            "rel_err_mu_s",
            "rte_solves",
            "applyM_count",
            "wall_s",
        ])
        .map_err(err)?;
    }
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush()
        .map_err(|e| CliError::io("writing trace", path, e))
}

pub fn read(path: &Path) -> Result<Vec<TraceRow>> {
    let err = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().map(|row| row.map_err(err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let rows = vec![TraceRow {
            iter: 3,
            picked_i: "0;2".into(),
            picked_l: Some(4),
            objective: 0.1 + 0.2,
            fidelity: 1e-300,
            penalty: f64::NAN,
            rel_err_mu_a: 0.5,
            rel_err_mu_s: 0.0,
            rte_solves: 8,
            apply_m_count: 17,
            wall_s: 1.25,
        }];
        write(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            "iter,picked_i,picked_l,objective,fidelity,penalty,rel_err_mu_a,rel_err_mu_s,rte_solves,applyM_count,wall_s\n"
        ));
        let back = read(&path).unwrap();
        assert_eq!(back[0].objective.to_bits(), rows[0].objective.to_bits());
        assert!(back[0].penalty.is_nan());
        assert_eq!(back[0].picked_l, Some(4));
        write(&path, &[]).unwrap();
        assert!(read(&path).unwrap().is_empty());
    }
}
