use std::path::{Path, PathBuf};

use serde::Serialize;

use super::reconstruct::{Summary, SUMMARY_FILE, TRACE_FILE};
use crate::digest::read_json;
use crate::error::{CliError, Result};
use crate::pgm::plot_curves;
use crate::tracefile::{self, TraceRow};

/// One completed run found under the report directory.
pub struct Run {
    pub label: String,
    pub summary: Summary,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    run: &'a str,
    algorithm: &'a str,
    iterations: usize,
    stopped_early: bool,
    noise_level: f64,
    initial_rel_err_mu_a: f64,
    final_rel_err_mu_a: f64,
    final_rel_err_mu_s: f64,
    rte_solves: u64,
    adjoint_solves: u64,
    apply_m: u64,
    wall_s: Option<f64>,
    wall_s_per_iter: Option<f64>,
}

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    run: &'a str,
    iter: usize,
    rel_err_mu_a: f64,
    rel_err_mu_s: f64,
    objective: f64,
}

/// Outcome of a report: complete runs and warnings about skipped ones.
pub struct Report {
    pub runs: Vec<Run>,
    pub warnings: Vec<String>,
}

fn candidates(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = vec![dir.to_path_buf()];
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io("scanning", dir, e))?;
    let mut subs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subs.sort();
    out.extend(subs);
    Ok(out)
}

/// Collects runs from `dir` and its immediate subdirectories.
pub fn collect(dir: &Path) -> Result<Report> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let mut runs = Vec::new();
    let mut warnings = Vec::new();
    for d in candidates(dir)? {
        let (s, t) = (d.join(SUMMARY_FILE), d.join(TRACE_FILE));
        match (s.is_file(), t.is_file()) {
            (false, false) => continue,
            (true, true) => {}
            _ => {
                warnings.push(format!(
                    "{}: incomplete run (needs both {SUMMARY_FILE} and {TRACE_FILE}), skipped",
                    d.display()
                ));
                continue;
            }
        }
        let loaded =
            read_json::<Summary>(&s).and_then(|summary| Ok((summary, tracefile::read(&t)?)));
        match loaded {
            Ok((summary, trace)) => {
                let label = if d == dir {
                    ".".to_string()
                } else {
                    d.file_name().unwrap().to_string_lossy().into_owned()
                };
                runs.push(Run {
                    label,
                    summary,
                    trace,
                });
            }
            Err(e) => warnings.push(format!("{}: unreadable run ({e}), skipped", d.display())),
        }
    }
    if runs.is_empty() {
        warnings.push(format!("{}: no runs found", dir.display()));
    }
    Ok(Report { runs, warnings })
}

fn per_iter(s: &Summary) -> Option<f64> {
    s.wall_s
        .filter(|_| s.iterations > 0)
        .map(|w| w / s.iterations as f64)
}

/// Writes summary.csv, curves.csv and error_curves.pgm into `out`.
/// With two or more runs, a final `cost_ratio` row gives each run's
/// per-iteration cost relative to the first run.
pub fn write(report: &Report, out: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io("creating output directory", out, e))?;
    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |e: csv::Error| CliError::Usage(format!("{}: {e}", p.display()))
    };

    let path = out.join("summary.csv");
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(csv_err(&path))?;
    w.write_record([
        "run",
        "algorithm",
        "iterations",
        "stopped_early",
        "noise_level",
        "initial_rel_err_mu_a",
        "final_rel_err_mu_a",
        "final_rel_err_mu_s",
        "rte_solves",
        "adjoint_solves",
        "apply_m",
        "wall_s",
        "wall_s_per_iter",
    ])
    .map_err(csv_err(&path))?;
    for r in &report.runs {
        let s = &r.summary;
        w.serialize(SummaryRow {
            run: &r.label,
            algorithm: &s.algorithm,
            iterations: s.iterations,
            stopped_early: s.stopped_early,
            noise_level: s.noise_level,
            initial_rel_err_mu_a: s.initial_rel_err_mu_a,
            final_rel_err_mu_a: s.final_rel_err_mu_a,
            final_rel_err_mu_s: s.final_rel_err_mu_s,
            rte_solves: s.rte_solves,
            adjoint_solves: s.adjoint_solves,
            apply_m: s.apply_m,
            wall_s: s.wall_s,
            wall_s_per_iter: per_iter(s),
        })
        .map_err(csv_err(&path))?;
    }
    if report.runs.len() >= 2 {
        let base = per_iter(&report.runs[0].summary);
        let ratios: Vec<String> = report
            .runs
            .iter()
            .map(|r| match (per_iter(&r.summary), base) {
                (Some(x), Some(b)) if b > 0.0 => format!("{}", x / b),
                _ => String::new(),
            })
            .collect();
        w.write_record(
            [
                "cost_ratio".to_string(),
                format!("per-iteration time vs {}", report.runs[0].label),
            ]
            .into_iter()
            .chain(std::iter::repeat_n(String::new(), 10))
            .chain([ratios.join(";")]),
        )
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| CliError::io("writing", &path, e))?;

    let path = out.join("curves.csv");
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(csv_err(&path))?;
    w.write_record(["run", "iter", "rel_err_mu_a", "rel_err_mu_s", "objective"])
        .map_err(csv_err(&path))?;
    for r in &report.runs {
        for t in &r.trace {
            w.serialize(CurveRow {
                run: &r.label,
                iter: t.iter,
                rel_err_mu_a: t.rel_err_mu_a,
                rel_err_mu_s: t.rel_err_mu_s,
                objective: t.objective,
            })
            .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| CliError::io("writing", &path, e))?;

    let curves: Vec<Vec<(f64, f64)>> = report
        .runs
        .iter()
        .map(|r| {
            r.trace
                .iter()
                .map(|t| (t.iter as f64, t.rel_err_mu_a))
                .collect()
        })
        .collect();
    let path = out.join("error_curves.pgm");
    std::fs::write(&path, plot_curves(480, 320, &curves))
        .map_err(|e| CliError::io("writing image", &path, e))?;
    Ok(vec![
        "summary.csv".into(),
        "curves.csv".into(),
        "error_curves.pgm".into(),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_gives_warning_and_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let report = collect(dir.path()).unwrap();
        assert!(report.runs.is_empty());
        assert_eq!(report.warnings.len(), 1);
        write(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(text.lines().count(), 1);
    }

    #[test]
    fn incomplete_run_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("a");
        std::fs::create_dir(&sub).unwrap();
        std::fs::write(sub.join(TRACE_FILE), "iter\n").unwrap();
        let report = collect(dir.path()).unwrap();
        assert!(report.runs.is_empty());
        assert!(report.warnings[0].contains("incomplete"));
    }
}
