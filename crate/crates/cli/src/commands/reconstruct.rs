use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use qpat::acoustic::PressureData;
use qpat::experiment::{RunReport, Simulated};
use serde::{Deserialize, Serialize};

use super::simulate::{
    create_dir, data_file_name, write_config, NoiseRecord, CONFIG_FILE, NOISE_FILE,
};
use crate::arrayfile::ArrayFile;
use crate::config::RunConfig;
use crate::digest::{write_json, Manifest};
use crate::error::{CliError, Result};
use crate::pgm::{write_nodal, GrayScale};
use crate::tracefile;

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "trace.csv";

/// Headline numbers of one reconstruction run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: String,
    pub iterations: usize,
    pub stopped_early: bool,
    pub noise_level: f64,
    pub initial_rel_err_mu_a: f64,
    pub final_rel_err_mu_a: f64,
    pub final_rel_err_mu_s: f64,
    /// Work of the whole run, including a warm start.
    pub rte_solves: u64,
    pub adjoint_solves: u64,
    pub apply_m: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_s: Option<f64>,
}

/// Acquisition settings that data and reconstruction must share.
fn acquisition(cfg: &RunConfig) -> String {
    let g = &cfg.geometry;
    format!(
        "{} detectors on R={} sampled every {} up to t={} (recorded for {}), sides {}",
        g.n_det,
        g.radius,
        g.dt.unwrap_or(f64::NAN),
        g.t_max,
        g.horizon,
        g.sides.join(",")
    )
}

fn grids(cfg: &RunConfig) -> String {
    let g = &cfg.grid;
    format!(
        "data grid {}²×{}, reconstruction grid {}²×{}",
        g.data_cells + 1,
        g.data_n_theta,
        g.recon_cells + 1,
        g.recon_n_theta
    )
}

fn mismatch(data_cfg: &RunConfig, cfg: &RunConfig, what: &str) -> CliError {
    CliError::Config(format!(
        "grid mismatch ({what}):\n  data:           {}; {}\n  reconstruction: {}; {}",
        acquisition(data_cfg),
        grids(data_cfg),
        acquisition(cfg),
        grids(cfg)
    ))
}

/// Data set read from a simulation directory.
pub struct Inputs {
    pub config: RunConfig,
    pub files: Vec<PathBuf>,
    pub sim: Simulated,
}

/// Reads and checks everything in `data_dir` before any computation.
pub fn load_inputs(cfg: &RunConfig, data_dir: &Path) -> Result<Inputs> {
    if !data_dir.is_dir() {
        return Err(CliError::Usage(format!(
            "data directory {} does not exist",
            data_dir.display()
        )));
    }
    let cfg_path = data_dir.join(CONFIG_FILE);
    let noise_path = data_dir.join(NOISE_FILE);
    for p in [&cfg_path, &noise_path] {
        if !p.is_file() {
            return Err(CliError::Usage(format!(
                "missing data file {}",
                p.display()
            )));
        }
    }
    let data_cfg = RunConfig::load(&cfg_path)?.resolve()?;
    let sides = data_cfg.sides()?;
    let files: Vec<PathBuf> = sides
        .iter()
        .enumerate()
        .map(|(i, s)| data_dir.join(data_file_name(i, *s)))
        .collect();
    if let Some(missing) = files.iter().find(|p| !p.is_file()) {
        return Err(CliError::Usage(format!(
            "missing data file {}",
            missing.display()
        )));
    }
    let noise = NoiseRecord::read(data_dir)?;
    if noise.delta.len() != files.len() {
        return Err(CliError::Usage(format!(
            "{}: {} noise estimates for {} data files",
            noise_path.display(),
            noise.delta.len(),
            files.len()
        )));
    }

    if acquisition(&data_cfg) != acquisition(cfg) {
        return Err(mismatch(&data_cfg, cfg, "acquisition differs"));
    }
    if data_cfg.grid.data_cells <= cfg.grid.recon_cells {
        return Err(mismatch(
            &data_cfg,
            cfg,
            "data must come from a finer grid than the reconstruction",
        ));
    }
    let geo = cfg
        .setup()?
        .geometry()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut data = Vec::with_capacity(files.len());
    for f in &files {
        let a = ArrayFile::read(f)?;
        if a.dims != [geo.n_det(), geo.n_times] {
            return Err(mismatch(
                &data_cfg,
                cfg,
                &format!(
                    "{} has shape {:?}, expected [{}, {}]",
                    f.display(),
                    a.dims,
                    geo.n_det(),
                    geo.n_times
                ),
            ));
        }
        data.push(PressureData {
            n_det: a.dims[0],
            n_times: a.dims[1],
            values: a.values,
        });
    }
    Ok(Inputs {
        config: data_cfg,
        files,
        sim: Simulated {
            data,
            sigma: noise.sigma,
            delta: noise.delta,
        },
    })
}

pub fn run(cfg: &RunConfig, data_dir: &Path, out: &Path) -> Result<Summary> {
    let inputs = load_inputs(cfg, data_dir)?;
    // the data directory, not the reconstruction config, decides how the
    // data were made
    let mut cfg = cfg.clone();
    cfg.grid.data_cells = inputs.config.grid.data_cells;
    cfg.grid.data_n_theta = inputs.config.grid.data_n_theta;
    cfg.noise = inputs.config.noise.clone();
    cfg.phantom = inputs.config.phantom.clone();
    let cfg = &cfg;
    let scenario = cfg.scenario()?;
    let model = scenario
        .recon_model()
        .map_err(CliError::numerical("building reconstruction model"))?;
    let report = scenario
        .reconstruct(&model, &inputs.sim)
        .map_err(CliError::numerical("reconstruct"))?;
    create_dir(out)?;
    let n_side = model.transport.mesh.n_side;
    write_outputs(cfg, &inputs, &report, n_side, out)
}

fn write_outputs(
    cfg: &RunConfig,
    inputs: &Inputs,
    report: &RunReport,
    n_side: usize,
    out: &Path,
) -> Result<Summary> {
    let wall = cfg.output.wall_clock;
    let mut names = vec!["mu_a.qarr".to_string(), "mu_s.qarr".to_string()];
    ArrayFile::new(vec![n_side, n_side], report.mu.mu_a.clone())?.write(&out.join(&names[0]))?;
    ArrayFile::new(vec![n_side, n_side], report.mu.mu_s.clone())?.write(&out.join(&names[1]))?;

    tracefile::write(&out.join(TRACE_FILE), &tracefile::rows(&report.trace, wall))?;
    names.push(TRACE_FILE.into());

    let images = out.join("images");
    create_dir(&images)?;
    let mut scales: BTreeMap<String, GrayScale> = BTreeMap::new();
    for snap in &report.trace.snapshots {
        let name = format!("images/mu_a_{:06}.pgm", snap.iter);
        scales.insert(
            name.clone(),
            write_nodal(&out.join(&name), n_side, &snap.mu.mu_a)?,
        );
        names.push(name);
    }
    let name = "images/mu_a_final.pgm".to_string();
    scales.insert(
        name.clone(),
        write_nodal(&out.join(&name), n_side, &report.mu.mu_a)?,
    );
    names.push(name);
    write_json(&out.join("images.json"), &scales)?;
    names.push("images.json".into());

    let summary = Summary {
        algorithm: cfg.algorithm.name.clone(),
        iterations: report.trace.len(),
        stopped_early: report.stopped_early,
        noise_level: inputs.config.noise.level,
        initial_rel_err_mu_a: report.initial_error,
        final_rel_err_mu_a: report.final_error,
        final_rel_err_mu_s: qpat::experiment::relative_error(
            &report.mu.mu_s,
            &report.truth.mu_s,
            &report.mass,
        ),
        rte_solves: report.counters.rte_solves,
        adjoint_solves: report.counters.adjoint_solves,
        apply_m: report.counters.apply_m,
        wall_s: wall.then_some(report.wall_s),
    };
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    names.push(SUMMARY_FILE.into());
    write_config(out, cfg)?;
    names.push(CONFIG_FILE.into());

    let mut manifest = Manifest::new("reconstruct");
    for f in &inputs.files {
        let label = f.file_name().unwrap().to_string_lossy().into_owned();
        manifest.add_input(label, f)?;
    }
    let data_dir = inputs.files[0].parent().unwrap_or(Path::new("."));
    manifest.add_input(format!("data/{CONFIG_FILE}"), &data_dir.join(CONFIG_FILE))?;
    manifest.add_input(format!("data/{NOISE_FILE}"), &data_dir.join(NOISE_FILE))?;
    manifest.add_outputs(out, &names)?;
    manifest.write(out)?;
    Ok(summary)
}
