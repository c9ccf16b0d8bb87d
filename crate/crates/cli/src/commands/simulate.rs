use std::path::Path;

use qpat::grid::Side;
use serde::{Deserialize, Serialize};

use crate::arrayfile::ArrayFile;
use crate::config::RunConfig;
use crate::digest::{read_json, write_json, Manifest};
use crate::error::{CliError, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const NOISE_FILE: &str = "noise.json";

pub fn data_file_name(index: usize, side: Side) -> String {
    format!("data_{index}_{}.qarr", side.name())
}

/// Noise actually added to the simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub level: f64,
    pub seed: u64,
    /// Standard deviation, `level · max|v|`.
    pub sigma: f64,
    /// Expected noise norm per illumination in the data norm.
    pub delta: Vec<f64>,
}

impl NoiseRecord {
    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(NOISE_FILE))
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io("creating output directory", dir, e))
}

/// Writes the resolved configuration without its output location, so that
/// the same run written elsewhere produces identical bytes.
pub fn write_config(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let path = dir.join(CONFIG_FILE);
    let mut cfg = cfg.clone();
    cfg.output.dir = None;
    std::fs::write(&path, cfg.to_toml()).map_err(|e| CliError::io("writing config", &path, e))
}

/// Simulates phantom data on the data grid and writes one array per
/// illumination (`n_det × n_times`), the noise record and the resolved
/// configuration. Returns the written file names.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<Vec<String>> {
    let scenario = cfg.scenario()?;
    let sim = scenario
        .simulate()
        .map_err(CliError::numerical("simulate"))?;
    create_dir(out)?;
    let mut names = Vec::new();
    for (i, (d, side)) in sim.data.iter().zip(&scenario.setup.sides).enumerate() {
        let name = data_file_name(i, *side);
        ArrayFile::new(vec![d.n_det, d.n_times], d.values.clone())?.write(&out.join(&name))?;
        names.push(name);
    }
    let noise = NoiseRecord {
        level: cfg.noise.level,
        seed: cfg.noise.seed,
        sigma: sim.sigma,
        delta: sim.delta,
    };
    write_json(&out.join(NOISE_FILE), &noise)?;
    write_config(out, cfg)?;
    names.push(NOISE_FILE.into());
    names.push(CONFIG_FILE.into());
    let mut manifest = Manifest::new("simulate");
    manifest.add_outputs(out, &names)?;
    manifest.write(out)?;
    Ok(names)
}
