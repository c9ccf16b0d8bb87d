//! Run configuration: a TOML key tree. Every section and key is optional;
//! unknown keys are rejected.

use std::path::Path;

use qpat::experiment::{Algorithm, GridSpec, Scenario, SetupSpec};
use qpat::grid::Side;
use qpat::optim_mull::{MullConfig, PenaltyWeights};
use qpat::optim_standard::{OptimConfig, StepSchedule};
use qpat::regularizers::DykstraConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Cells per side of the grid the data are simulated on.
    pub data_cells: usize,
    pub data_n_theta: usize,
    pub recon_cells: usize,
    pub recon_n_theta: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            data_cells: 50,
            data_n_theta: 32,
            recon_cells: 40,
            recon_n_theta: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    /// Henyey–Greenstein anisotropy g.
    pub anisotropy: f64,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        PhysicsSection { anisotropy: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub radius: f64,
    pub n_det: usize,
    /// Detector sampling step; half the reconstruction mesh size if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Recording time per illumination.
    pub horizon: f64,
    pub sides: Vec<String>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            radius: 1.8,
            n_det: 128,
            dt: None,
            t_max: 4.0,
            horizon: 4.0,
            sides: Side::ALL.iter().map(|s| s.name().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSection {
    pub name: String,
}

impl Default for PhantomSection {
    fn default() -> Self {
        PhantomSection {
            name: "standard".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    /// Standard deviation relative to the largest data value.
    pub level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub upper_mu_a: f64,
    pub upper_mu_s: f64,
    pub initial_mu_a: f64,
    pub initial_mu_s: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection {
            upper_mu_a: 3.0,
            upper_mu_s: 6.0,
            initial_mu_a: 0.3,
            initial_mu_s: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationSection {
    pub lambda: f64,
    /// Weight of the scattering Laplacian relative to the absorption one.
    pub scale_mu_s: f64,
}

impl Default for RegularizationSection {
    fn default() -> Self {
        RegularizationSection {
            lambda: 2e-8,
            scale_mu_s: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlgorithmSection {
    /// One of pg, prox-sgd, landweber, llk, mull-proj, mull-prox.
    pub name: String,
    /// 10 for the standard formulation, 1000 for the multilinear one if
    /// absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    pub step: f64,
    /// "constant" or "inverse-sqrt"
    pub step_rule: String,
    pub batch_size: usize,
    pub tau: f64,
    pub seed: u64,
    pub update_mu_s: bool,
}

impl Default for AlgorithmSection {
    fn default() -> Self {
        AlgorithmSection {
            name: "pg".into(),
            max_iter: None,
            step: 0.5,
            step_rule: "constant".into(),
            batch_size: 1,
            tau: 1.5,
            seed: 0,
            update_mu_s: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DykstraSection {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DykstraSection {
    fn default() -> Self {
        let d = DykstraConfig::default();
        DykstraSection {
            max_iter: d.max_iter,
            tol: d.tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MullSection {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub line_search: bool,
    pub inner_repeats: usize,
    pub dykstra_in_projected: bool,
    pub divergence_factor: f64,
}

impl Default for MullSection {
    fn default() -> Self {
        let m = MullConfig::default();
        MullSection {
            a1: m.weights.a1,
            a2: m.weights.a2,
            a3: m.weights.a3,
            line_search: m.line_search,
            inner_repeats: m.inner_repeats,
            dykstra_in_projected: m.dykstra_in_projected,
            divergence_factor: m.divergence_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Image export every this many iterations; 0 exports the final
    /// iterate only.
    pub checkpoint_every: usize,
    /// Record wall-clock times; with false every time is written as 0 so
    /// that reruns are byte-identical.
    pub wall_clock: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: None,
            checkpoint_every: 0,
            wall_clock: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    pub geometry: GeometrySection,
    pub phantom: PhantomSection,
    pub noise: NoiseSection,
    pub bounds: BoundsSection,
    pub regularization: RegularizationSection,
    pub algorithm: AlgorithmSection,
    pub dykstra: DykstraSection,
    pub mull: MullSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::io("reading config", path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fills every optional key with its effective value and checks the
    /// schema constraints.
    pub fn resolve(mut self) -> Result<Self> {
        let g = &self.grid;
        if g.recon_cells == 0 || g.data_cells == 0 {
            return Err(CliError::Config("grid cells must be positive".into()));
        }
        if self.geometry.dt.is_none() {
            self.geometry.dt = Some(1.0 / g.recon_cells as f64);
        }
        let alg = self.algorithm()?;
        if self.algorithm.max_iter.is_none() {
            self.algorithm.max_iter = Some(if alg.is_multilinear() { 1000 } else { 10 });
        }
        self.sides()?;
        self.step()?;
        if self.phantom.name != "standard" {
            return Err(CliError::Config(format!(
                "phantom.name: unknown phantom '{}' (available: standard)",
                self.phantom.name
            )));
        }
        self.scenario()?
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(self)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        Algorithm::parse(&self.algorithm.name).ok_or_else(|| {
            let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
            CliError::Config(format!(
                "algorithm.name: unknown algorithm '{}' (expected one of {})",
                self.algorithm.name,
                names.join(", ")
            ))
        })
    }

    pub fn sides(&self) -> Result<Vec<Side>> {
        if self.geometry.sides.is_empty() {
            return Err(CliError::Config(
                "geometry.sides: at least one side required".into(),
            ));
        }
        let mut out = Vec::new();
        for s in &self.geometry.sides {
            let side = Side::parse(s).ok_or_else(|| {
                CliError::Config(format!(
                    "geometry.sides: unknown side '{s}' (expected top, right, bottom, left)"
                ))
            })?;
            if out.contains(&side) {
                return Err(CliError::Config(format!(
                    "geometry.sides: '{s}' listed twice"
                )));
            }
            out.push(side);
        }
        Ok(out)
    }

    fn step(&self) -> Result<StepSchedule> {
        let s = self.algorithm.step;
        match self.algorithm.step_rule.as_str() {
            "constant" => Ok(StepSchedule::Constant(s)),
            "inverse-sqrt" => Ok(StepSchedule::InverseSqrt(s)),
            other => Err(CliError::Config(format!(
                "algorithm.step_rule: unknown rule '{other}' (expected constant, inverse-sqrt)"
            ))),
        }
    }

    pub fn setup(&self) -> Result<SetupSpec> {
        let g = &self.geometry;
        Ok(SetupSpec {
            anisotropy: self.physics.anisotropy,
            radius: g.radius,
            n_det: g.n_det,
            dt: g.dt.unwrap_or(1.0 / self.grid.recon_cells as f64),
            t_max: g.t_max,
            horizon: g.horizon,
            sides: self.sides()?,
        })
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let g = &self.grid;
        let a = &self.algorithm;
        let alg = self.algorithm()?;
        let dykstra = DykstraConfig {
            max_iter: self.dykstra.max_iter,
            tol: self.dykstra.tol,
        };
        let max_iter = a
            .max_iter
            .unwrap_or(if alg.is_multilinear() { 1000 } else { 10 });
        let m = &self.mull;
        Ok(Scenario {
            data_grid: GridSpec {
                cells: g.data_cells,
                n_theta: g.data_n_theta,
            },
            recon_grid: GridSpec {
                cells: g.recon_cells,
                n_theta: g.recon_n_theta,
            },
            setup: self.setup()?,
            noise_level: self.noise.level,
            noise_seed: self.noise.seed,
            upper_a: self.bounds.upper_mu_a,
            upper_s: self.bounds.upper_mu_s,
            reg_scale_s: self.regularization.scale_mu_s,
            initial: (self.bounds.initial_mu_a, self.bounds.initial_mu_s),
            algorithm: alg,
            optim: OptimConfig {
                lambda: self.regularization.lambda,
                step: self.step()?,
                max_iter,
                batch_size: a.batch_size,
                seed: a.seed,
                tau: a.tau,
                delta: Vec::new(),
                dykstra,
                update_mu_s: a.update_mu_s,
                checkpoint_every: self.output.checkpoint_every,
            },
            mull: MullConfig {
                weights: PenaltyWeights {
                    a1: m.a1,
                    a2: m.a2,
                    a3: m.a3,
                    lambda: self.regularization.lambda,
                },
                max_iter,
                seed: a.seed,
                line_search: m.line_search,
                step: a.step,
                inner_repeats: m.inner_repeats,
                dykstra,
                dykstra_in_projected: m.dykstra_in_projected,
                update_mu_s: a.update_mu_s,
                divergence_factor: m.divergence_factor,
                checkpoint_every: self.output.checkpoint_every,
            },
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}
