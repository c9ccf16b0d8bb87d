//! Test phantom, illumination protocol, data simulation and error metrics.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::acoustic::{DataMask, DetectorGeometry, PressureData, WaveOperator};
use crate::counters::CounterSnapshot;
use crate::error::{check_len, QpatError, Result};
use crate::field::{ParameterPair, SourcePair};
use crate::forward::{ForwardModel, Illumination};
use crate::grid::{AngularGrid, Side, SpatialMesh};
use crate::linalg::wdot;
use crate::optim_mull::{init_state, mull_projected_sgd, mull_proximal_sgd, InitMode, MullConfig};
use crate::optim_standard::{
    loping_landweber_kaczmarz, projected_landweber, proximal_gradient,
    proximal_stochastic_gradient, OptimConfig, OptimResult, Problem,
};
use crate::regularizers::{FeasibleSet, RegOperator};
use crate::rte::TransportOperator;
use crate::scattering::ScatteringKernel;
use crate::trace::IterateTrace;

pub const BACKGROUND_MU_A: f64 = 0.3;
pub const DISK_MU_A: f64 = 1.0;
pub const STRIPE_MU_A: f64 = 2.0;
pub const GAP_MU_A: f64 = 0.5;
pub const PHANTOM_MU_S: f64 = 3.0;

/// Absorption phantom: two disks below the center and three horizontal
/// stripes above it, embedded in a homogeneous scattering background.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub mu: ParameterPair,
    /// (center, radius)
    pub disks: Vec<([f64; 2], f64)>,
    /// `[x_min, x_max, y_min, y_max]`
    pub stripes: Vec<[f64; 4]>,
    /// Region between the stripes.
    pub gap: [f64; 4],
}

impl Phantom {
    pub fn standard() -> Self {
        let disks = vec![([-0.45, -0.35], 0.25), ([0.45, -0.35], 0.25)];
        let half = 0.06;
        let stripes = [0.21, 0.45, 0.69]
            .iter()
            .map(|&y| [-0.7, 0.7, y - half, y + half])
            .collect();
        Phantom {
            mu: ParameterPair::new(Vec::new(), Vec::new()),
            disks,
            stripes,
            gap: [-0.7, 0.7, 0.15, 0.75],
        }
    }

    pub fn mu_a_at(&self, x: [f64; 2]) -> f64 {
        let inside = |r: &[f64; 4]| x[0] >= r[0] && x[0] <= r[1] && x[1] >= r[2] && x[1] <= r[3];
        if self.stripes.iter().any(inside) {
            return STRIPE_MU_A;
        }
        if inside(&self.gap) {
            return GAP_MU_A;
        }
        for (c, r) in &self.disks {
            if (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) <= r * r {
                return DISK_MU_A;
            }
        }
        BACKGROUND_MU_A
    }

    /// Nodal rasterization on `mesh`.
    pub fn on_mesh(mesh: &SpatialMesh) -> Self {
        let mut p = Phantom::standard();
        let mu_a = mesh.interpolate(|x| p.mu_a_at(x));
        let mu_s = vec![PHANTOM_MU_S; mesh.num_nodes()];
        p.mu = ParameterPair::new(mu_a, mu_s);
        p
    }
}

/// Boundary source `δ(θ−θ_i)χ_i` on one side: weight `1/w` on the angular
/// node closest to the inward normal, at every node of the side.
pub fn side_source(mesh: &SpatialMesh, angles: &AngularGrid, side: Side) -> SourcePair {
    let n = mesh.num_nodes();
    let mut q = SourcePair::zeros(n, angles.len());
    let nu = side.normal();
    let j = angles.nearest([-nu[0], -nu[1]]);
    for p in 0..n {
        if mesh.side_tags[p].contains(&side) {
            q.boundary.set(p, j, 1.0 / angles.weight);
        }
    }
    q
}

pub fn build_illuminations(
    mesh: &SpatialMesh,
    angles: &AngularGrid,
    geometry: &DetectorGeometry,
    sides: &[Side],
    horizon: f64,
) -> Result<Vec<Illumination>> {
    if sides.is_empty() {
        return Err(QpatError::Config(
            "at least one illuminated side required".into(),
        ));
    }
    Ok(sides
        .iter()
        .enumerate()
        .map(|(index, &side)| {
            let detectors = geometry.arc(side);
            let mask = DataMask::new(geometry, &detectors, horizon);
            Illumination {
                index,
                side,
                source: side_source(mesh, angles, side),
                detectors,
                horizon,
                mask,
            }
        })
        .collect())
}

/// Spatial/angular resolution of one discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cells: usize,
    pub n_theta: usize,
}

impl GridSpec {
    pub fn h(&self) -> f64 {
        2.0 / self.cells as f64
    }
}

/// Physical and acquisition settings shared by data and reconstruction.
#[derive(Debug, Clone)]
pub struct SetupSpec {
    pub anisotropy: f64,
    pub radius: f64,
    pub n_det: usize,
    pub dt: f64,
    pub t_max: f64,
    pub horizon: f64,
    pub sides: Vec<Side>,
}

impl SetupSpec {
    /// Desk defaults for a reconstruction grid with `cells` cells per side.
    pub fn desk(recon_cells: usize) -> Self {
        SetupSpec {
            anisotropy: 0.5,
            radius: 1.8,
            n_det: 128,
            dt: 1.0 / recon_cells as f64,
            t_max: 4.0,
            horizon: 4.0,
            sides: Side::ALL.to_vec(),
        }
    }

    pub fn geometry(&self) -> Result<DetectorGeometry> {
        DetectorGeometry::new(self.radius, self.n_det, self.dt, self.t_max)
    }
}

/// Builds the forward model on one grid.
pub fn build_model(grid: GridSpec, setup: &SetupSpec) -> Result<ForwardModel> {
    if grid.cells == 0 {
        return Err(QpatError::InvalidMeshSize { h: f64::INFINITY });
    }
    let mesh = Arc::new(SpatialMesh::with_cells(grid.cells));
    let angles = Arc::new(AngularGrid::new(grid.n_theta)?);
    let kernel = Arc::new(ScatteringKernel::new(&angles, setup.anisotropy)?);
    let h = mesh.h;
    let transport = Arc::new(TransportOperator::new(
        Arc::clone(&mesh),
        Arc::clone(&angles),
        kernel,
        h,
    )?);
    let geometry = setup.geometry()?;
    let illum = build_illuminations(&mesh, &angles, &geometry, &setup.sides, setup.horizon)?;
    let wave = Arc::new(WaveOperator::new(mesh, geometry)?);
    ForwardModel::new(transport, wave, illum)
}

/// Noise-free data `F_i(μ)` for every illumination.
pub fn simulate_data(model: &ForwardModel, mu: &ParameterPair) -> Result<Vec<PressureData>> {
    (0..model.len()).map(|i| model.forward(mu, i)).collect()
}

/// Adds white Gaussian noise with standard deviation `level · max|v|`, the
/// maximum taken over all data sets, on the active samples of each mask.
/// Returns the standard deviation used.
pub fn add_noise(
    data: &mut [PressureData],
    masks: &[&DataMask],
    level: f64,
    seed: u64,
) -> Result<f64> {
    check_len("noise masks", data.len(), masks.len())?;
    if level < 0.0 || !level.is_finite() {
        return Err(QpatError::Config(format!(
            "noise level must be ≥ 0, got {level}"
        )));
    }
    let vmax = data
        .iter()
        .flat_map(|d| d.values.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let sigma = level * vmax;
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| QpatError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (d, m) in data.iter_mut().zip(masks) {
        for (x, &a) in d.values.iter_mut().zip(&m.active) {
            if a {
                *x += normal.sample(&mut rng);
            }
        }
    }
    Ok(sigma)
}

/// Noise level estimate `δ_i = σ·‖1‖_Y` on the active set (expected norm of
/// the noise in the data product).
pub fn noise_norm(sigma: f64, mask: &DataMask, y_weights: &[f64]) -> f64 {
    sigma * mask.weight_sum(y_weights).sqrt()
}

/// `‖est − truth‖ / ‖truth‖` in the lumped-mass L² norm.
pub fn relative_error(est: &[f64], truth: &[f64], mass: &[f64]) -> f64 {
    let diff: Vec<f64> = est.iter().zip(truth).map(|(a, b)| a - b).collect();
    let num = wdot(mass, &diff, &diff).sqrt();
    let den = wdot(mass, truth, truth).sqrt();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Resamples a nodal field between uniform meshes by P1 interpolation.
pub fn transfer(field: &[f64], from: &SpatialMesh, to: &SpatialMesh) -> Vec<f64> {
    to.nodes
        .iter()
        .map(|&x| {
            let (nodes, w) = from.locate(x).expect("meshes cover the same square");
            nodes.iter().zip(w).map(|(&n, w)| field[n] * w).sum()
        })
        .collect()
}

/// Reconstruction algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    ProximalGradient,
    ProximalStochastic,
    Landweber,
    LopingKaczmarz,
    MullProjected,
    MullProximal,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::ProximalGradient,
        Algorithm::ProximalStochastic,
        Algorithm::Landweber,
        Algorithm::LopingKaczmarz,
        Algorithm::MullProjected,
        Algorithm::MullProximal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::ProximalGradient => "pg",
            Algorithm::ProximalStochastic => "prox-sgd",
            Algorithm::Landweber => "landweber",
            Algorithm::LopingKaczmarz => "llk",
            Algorithm::MullProjected => "mull-proj",
            Algorithm::MullProximal => "mull-prox",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn is_multilinear(self) -> bool {
        matches!(self, Algorithm::MullProjected | Algorithm::MullProximal)
    }
}

/// A complete synthetic experiment: data grid, reconstruction grid, noise
/// and solver settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub data_grid: GridSpec,
    pub recon_grid: GridSpec,
    pub setup: SetupSpec,
    pub noise_level: f64,
    pub noise_seed: u64,
    pub upper_a: f64,
    pub upper_s: f64,
    /// Weight of the scattering part of the Laplacian penalty.
    pub reg_scale_s: f64,
    /// Constant initial guess `(μ_a, μ_s)`, boundary values replaced by the
    /// known ones.
    pub initial: (f64, f64),
    pub algorithm: Algorithm,
    pub optim: OptimConfig,
    pub mull: MullConfig,
}

impl Scenario {
    /// Desk-scale defaults: data on 51² nodes × 32 directions,
    /// reconstruction on 41² × 16.
    pub fn desk() -> Self {
        Scenario {
            data_grid: GridSpec {
                cells: 50,
                n_theta: 32,
            },
            recon_grid: GridSpec {
                cells: 40,
                n_theta: 16,
            },
            setup: SetupSpec::desk(40),
            noise_level: 0.0,
            noise_seed: 0,
            upper_a: 3.0,
            upper_s: 6.0,
            reg_scale_s: 100.0,
            initial: (BACKGROUND_MU_A, PHANTOM_MU_S),
            algorithm: Algorithm::ProximalGradient,
            optim: OptimConfig::default(),
            mull: MullConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_grid.cells <= self.recon_grid.cells {
            return Err(QpatError::Config(format!(
                "data grid ({} cells) must be finer than the reconstruction grid ({} cells)",
                self.data_grid.cells, self.recon_grid.cells
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(QpatError::Config(format!(
                "noise level must be ≥ 0, got {}",
                self.noise_level
            )));
        }
        if !(self.upper_a > 0.0 && self.upper_s > 0.0) {
            return Err(QpatError::Config("upper bounds must be positive".into()));
        }
        if !(self.reg_scale_s >= 0.0) {
            return Err(QpatError::Config("reg_scale_s must be ≥ 0".into()));
        }
        self.optim.validate(self.setup.sides.len())
    }

    pub fn data_model(&self) -> Result<ForwardModel> {
        build_model(self.data_grid, &self.setup)
    }

    pub fn recon_model(&self) -> Result<ForwardModel> {
        build_model(self.recon_grid, &self.setup)
    }

    /// Phantom data on the data grid plus seeded noise.
    pub fn simulate(&self) -> Result<Simulated> {
        self.validate()?;
        let model = self.data_model()?;
        let truth = Phantom::on_mesh(&model.transport.mesh);
        let mut data = simulate_data(&model, &truth.mu)?;
        let masks: Vec<&DataMask> = model.illuminations.iter().map(|il| &il.mask).collect();
        let sigma = add_noise(&mut data, &masks, self.noise_level, self.noise_seed)?;
        let yw = model.wave.y_weights();
        let delta = masks.iter().map(|m| noise_norm(sigma, m, yw)).collect();
        Ok(Simulated { data, sigma, delta })
    }

    /// Runs the configured algorithm against `sim` on the reconstruction
    /// grid `model` (from [`recon_model`](Self::recon_model)).
    pub fn reconstruct(&self, model: &ForwardModel, sim: &Simulated) -> Result<RunReport> {
        self.validate()?;
        check_len("data sets vs illuminations", model.len(), sim.data.len())?;
        let mesh = &model.transport.mesh;
        let truth = Phantom::on_mesh(mesh).mu;
        let set = FeasibleSet::new(self.upper_a, self.upper_s).with_boundary(mesh, &truth);
        let reg = RegOperator::laplacian(mesh, self.reg_scale_s);
        let initial = set.project(&ParameterPair::constant(
            model.n_nodes(),
            self.initial.0,
            self.initial.1,
        ));
        let problem = Problem {
            model,
            data: &sim.data,
            reg: &reg,
            set: &set,
            truth: Some(&truth),
        };
        let start = Instant::now();
        let before = model.counters().snapshot();
        let mut optim = self.optim.clone();
        optim.delta.clone_from(&sim.delta);
        let (mu, trace, stopped_early) = match self.algorithm {
            Algorithm::ProximalGradient => split(proximal_gradient(&problem, &initial, &optim)?),
            Algorithm::ProximalStochastic => {
                split(proximal_stochastic_gradient(&problem, &initial, &optim)?)
            }
            Algorithm::Landweber => split(projected_landweber(&problem, &initial, &optim)?),
            Algorithm::LopingKaczmarz => {
                split(loping_landweber_kaczmarz(&problem, &initial, &optim)?)
            }
            Algorithm::MullProjected | Algorithm::MullProximal => {
                let z0 = init_state(&problem, &initial, InitMode::Warm)?;
                let out = if self.algorithm == Algorithm::MullProjected {
                    mull_projected_sgd(&problem, &z0, &self.mull)?
                } else {
                    mull_proximal_sgd(&problem, &z0, &self.mull)?
                };
                (out.state.mu, out.trace, false)
            }
        };
        Ok(RunReport {
            mass: model.mass().to_vec(),
            initial_error: relative_error(&initial.mu_a, &truth.mu_a, model.mass()),
            final_error: relative_error(&mu.mu_a, &truth.mu_a, model.mass()),
            mu,
            truth,
            trace,
            stopped_early,
            counters: model.counters().snapshot().since(&before),
            wall_s: start.elapsed().as_secs_f64(),
        })
    }
}

fn split(r: OptimResult) -> (ParameterPair, IterateTrace, bool) {
    (r.mu, r.trace, r.stopped_early)
}

#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Vec<PressureData>,
    /// Noise standard deviation actually used.
    pub sigma: f64,
    /// Expected noise norm per illumination.
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub mu: ParameterPair,
    pub truth: ParameterPair,
    pub mass: Vec<f64>,
    pub trace: IterateTrace,
    pub stopped_early: bool,
    pub initial_error: f64,
    pub final_error: f64,
    /// Work spent by the algorithm, including any warm start.
    pub counters: CounterSnapshot,
    pub wall_s: f64,
}

/// Simulation followed by reconstruction.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport> {
    let sim = scenario.simulate()?;
    let model = scenario.recon_model()?;
    scenario.reconstruct(&model, &sim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_values() {
        let mesh = SpatialMesh::with_cells(40);
        let p = Phantom::on_mesh(&mesh);
        let corner = mesh
            .nodes
            .iter()
            .position(|x| x[0] == 1.0 && x[1] == 1.0)
            .unwrap();
        assert_eq!(p.mu.mu_a[corner], 0.3);
        assert_eq!(p.mu_a_at([0.0, 0.45]), 2.0);
        assert_eq!(p.mu_a_at([0.0, 0.33]), 0.5);
        assert_eq!(p.mu_a_at([0.45, -0.35]), 1.0);
        assert!(p.mu.mu_s.iter().all(|&v| v == 3.0));
        assert!(p.mu.mu_a.iter().all(|v| [0.3, 0.5, 1.0, 2.0].contains(v)));
    }

    #[test]
    fn illumination_directions_and_mass() {
        let mesh = SpatialMesh::with_cells(10);
        let geo = DetectorGeometry::new(1.8, 128, 0.1, 4.0).unwrap();
        let mut injected = Vec::new();
        for n_theta in [8usize, 16, 32] {
            let angles = AngularGrid::new(n_theta).unwrap();
            let ill = build_illuminations(&mesh, &angles, &geo, &Side::ALL, 4.0).unwrap();
            assert_eq!(ill.len(), 4);
            let top = &ill[0];
            assert_eq!(top.side, Side::Top);
            let j = angles.nearest([0.0, -1.0]);
            assert_eq!(angles.directions[j], [0.0, -1.0]);
            // total inflow Σ_j w ∫_side |θ·ν| q_o ds
            let mut total = 0.0;
            for e in mesh.boundary_edges.iter().filter(|e| e.side == Side::Top) {
                for jj in 0..n_theta {
                    let th = angles.directions[jj];
                    let tn = th[0] * e.side.normal()[0] + th[1] * e.side.normal()[1];
                    let q = 0.5
                        * (top.source.boundary.get(e.nodes[0], jj)
                            + top.source.boundary.get(e.nodes[1], jj));
                    total += angles.weight * (-tn).max(0.0) * q * e.length;
                }
            }
            injected.push(total);
            // arcs of the four illuminations are disjoint half circles
            let mut seen = [0u8; 128];
            for il in &ill {
                for &k in &il.detectors {
                    seen[k] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 2));
            assert!(ill[0]
                .detectors
                .iter()
                .all(|k| !ill[2].detectors.contains(k)));
        }
        for v in &injected {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_statistics() {
        let geo = DetectorGeometry::new(1.8, 128, 0.025, 4.0).unwrap();
        let mut data = vec![PressureData::zeros(128, geo.n_times); 2];
        data[0].values[5] = 2.0;
        let full = DataMask::full(&geo);
        let masks = [&full, &full];
        let clean = data.clone();
        assert_eq!(add_noise(&mut data.clone(), &masks, 0.0, 1).unwrap(), 0.0);
        let sigma = add_noise(&mut data, &masks, 0.005, 42).unwrap();
        assert_eq!(sigma, 0.01);
        let diffs: Vec<f64> = data
            .iter()
            .zip(&clean)
            .flat_map(|(a, b)| {
                a.values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| x - y)
                    .collect::<Vec<_>>()
            })
            .collect();
        assert!(diffs.len() >= 10_000);
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let sd =
            (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((sd / 0.01 - 1.0).abs() < 0.03);
        let mut again = clean.clone();
        add_noise(&mut again, &masks, 0.005, 42).unwrap();
        assert_eq!(again, data);
    }

    #[test]
    fn relative_error_properties() {
        let m = vec![0.5, 1.0, 2.0];
        let t = vec![1.0, -2.0, 3.0];
        assert_eq!(relative_error(&t, &t, &m), 0.0);
        assert!((relative_error(&[0.0; 3], &t, &m) - 1.0).abs() < 1e-15);
        let e = vec![1.5, -1.0, 2.0];
        let a = relative_error(&e, &t, &m);
        let ce: Vec<f64> = e.iter().map(|x| 3.0 * x).collect();
        let ct: Vec<f64> = t.iter().map(|x| 3.0 * x).collect();
        assert!((relative_error(&ce, &ct, &m) - a).abs() < 1e-15);
    }
}
