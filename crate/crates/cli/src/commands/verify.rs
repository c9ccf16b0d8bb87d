//! Invariant suites: adjoint identities, the trace isometry, gradient
//! checks, the Dykstra oracle and the algorithm degeneracies.

use std::sync::Arc;

use qpat::acoustic::{DetectorGeometry, PressureData, WaveOperator};
use qpat::experiment::{build_model, simulate_data, GridSpec, Phantom, SetupSpec};
use qpat::field::ParameterPair;
use qpat::forward::ForwardModel;
use qpat::grid::SpatialMesh;
use qpat::linalg::{dot, wdot};
use qpat::optim_mull::{eval_j, grad_j, MullState};
use qpat::optim_standard::{
    projected_landweber, proximal_gradient, proximal_stochastic_gradient, OptimConfig, Problem,
};
use qpat::regularizers::{dykstra, DykstraConfig, FeasibleSet, RegOperator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Adjoints,
    Isometry,
    Gradients,
    Dykstra,
    Degeneracy,
    All,
}

impl Suite {
    pub fn parse(s: &str) -> Result<Suite> {
        Ok(match s {
            "adjoints" => Suite::Adjoints,
            "isometry" => Suite::Isometry,
            "gradients" => Suite::Gradients,
            "dykstra" => Suite::Dykstra,
            "degeneracy" => Suite::Degeneracy,
            "all" => Suite::All,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown suite '{other}' (expected adjoints, isometry, gradients, dykstra, degeneracy, all)"
                )))
            }
        })
    }
}

/// One measured invariant: passes when `measured ≤ tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub suite: String,
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Raw quantity behind `measured` when that is a deviation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

impl Check {
    fn new(suite: &str, name: &str, measured: f64, tolerance: f64) -> Self {
        Check {
            suite: suite.into(),
            name: name.into(),
            measured,
            tolerance,
            pass: measured <= tolerance,
            value: None,
            reference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Discretization used by the suites.
#[derive(Debug, Clone, Copy)]
pub struct VerifyGrid {
    pub cells: usize,
    pub n_theta: usize,
    pub n_det: usize,
    /// Mesh for the isometry measurement.
    pub isometry_cells: usize,
}

impl Default for VerifyGrid {
    fn default() -> Self {
        VerifyGrid {
            cells: 8,
            n_theta: 8,
            n_det: 32,
            isometry_cells: 80,
        }
    }
}

impl VerifyGrid {
    fn model(&self) -> Result<ForwardModel> {
        let mut setup = SetupSpec::desk(self.cells);
        setup.n_det = self.n_det;
        build_model(
            GridSpec {
                cells: self.cells,
                n_theta: self.n_theta,
            },
            &setup,
        )
        .map_err(CliError::numerical("building model"))
    }
}

pub fn run(suite: Suite, grid: &VerifyGrid) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    let want = |s: Suite| suite == s || suite == Suite::All;
    if want(Suite::Adjoints) {
        checks.extend(adjoints(grid)?);
    }
    if want(Suite::Isometry) {
        checks.extend(isometry(grid)?);
    }
    if want(Suite::Gradients) {
        checks.extend(gradients(grid)?);
    }
    if want(Suite::Dykstra) {
        checks.extend(dykstra_oracle()?);
    }
    if want(Suite::Degeneracy) {
        checks.extend(degeneracy(grid)?);
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { checks, pass })
}

fn num(stage: &'static str) -> impl FnOnce(qpat::QpatError) -> CliError {
    CliError::numerical(stage)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn random_mu(rng: &mut ChaCha8Rng, n: usize) -> ParameterPair {
    ParameterPair::new(
        (0..n).map(|_| rng.random_range(0.2..1.5)).collect(),
        (0..n).map(|_| rng.random_range(1.0..4.0)).collect(),
    )
}

fn random_dir(rng: &mut ChaCha8Rng, n: usize) -> ParameterPair {
    ParameterPair::new(
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

fn random_data(rng: &mut ChaCha8Rng, model: &ForwardModel) -> PressureData {
    let mut v = model.wave.zeros();
    v.values
        .iter_mut()
        .for_each(|x| *x = rng.random_range(-1.0..1.0));
    v
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn adjoints(grid: &VerifyGrid) -> Result<Vec<Check>> {
    let model = grid.model()?;
    let n = model.n_nodes();
    let op = &model.transport;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_m = 0.0f64;
    let mut worst_u = 0.0f64;
    for _ in 0..5 {
        let mu = random_mu(&mut rng, n);
        let u = random_vec(&mut rng, op.dim());
        let w = random_vec(&mut rng, op.dim());
        let mut mu_ = vec![0.0; op.dim()];
        let mut mtw = vec![0.0; op.dim()];
        op.apply(&mu, &u, &mut mu_)
            .map_err(num("transport apply"))?;
        op.apply_transpose(&mu, &w, &mut mtw)
            .map_err(num("transport transpose"))?;
        worst_m = worst_m.max(rel_diff(dot(&mu_, &w), dot(&u, &mtw)));

        let p0 = random_vec(&mut rng, n);
        let v = random_data(&mut rng, &model);
        let up = model.wave.apply(&p0).map_err(num("wave apply"))?;
        let uv = model.wave.adjoint(&v).map_err(num("wave adjoint"))?;
        worst_u = worst_u.max(rel_diff(
            model.wave.inner(&up, &v),
            wdot(model.mass(), &p0, &uv),
        ));
    }
    let mut worst_f = 0.0f64;
    for trial in 0..20 {
        let mu = random_mu(&mut rng, n);
        let h = random_dir(&mut rng, n);
        let v = random_data(&mut rng, &model);
        let i = trial % model.len();
        let fh = model.derivative(&mu, &h, i).map_err(num("derivative"))?;
        let g = model.adjoint(&mu, &v, i).map_err(num("adjoint"))?;
        worst_f = worst_f.max(rel_diff(
            model.wave.inner(&fh, &v),
            h.inner(&g, model.mass()),
        ));
    }
    Ok(vec![
        Check::new("adjoints", "transport_transpose", worst_m, 1e-12),
        Check::new("adjoints", "wave_adjoint", worst_u, 1e-12),
        Check::new("adjoints", "forward_derivative_adjoint", worst_f, 1e-6),
    ])
}

fn bump(x: [f64; 2]) -> f64 {
    let d2 = ((x[0] - 0.2).powi(2) + (x[1] + 0.1).powi(2)) / 0.36;
    if d2 < 1.0 {
        (1.0 - d2).powi(3)
    } else {
        0.0
    }
}

pub fn isometry(grid: &VerifyGrid) -> Result<Vec<Check>> {
    let radius = 1.8;
    let mesh = Arc::new(SpatialMesh::with_cells(grid.isometry_cells));
    let geo = DetectorGeometry::new(radius, 128, mesh.h / 2.0, 4.0).map_err(num("geometry"))?;
    let op = WaveOperator::new(Arc::clone(&mesh), geo).map_err(num("wave operator"))?;
    let p0 = mesh.interpolate(bump);
    let ratio = op
        .isometry_ratio(&p0)
        .map_err(num("isometry"))?
        .ok_or_else(|| {
            CliError::Verification("isometry ratio undefined for the test bump".into())
        })?;
    let scaled: Vec<f64> = p0.iter().map(|v| -2.5 * v).collect();
    let ratio2 = op
        .isometry_ratio(&scaled)
        .map_err(num("isometry"))?
        .unwrap_or(f64::NAN);
    let expect = radius / 2.0;
    let mut c = Check::new(
        "isometry",
        "ratio_vs_half_radius",
        (ratio / expect - 1.0).abs(),
        0.02,
    );
    c.value = Some(ratio);
    c.reference = Some(expect);
    let zero_undefined = op
        .isometry_ratio(&vec![0.0; p0.len()])
        .map_err(num("isometry"))?
        .is_none();
    Ok(vec![
        c,
        Check::new(
            "isometry",
            "scale_invariance",
            rel_diff(ratio, ratio2),
            1e-12,
        ),
        Check::new(
            "isometry",
            "zero_input_undefined",
            if zero_undefined { 0.0 } else { 1.0 },
            0.0,
        ),
    ])
}

pub fn gradients(grid: &VerifyGrid) -> Result<Vec<Check>> {
    let model = grid.model()?;
    let n = model.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let truth = random_mu(&mut rng, n);
    let data = simulate_data(&model, &truth).map_err(num("simulate"))?;
    let mass = model.mass();
    let mut worst_f = 0.0f64;
    for trial in 0..10 {
        let mu = random_mu(&mut rng, n);
        let h = random_dir(&mut rng, n);
        let i = trial % model.len();
        let (_, g) = model
            .fidelity_gradient(&mu, &data[i], i)
            .map_err(num("gradient"))?;
        let eps = 1e-4;
        let f = |s: f64| {
            let mut m = mu.clone();
            m.axpy(s, &h);
            model.fidelity(&m, &data[i], i)
        };
        let fd =
            (f(eps).map_err(num("fidelity"))? - f(-eps).map_err(num("fidelity"))?) / (2.0 * eps);
        worst_f = worst_f.max(rel_diff(fd, h.inner(&g, mass)));
    }

    let reg = RegOperator::laplacian(&model.transport.mesh, 100.0);
    let set = FeasibleSet::new(3.0, 6.0);
    let problem = Problem {
        model: &model,
        data: &data,
        reg: &reg,
        set: &set,
        truth: None,
    };
    let fw = model.transport.field_weights();
    let dim = model.transport.dim();
    let mut worst_m = 0.0f64;
    let mut blocks = 0usize;
    for trial in 0..10 {
        let z = MullState {
            mu: random_mu(&mut rng, n),
            phi: (0..model.len())
                .map(|_| (0..dim).map(|_| rng.random_range(0.0..2.0)).collect())
                .collect(),
            heating: (0..model.len())
                .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
                .collect(),
        };
        let i = trial % model.len();
        for l in 1..=4 {
            let g = grad_j(&problem, l, i, &z).map_err(num("multilinear gradient"))?;
            let value = eval_j(&problem, l, i, &z).map_err(num("multilinear value"))?;
            for block in 0..4 {
                let len = if block == 2 { dim } else { n };
                let dir = random_vec(&mut rng, len);
                let shifted = |eps: f64| {
                    let mut y = z.clone();
                    let target = match block {
                        0 => &mut y.mu.mu_a,
                        1 => &mut y.mu.mu_s,
                        2 => &mut y.phi[i],
                        _ => &mut y.heating[i],
                    };
                    target.iter_mut().zip(&dir).for_each(|(x, d)| *x += eps * d);
                    eval_j(&problem, l, i, &y)
                };
                let eps = 1e-4;
                let fd = (shifted(eps).map_err(num("multilinear value"))?
                    - shifted(-eps).map_err(num("multilinear value"))?)
                    / (2.0 * eps);
                let an = match block {
                    0 => g.mu.as_ref().map_or(0.0, |m| wdot(mass, &m.mu_a, &dir)),
                    1 => g.mu.as_ref().map_or(0.0, |m| wdot(mass, &m.mu_s, &dir)),
                    2 => g.phi.as_ref().map_or(0.0, |p| wdot(&fw, p, &dir)),
                    _ => g.heating.as_ref().map_or(0.0, |h| wdot(mass, h, &dir)),
                };
                if fd.abs().max(an.abs()) < 1e-14 * value.max(1.0) {
                    continue;
                }
                blocks += 1;
                worst_m = worst_m.max(rel_diff(fd, an));
            }
        }
    }
    // nine dependent blocks per point: J1 (μ_a, μ_s, Φ), J2 (μ_a, Φ, H),
    // J3 (H), J4 (μ_a, μ_s)
    Ok(vec![
        Check::new("gradients", "fidelity_finite_difference", worst_f, 1e-4),
        Check::new("gradients", "multilinear_finite_difference", worst_m, 1e-5),
        Check::new(
            "gradients",
            "multilinear_blocks_checked",
            (blocks as f64 - 90.0).abs(),
            0.0,
        ),
    ])
}

/// Minimizer of `½‖z − x‖²_M + t·value(z)` over `set`, by accelerated
/// projected gradient iterated to stagnation.
fn qp_oracle(reg: &RegOperator, set: &FeasibleSet, x: &ParameterPair, t: f64) -> ParameterPair {
    let mass = &reg.mass;
    let n = x.len();
    // alternating start: constants lie in the kernel of the Laplacian
    let alt: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 1.0 } else { -0.5 })
        .collect();
    let mut v = ParameterPair::new(alt.clone(), alt);
    let mut lam = 0.0;
    for _ in 0..500 {
        let w = reg.normal(&v);
        lam = w.norm(mass) / v.norm(mass);
        v = w.scaled(1.0 / w.norm(mass));
    }
    let step = 1.0 / (1.0 + 1.1 * t * lam);
    let mut z = set.project(x);
    let mut y = z.clone();
    let mut k = 1.0f64;
    for _ in 0..2_000_000 {
        let mut g = y.clone();
        g.axpy(-1.0, x);
        g.axpy(t, &reg.normal(&y));
        let mut next = y.clone();
        next.axpy(-step, &g);
        set.project_in_place(&mut next);
        let mut d = next.clone();
        d.axpy(-1.0, &z);
        let change = d.norm(mass);
        let k1 = 0.5 * (1.0 + (1.0 + 4.0 * k * k).sqrt());
        // restart the momentum when it points uphill
        let mut up = y.clone();
        up.axpy(-1.0, &next);
        let uphill = up.inner(&d, mass) > 0.0;
        y = next.clone();
        if !uphill {
            y.axpy((k - 1.0) / k1, &d);
            k = k1;
        } else {
            k = 1.0;
        }
        z = next;
        if change <= 1e-15 * z.norm(mass).max(1.0) {
            break;
        }
    }
    z
}

pub fn dykstra_oracle() -> Result<Vec<Check>> {
    let converged = DykstraConfig {
        max_iter: 5000,
        tol: 1e-13,
    };
    let n = 7;
    let reg1 = RegOperator::laplacian_1d(n, 1.0 / 3.0, 100.0);
    let set1 = FeasibleSet {
        lower: 0.0,
        upper_a: 1.0,
        upper_s: 5.0,
        fixed: vec![(0, 0.2, 3.0), (n - 1, 0.2, 3.0)],
    };
    let x1 = ParameterPair::new(
        vec![0.3, 1.6, -0.4, 0.9, 1.3, 0.1, 0.5],
        vec![3.0, 6.0, 2.0, 4.0, 5.5, 2.5, 3.5],
    );
    let mesh = SpatialMesh::with_cells(6);
    let reg2 = RegOperator::laplacian(&mesh, 100.0);
    let known = ParameterPair::constant(mesh.num_nodes(), 0.3, 3.0);
    let set2 = FeasibleSet::new(1.2, 6.0).with_boundary(&mesh, &known);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = mesh.num_nodes();
    let x2 = ParameterPair::new(
        (0..m).map(|_| rng.random_range(-0.5..2.0)).collect(),
        (0..m).map(|_| rng.random_range(1.0..7.0)).collect(),
    );
    let mut out = Vec::new();
    for (name, reg, set, x, t) in [
        ("one_dimensional_7", &reg1, &set1, &x1, 2e-3),
        ("two_dimensional_49", &reg2, &set2, &x2, 1e-3),
    ] {
        let d = dykstra(reg, set, x, t, &converged).map_err(num("dykstra"))?;
        let o = qp_oracle(reg, set, x, t);
        let mut diff = d.mu.clone();
        diff.axpy(-1.0, &o);
        out.push(Check::new("dykstra", name, diff.norm(&reg.mass), 1e-6));
    }
    Ok(out)
}

pub fn degeneracy(grid: &VerifyGrid) -> Result<Vec<Check>> {
    let model = grid.model()?;
    let mesh = &model.transport.mesh;
    let truth = Phantom::on_mesh(mesh).mu;
    let data = simulate_data(&model, &truth).map_err(num("simulate"))?;
    let set = FeasibleSet::new(3.0, 6.0).with_boundary(mesh, &truth);
    let reg = RegOperator::laplacian(mesh, 100.0);
    let mu0 = set.project(&ParameterPair::constant(model.n_nodes(), 0.3, 3.0));
    let problem = Problem {
        model: &model,
        data: &data,
        reg: &reg,
        set: &set,
        truth: None,
    };
    let base = OptimConfig {
        max_iter: 5,
        checkpoint_every: 1,
        ..OptimConfig::default()
    };
    let max_gap = |a: &qpat::trace::IterateTrace, b: &qpat::trace::IterateTrace| {
        a.snapshots
            .iter()
            .zip(&b.snapshots)
            .flat_map(|(x, y)| {
                x.mu.mu_a
                    .iter()
                    .zip(&y.mu.mu_a)
                    .chain(x.mu.mu_s.iter().zip(&y.mu.mu_s))
                    .map(|(p, q)| (p - q).abs())
            })
            .fold(0.0f64, f64::max)
    };
    let pg = proximal_gradient(&problem, &mu0, &base).map_err(num("proximal gradient"))?;
    let full = OptimConfig {
        batch_size: model.len(),
        ..base.clone()
    };
    let sgd = proximal_stochastic_gradient(&problem, &mu0, &full).map_err(num("stochastic"))?;
    let plain = OptimConfig {
        lambda: 0.0,
        ..base.clone()
    };
    let pg0 = proximal_gradient(&problem, &mu0, &plain).map_err(num("proximal gradient"))?;
    let lw = projected_landweber(&problem, &mu0, &plain).map_err(num("landweber"))?;
    let complete = |a: &qpat::trace::IterateTrace, b: &qpat::trace::IterateTrace| -> f64 {
        if a.snapshots.len() == 5 && b.snapshots.len() == 5 {
            0.0
        } else {
            1.0
        }
    };
    Ok(vec![
        Check::new(
            "degeneracy",
            "full_batch_stochastic_is_proximal_gradient",
            max_gap(&pg.trace, &sgd.trace),
            1e-12,
        ),
        Check::new(
            "degeneracy",
            "unregularized_proximal_gradient_is_landweber",
            max_gap(&pg0.trace, &lw.trace),
            1e-12,
        ),
        Check::new(
            "degeneracy",
            "five_iterates_compared",
            complete(&pg.trace, &sgd.trace).max(complete(&pg0.trace, &lw.trace)),
            0.0,
        ),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qp_oracle_solves_unconstrained_case() {
        // without active constraints the minimizer solves (I + tN) z = x
        let reg = RegOperator::laplacian_1d(5, 0.25, 1.0);
        let set = FeasibleSet::unbounded();
        let x = ParameterPair::new(vec![0.1, 0.9, 0.4, 0.2, 0.7], vec![1.0, 2.0, 0.5, 1.5, 1.0]);
        let t = 0.01;
        let z = qp_oracle(&reg, &set, &x, t);
        let mut r = z.clone();
        r.axpy(t, &reg.normal(&z));
        r.axpy(-1.0, &x);
        assert!(r.norm(&reg.mass) < 1e-10);
    }

    #[test]
    fn suite_names() {
        assert_eq!(Suite::parse("all").unwrap(), Suite::All);
        assert!(matches!(
            Suite::parse("everything"),
            Err(CliError::Usage(_))
        ));
    }
}
