//! Multilinear formulation: photon densities `Φ_i` and heating `H_i` become
//! unknowns next to `μ`, and the transport equation, the heating relation and
//! the data fit enter as separate quadratic penalties
//!
//! ```text
//! J1 = ½‖M(μ)Φ_i − b_i‖²   J2 = ½‖μ_a·AΦ_i − H_i‖²
//! J3 = ½‖U H_i − v_i‖²_Y   J4 = ½‖Lμ‖²
//! ```
//!
//! Stochastic gradient steps on single terms never solve the transport
//! equation; only matrix products with `M(μ)` occur.
//!
//! `J1` measures the weak-form residual in the dual of the (node × direction)
//! product, so that it approximates the L² norm of the strong residual.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, QpatError, Result};
use crate::field::{ParameterPair, PhotonField};
use crate::optim_standard::Problem;
use crate::regularizers::{dykstra, DykstraConfig};
use crate::rte::{average, average_adjoint};
use crate::trace::{IterateTrace, StepReport};

/// Weights `a_1, a_2, a_3` of the coupling terms and `λ` of the penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyWeights {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub lambda: f64,
}

impl Default for PenaltyWeights {
    fn default() -> Self {
        PenaltyWeights {
            a1: 1.0,
            a2: 1.0,
            a3: 1.0,
            lambda: 2e-8,
        }
    }
}

impl PenaltyWeights {
    pub fn get(&self, l: usize) -> f64 {
        match l {
            1 => self.a1,
            2 => self.a2,
            3 => self.a3,
            _ => self.lambda,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.a1 > 0.0 && self.a2 > 0.0 && self.a3 > 0.0) {
            return Err(QpatError::Config(
                "penalty weights a1, a2, a3 must be > 0".into(),
            ));
        }
        if !(self.lambda >= 0.0) {
            return Err(QpatError::Config(format!(
                "lambda must be ≥ 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// `z = (μ, (Φ_i, H_i)_i)`
#[derive(Debug, Clone, PartialEq)]
pub struct MullState {
    pub mu: ParameterPair,
    /// Direction-major photon densities, one per illumination.
    pub phi: Vec<Vec<f64>>,
    pub heating: Vec<Vec<f64>>,
}

impl MullState {
    pub fn is_finite(&self) -> bool {
        self.mu.is_finite()
            && self.phi.iter().flatten().all(|v| v.is_finite())
            && self.heating.iter().flatten().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// `Φ_i = T_i(μ0)`, `H_i = μ_a·AΦ_i`: one transport solve per illumination.
    Warm,
    /// `Φ_i = 0`, `H_i = 0`
    Zero,
}

pub fn init_state(problem: &Problem, mu0: &ParameterPair, mode: InitMode) -> Result<MullState> {
    let model = problem.model;
    let dim = model.transport.dim();
    let n = model.len();
    let mut phi = Vec::with_capacity(n);
    let mut heating = Vec::with_capacity(n);
    for i in 0..n {
        match mode {
            InitMode::Warm => {
                phi.push(model.photon(mu0, i)?.values.clone());
                heating.push(model.heating(mu0, i)?);
            }
            InitMode::Zero => {
                phi.push(vec![0.0; dim]);
                heating.push(vec![0.0; model.n_nodes()]);
            }
        }
    }
    Ok(MullState {
        mu: mu0.clone(),
        phi,
        heating,
    })
}

/// Gradient of one term; blocks the term does not depend on are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct MullGradient {
    pub mu: Option<ParameterPair>,
    pub phi: Option<Vec<f64>>,
    pub heating: Option<Vec<f64>>,
}

impl MullGradient {
    fn scaled(mut self, c: f64) -> Self {
        if let Some(m) = self.mu.as_mut() {
            *m = m.scaled(c);
        }
        for v in self.phi.iter_mut().chain(self.heating.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= c);
        }
        self
    }

    fn is_zero(&self) -> bool {
        self.mu
            .as_ref()
            .is_none_or(|m| m.mu_a.iter().chain(&m.mu_s).all(|&v| v == 0.0))
            && self
                .phi
                .iter()
                .chain(&self.heating)
                .flatten()
                .all(|&v| v == 0.0)
    }
}

fn check_term(l: usize, i: usize, problem: &Problem) -> Result<()> {
    if !(1..=4).contains(&l) {
        return Err(QpatError::Config(format!(
            "functional index must be 1..=4, got {l}"
        )));
    }
    if i >= problem.model.len() {
        return Err(QpatError::Config(format!(
            "illumination index {i} out of range ({} illuminations)",
            problem.model.len()
        )));
    }
    Ok(())
}

fn check_state(problem: &Problem, z: &MullState) -> Result<()> {
    let model = problem.model;
    check_len("state photon densities", model.len(), z.phi.len())?;
    check_len("state heating", model.len(), z.heating.len())?;
    check_len("state parameters", model.n_nodes(), z.mu.len())?;
    for (p, h) in z.phi.iter().zip(&z.heating) {
        check_len("photon density", model.transport.dim(), p.len())?;
        check_len("heating", model.n_nodes(), h.len())?;
    }
    Ok(())
}

/// Residual polynomial `r(t) = r0 + t u + t² v` with its weights; the value
/// along the line is `½ Σ w r(t)²`.
struct Line {
    r0: Vec<f64>,
    u: Vec<f64>,
    v: Option<Vec<f64>>,
    w: Vec<f64>,
}

impl Line {
    /// Coefficients `c0..c4` of `t ↦ ½‖r(t)‖²_w`.
    fn coefficients(&self) -> [f64; 5] {
        let mut c = [0.0; 5];
        for k in 0..self.r0.len() {
            let (r, u, w) = (self.r0[k], self.u[k], self.w[k]);
            let v = self.v.as_ref().map_or(0.0, |v| v[k]);
            c[0] += 0.5 * w * r * r;
            c[1] += w * r * u;
            c[2] += w * (0.5 * u * u + r * v);
            c[3] += w * u * v;
            c[4] += 0.5 * w * v * v;
        }
        c
    }
}

fn poly(c: &[f64; 5], t: f64) -> f64 {
    (((c[4] * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0]
}

/// Global minimizer of the quartic (or quadratic) `Σ c_k t^k`; `None` when
/// the polynomial is not bounded below numerically.
fn minimize_poly(c: &[f64; 5]) -> Option<f64> {
    let scale = c.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 || c[1] == 0.0 && c[3] == 0.0 {
        return Some(0.0);
    }
    if c[4] > 1e-14 * scale {
        let d = |t: f64| ((4.0 * c[4] * t + 3.0 * c[3]) * t + 2.0 * c[2]) * t + c[1];
        let dd = |t: f64| (12.0 * c[4] * t + 6.0 * c[3]) * t + 2.0 * c[2];
        let roots = roots::find_roots_cubic(4.0 * c[4], 3.0 * c[3], 2.0 * c[2], c[1]);
        let mut best: Option<(f64, f64)> = None;
        for &t0 in roots.as_ref() {
            // polish the closed-form root
            let mut t = t0;
            for _ in 0..3 {
                let s = dd(t);
                if s == 0.0 {
                    break;
                }
                let next = t - d(t) / s;
                if !next.is_finite() {
                    break;
                }
                t = next;
            }
            let val = poly(c, t);
            if best.is_none_or(|(_, b)| val < b) {
                best = Some((t, val));
            }
        }
        best.map(|(t, _)| t)
    } else if c[2] > 0.0 {
        Some(-c[1] / (2.0 * c[2]))
    } else {
        None
    }
}

/// Everything one step on `J_ℓ^{(i)}` needs: value, gradient and the line
/// through `z` along the gradient.
struct TermEval {
    value: f64,
    grad: MullGradient,
}

/// Residual and gradient of `J_ℓ^{(i)}` (unweighted).
fn term(
    problem: &Problem,
    l: usize,
    i: usize,
    z: &MullState,
    update_mu_s: bool,
) -> Result<(TermEval, Vec<f64>)> {
    let model = problem.model;
    let op = &model.transport;
    let mass = model.mass();
    let n = model.n_nodes();
    match l {
        1 => {
            let dw = op.field_weights();
            let mut r = vec![0.0; op.dim()];
            op.apply(&z.mu, &z.phi[i], &mut r)?;
            for (x, b) in r.iter_mut().zip(model.rhs(i)) {
                *x -= b;
            }
            let value = 0.5 * r.iter().zip(&dw).map(|(x, w)| x * x / w).sum::<f64>();
            let rho: Vec<f64> = r.iter().zip(&dw).map(|(x, w)| x / w).collect();
            let mut g_phi = vec![0.0; op.dim()];
            op.apply_transpose(&z.mu, &rho, &mut g_phi)?;
            g_phi.iter_mut().zip(&dw).for_each(|(g, w)| *g /= w);
            let mut sens = if update_mu_s {
                op.parameter_sensitivity(&rho, &z.phi[i])
            } else {
                ParameterPair::new(op.coefficient_sensitivity(&rho, &z.phi[i]), vec![0.0; n])
            };
            for p in 0..n {
                sens.mu_a[p] /= mass[p];
                sens.mu_s[p] /= mass[p];
            }
            let g_mu = sens;
            Ok((
                TermEval {
                    value,
                    grad: MullGradient {
                        mu: Some(g_mu),
                        phi: Some(g_phi),
                        heating: None,
                    },
                },
                r,
            ))
        }
        2 => {
            let a_phi = average(&field(op, &z.phi[i]), op.angles.weight);
            let r: Vec<f64> = (0..n)
                .map(|p| z.mu.mu_a[p] * a_phi[p] - z.heating[i][p])
                .collect();
            let value = 0.5 * r.iter().zip(mass).map(|(x, m)| m * x * x).sum::<f64>();
            let ga: Vec<f64> = (0..n).map(|p| a_phi[p] * r[p]).collect();
            let scaled: Vec<f64> = (0..n).map(|p| z.mu.mu_a[p] * r[p]).collect();
            let g_phi = average_adjoint(&scaled, op.n_dirs()).values;
            let g_h: Vec<f64> = r.iter().map(|x| -x).collect();
            Ok((
                TermEval {
                    value,
                    grad: MullGradient {
                        mu: Some(ParameterPair::new(ga, vec![0.0; n])),
                        phi: Some(g_phi),
                        heating: Some(g_h),
                    },
                },
                r,
            ))
        }
        3 => {
            let r = data_residual(problem, i, &z.heating[i])?;
            let value = 0.5 * model.wave.norm_sq(&r);
            let g_h = model.wave.adjoint(&r)?;
            Ok((
                TermEval {
                    value,
                    grad: MullGradient {
                        mu: None,
                        phi: None,
                        heating: Some(g_h),
                    },
                },
                r.values,
            ))
        }
        _ => {
            let value = problem.reg.value(&z.mu);
            let mut g = problem.reg.normal(&z.mu);
            if !update_mu_s {
                g.mu_s.iter_mut().for_each(|v| *v = 0.0);
            }
            let (a, s) = problem.reg.apply(&z.mu);
            let mut r = a;
            r.extend(s);
            Ok((
                TermEval {
                    value,
                    grad: MullGradient {
                        mu: Some(g),
                        phi: None,
                        heating: None,
                    },
                },
                r,
            ))
        }
    }
}

fn field(op: &crate::rte::TransportOperator, values: &[f64]) -> PhotonField {
    PhotonField::from_values(op.n_nodes(), op.n_dirs(), values.to_vec())
}

/// `U H − v` on the active data set.
fn data_residual(problem: &Problem, i: usize, h: &[f64]) -> Result<crate::acoustic::PressureData> {
    let model = problem.model;
    let mut r = model.wave.apply(h)?;
    let mask = &model.illuminations[i].mask;
    for ((x, d), &a) in r
        .values
        .iter_mut()
        .zip(&problem.data[i].values)
        .zip(&mask.active)
    {
        *x = if a { *x - d } else { 0.0 };
    }
    Ok(r)
}

/// The line `t ↦ r(z − t d)` of term `ℓ` through `z` along `d`.
fn line(
    problem: &Problem,
    l: usize,
    i: usize,
    z: &MullState,
    d: &MullGradient,
    r0: Vec<f64>,
) -> Result<Line> {
    let model = problem.model;
    let op = &model.transport;
    let n = model.n_nodes();
    let zeros_mu = ParameterPair::zeros(n);
    let dmu = d.mu.as_ref().unwrap_or(&zeros_mu);
    match l {
        1 => {
            let dphi = d.phi.as_deref().expect("J1 gradient has a photon block");
            // r(t) = r0 − t (M dΦ + M'[dμ] Φ) + t² M'[dμ] dΦ
            let mut u = vec![0.0; op.dim()];
            op.apply(&z.mu, dphi, &mut u)?;
            op.add_coefficient_terms(&dmu.mu_a, &dmu.mu_s, &z.phi[i], &mut u);
            u.iter_mut().for_each(|x| *x = -*x);
            let v = op.apply_derivative(dmu, dphi);
            let w = op.field_weights().iter().map(|x| 1.0 / x).collect();
            Ok(Line {
                r0,
                u,
                v: Some(v),
                w,
            })
        }
        2 => {
            let dphi = d.phi.as_deref().expect("J2 gradient has a photon block");
            let dh = d
                .heating
                .as_deref()
                .expect("J2 gradient has a heating block");
            let a_phi = average(&field(op, &z.phi[i]), op.angles.weight);
            let a_dphi = average(&field(op, dphi), op.angles.weight);
            let u = (0..n)
                .map(|p| -dmu.mu_a[p] * a_phi[p] - z.mu.mu_a[p] * a_dphi[p] + dh[p])
                .collect();
            let v = (0..n).map(|p| dmu.mu_a[p] * a_dphi[p]).collect();
            Ok(Line {
                r0,
                u,
                v: Some(v),
                w: model.mass().to_vec(),
            })
        }
        3 => {
            let dh = d
                .heating
                .as_deref()
                .expect("J3 gradient has a heating block");
            let q = model.wave.apply(dh)?;
            let mask = &model.illuminations[i].mask;
            let u = q
                .values
                .iter()
                .zip(&mask.active)
                .map(|(x, &a)| if a { -x } else { 0.0 })
                .collect();
            Ok(Line {
                r0,
                u,
                v: None,
                w: model.wave.y_weights().to_vec(),
            })
        }
        _ => {
            let (a, s) = problem.reg.apply(dmu);
            let u = a.into_iter().chain(s).map(|x| -x).collect();
            let rw = &problem.reg.row_weights;
            let w = rw.iter().chain(rw).copied().collect();
            Ok(Line { r0, u, v: None, w })
        }
    }
}

/// `J_ℓ^{(i)}(z)` without its weight.
pub fn eval_j(problem: &Problem, l: usize, i: usize, z: &MullState) -> Result<f64> {
    check_term(l, i, problem)?;
    check_state(problem, z)?;
    Ok(term(problem, l, i, z, true)?.0.value)
}

/// `∇J_ℓ^{(i)}(z)` without its weight, in the weighted products of the
/// parameter, photon and heating spaces.
pub fn grad_j(problem: &Problem, l: usize, i: usize, z: &MullState) -> Result<MullGradient> {
    check_term(l, i, problem)?;
    check_state(problem, z)?;
    Ok(term(problem, l, i, z, true)?.0.grad)
}

/// `argmin_t J_ℓ^{(i)}(z − t d)`; `None` when the restriction is not
/// bounded below numerically.
pub fn line_search_exact(
    problem: &Problem,
    l: usize,
    i: usize,
    z: &MullState,
    d: &MullGradient,
) -> Result<Option<f64>> {
    check_term(l, i, problem)?;
    check_state(problem, z)?;
    if d.is_zero() {
        return Ok(Some(0.0));
    }
    let (_, r0) = term(problem, l, i, z, true)?;
    let c = line(problem, l, i, z, d, r0)?.coefficients();
    Ok(minimize_poly(&c))
}

/// Outcome of one unprojected descent step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub before: f64,
    pub after: f64,
    pub step: f64,
}

/// `z ← z − t a_ℓ ∇J_ℓ^{(i)}(z)` with `t` from the exact line search, or the
/// constant `fallback` when line search is off or fails. Values are
/// unweighted `J_ℓ^{(i)}` before and after.
#[allow(clippy::too_many_arguments)]
pub fn descent_step(
    problem: &Problem,
    l: usize,
    i: usize,
    z: &mut MullState,
    weight: f64,
    fallback: f64,
    line_search: bool,
    update_mu_s: bool,
) -> Result<StepOutcome> {
    let (eval, r0) = term(problem, l, i, z, update_mu_s)?;
    let d = eval.grad.scaled(weight);
    if d.is_zero() {
        return Ok(StepOutcome {
            before: eval.value,
            after: eval.value,
            step: 0.0,
        });
    }
    let c = line(problem, l, i, z, &d, r0)?.coefficients();
    let step = if line_search {
        minimize_poly(&c).unwrap_or(fallback)
    } else {
        fallback
    };
    if let Some(g) = &d.mu {
        z.mu.axpy(-step, g);
    }
    if let Some(g) = &d.phi {
        z.phi[i].iter_mut().zip(g).for_each(|(x, g)| *x -= step * g);
    }
    if let Some(g) = &d.heating {
        z.heating[i]
            .iter_mut()
            .zip(g)
            .for_each(|(x, g)| *x -= step * g);
    }
    Ok(StepOutcome {
        before: eval.value,
        after: poly(&c, step),
        step,
    })
}

#[derive(Debug, Clone)]
pub struct MullConfig {
    pub weights: PenaltyWeights,
    pub max_iter: usize,
    pub seed: u64,
    /// Exact line search on `J1`–`J3`; otherwise the constant `step`.
    pub line_search: bool,
    /// Constant step, also the fallback and the step on the penalty term.
    pub step: f64,
    /// Repetitions of a `J1` step when `ℓ = 1` is drawn.
    pub inner_repeats: usize,
    pub dykstra: DykstraConfig,
    /// Smooth `μ` by Dykstra after `ℓ ∈ {1, 2}` also in the projected
    /// variant.
    pub dykstra_in_projected: bool,
    pub update_mu_s: bool,
    /// Abort when a weighted term exceeds this multiple of its initial
    /// value (floored at 1e-3 of the largest initial term).
    pub divergence_factor: f64,
    /// Keep the iterate every this many iterations (0: never).
    pub checkpoint_every: usize,
}

impl Default for MullConfig {
    fn default() -> Self {
        MullConfig {
            weights: PenaltyWeights::default(),
            max_iter: 1000,
            seed: 0,
            line_search: true,
            step: 0.5,
            inner_repeats: 40,
            dykstra: DykstraConfig::default(),
            dykstra_in_projected: false,
            update_mu_s: false,
            divergence_factor: 1e6,
            checkpoint_every: 0,
        }
    }
}

impl MullConfig {
    fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if !(self.step > 0.0) {
            return Err(QpatError::Config(format!(
                "step must be > 0, got {}",
                self.step
            )));
        }
        if self.inner_repeats == 0 {
            return Err(QpatError::Config("inner repeats must be ≥ 1".into()));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(QpatError::Config("divergence factor must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MullResult {
    pub state: MullState,
    pub trace: IterateTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    /// Penalty drawn as a fourth term, `P_D` after each step.
    Projected,
    /// Three terms, Dykstra prox of the penalty after `ℓ ∈ {1, 2}`.
    Proximal,
}

pub fn mull_projected_sgd(
    problem: &Problem,
    z0: &MullState,
    cfg: &MullConfig,
) -> Result<MullResult> {
    run(problem, z0, cfg, Variant::Projected)
}

pub fn mull_proximal_sgd(
    problem: &Problem,
    z0: &MullState,
    cfg: &MullConfig,
) -> Result<MullResult> {
    run(problem, z0, cfg, Variant::Proximal)
}

fn run(
    problem: &Problem,
    z0: &MullState,
    cfg: &MullConfig,
    variant: Variant,
) -> Result<MullResult> {
    cfg.validate()?;
    check_state(problem, z0)?;
    if problem.data.len() != problem.model.len() {
        return Err(QpatError::DimensionMismatch {
            context: "data sets vs illuminations",
            expected: problem.model.len(),
            got: problem.data.len(),
        });
    }
    if !problem.set.contains(&z0.mu, 1e-12) {
        return Err(QpatError::Infeasible(
            "initial value outside the feasible set".into(),
        ));
    }
    let n = problem.model.len();
    let w = cfg.weights;
    let n_terms = match variant {
        Variant::Projected => 4,
        Variant::Proximal => 3,
    };
    // divergence limits from the weighted initial values
    let mut initial = vec![[0.0; 4]; n];
    for (i, row) in initial.iter_mut().enumerate() {
        for l in 1..=4 {
            row[l - 1] = w.get(l) * term(problem, l, i, z0, cfg.update_mu_s)?.0.value;
        }
    }
    let floor = 1e-3 * initial.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let limit = |l: usize, i: usize| cfg.divergence_factor * initial[i][l - 1].max(floor);
    let mut misfit: Vec<f64> = initial.iter().map(|r| r[2] / w.a3).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rec = problem.recorder(cfg.checkpoint_every);
    let mut z = z0.clone();
    for k in 0..cfg.max_iter {
        let i = rng.random_range(0..n);
        let l = rng.random_range(1..=n_terms);
        let fail = |e: QpatError| e.at_iteration(k);
        let weight = w.get(l);
        let repeats = if l == 1 { cfg.inner_repeats } else { 1 };
        let mut total_step = 0.0;
        let mut last = 0.0;
        for _ in 0..repeats {
            // the exact minimizer along the penalty direction would ignore λ
            let exact = cfg.line_search && l != 4;
            let out = descent_step(
                problem,
                l,
                i,
                &mut z,
                weight,
                cfg.step,
                exact,
                cfg.update_mu_s,
            )
            .map_err(fail)?;
            total_step += out.step;
            last = out.after;
            if l != 3 {
                let keep_s = z.mu.mu_s.clone();
                problem.set.project_in_place(&mut z.mu);
                if !cfg.update_mu_s {
                    z.mu.mu_s = keep_s;
                }
            }
        }
        let last = weight * last;
        if !last.is_finite() || last > limit(l, i) || !z.is_finite() {
            return Err(QpatError::Diverged {
                iteration: k,
                functional: l,
                value: last,
                limit: limit(l, i),
            });
        }
        let smooth = match variant {
            Variant::Proximal => l <= 2,
            Variant::Projected => cfg.dykstra_in_projected && l <= 2,
        };
        if smooth && w.lambda > 0.0 {
            let keep_s = z.mu.mu_s.clone();
            z.mu = dykstra(
                problem.reg,
                problem.set,
                &z.mu,
                total_step * w.lambda,
                &cfg.dykstra,
            )
            .map_err(fail)?
            .mu;
            if !cfg.update_mu_s {
                z.mu.mu_s = keep_s;
            }
        }
        if l == 2 || l == 3 {
            misfit[i] = 0.5
                * problem
                    .model
                    .wave
                    .norm_sq(&data_residual(problem, i, &z.heating[i]).map_err(fail)?);
        }
        rec.push(
            k,
            &z.mu,
            StepReport {
                picked_i: vec![i],
                picked_l: Some(l),
                fidelity: w.a3 * misfit.iter().sum::<f64>(),
                penalty: w.lambda * problem.reg.value(&z.mu),
                omega: None,
            },
        );
    }
    Ok(MullResult {
        state: z,
        trace: rec.trace,
    })
}
