//! Algorithms on the standard formulation `min Σ_i F_i(μ) + G_λ(μ)`, where
//! every gradient evaluation solves the transport equation and its adjoint.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acoustic::PressureData;
use crate::error::{QpatError, Result};
use crate::field::ParameterPair;
use crate::forward::ForwardModel;
use crate::regularizers::{dykstra, DykstraConfig, FeasibleSet, RegOperator};
use crate::trace::{IterateTrace, Recorder, StepReport};

/// Step size rule `s_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `s_0 / √(k+1)`
    InverseSqrt(f64),
}

impl StepSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant(s) => s,
            StepSchedule::InverseSqrt(s) => s / ((k + 1) as f64).sqrt(),
        }
    }

    fn base(&self) -> f64 {
        match *self {
            StepSchedule::Constant(s) | StepSchedule::InverseSqrt(s) => s,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimConfig {
    pub lambda: f64,
    pub step: StepSchedule,
    pub max_iter: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Discrepancy factor τ.
    pub tau: f64,
    /// Noise norm estimates δ_i per illumination.
    pub delta: Vec<f64>,
    pub dykstra: DykstraConfig,
    /// When false the scattering coefficient is held at its initial value.
    pub update_mu_s: bool,
    /// Keep the iterate every this many iterations (0: never).
    pub checkpoint_every: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lambda: 2e-8,
            step: StepSchedule::Constant(0.5),
            max_iter: 10,
            batch_size: 1,
            seed: 0,
            tau: 1.5,
            delta: Vec::new(),
            dykstra: DykstraConfig::default(),
            update_mu_s: false,
            checkpoint_every: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(QpatError::Config(m));
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be ≥ 0, got {}", self.lambda));
        }
        if !(self.step.base() > 0.0) {
            return bad(format!("step must be > 0, got {}", self.step.base()));
        }
        if self.batch_size == 0 || self.batch_size > n {
            return bad(format!(
                "batch size must lie in 1..={n}, got {}",
                self.batch_size
            ));
        }
        if !(self.tau >= 1.0) {
            return bad(format!("tau must be ≥ 1, got {}", self.tau));
        }
        Ok(())
    }
}

/// Everything an algorithm needs besides its configuration.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a ForwardModel,
    pub data: &'a [PressureData],
    pub reg: &'a RegOperator,
    pub set: &'a FeasibleSet,
    /// Ground truth on the reconstruction grid, for error reporting only.
    pub truth: Option<&'a ParameterPair>,
}

impl Problem<'_> {
    pub(crate) fn recorder(&self, checkpoint_every: usize) -> Recorder {
        Recorder::new(
            std::sync::Arc::clone(self.model.counters()),
            self.truth.cloned(),
            self.model.mass().to_vec(),
        )
        .with_checkpoints(checkpoint_every)
    }

    fn check(&self, mu0: &ParameterPair) -> Result<()> {
        if self.data.len() != self.model.len() {
            return Err(QpatError::DimensionMismatch {
                context: "data sets vs illuminations",
                expected: self.model.len(),
                got: self.data.len(),
            });
        }
        if !self.set.contains(mu0, 1e-12) {
            return Err(QpatError::Infeasible(
                "initial value outside the feasible set".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub mu: ParameterPair,
    pub trace: IterateTrace,
    /// Set when a discrepancy-type stopping rule fired.
    pub stopped_early: bool,
}

/// Mean fidelity and mean gradient over `indices`, summed in the given
/// order.
fn batch_gradient(
    problem: &Problem,
    mu: &ParameterPair,
    indices: &[usize],
    update_mu_s: bool,
) -> Result<(f64, ParameterPair)> {
    let mut value = 0.0;
    let mut grad = ParameterPair::zeros(mu.len());
    for &i in indices {
        let (f, g) = problem.model.fidelity_gradient(mu, &problem.data[i], i)?;
        value += f;
        grad.axpy(1.0, &g);
    }
    let scale = 1.0 / indices.len() as f64;
    let mut grad = grad.scaled(scale);
    if !update_mu_s {
        grad.mu_s.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok((value * scale, grad))
}

/// `prox_{s G_λ}` by Dykstra; with `λ = 0` this is `P_D`.
fn prox(
    problem: &Problem,
    x: &ParameterPair,
    previous: &ParameterPair,
    s: f64,
    cfg: &OptimConfig,
) -> Result<ParameterPair> {
    let mut out = dykstra(problem.reg, problem.set, x, s * cfg.lambda, &cfg.dykstra)?.mu;
    if !cfg.update_mu_s {
        out.mu_s.clone_from(&previous.mu_s);
    }
    Ok(out)
}

fn gradient_step(
    problem: &Problem,
    mu: &ParameterPair,
    indices: &[usize],
    k: usize,
    cfg: &OptimConfig,
) -> Result<(f64, ParameterPair)> {
    let (fid, grad) = batch_gradient(problem, mu, indices, cfg.update_mu_s)?;
    let s = cfg.step.at(k);
    let mut x = mu.clone();
    x.axpy(-s, &grad);
    Ok((fid, prox(problem, &x, mu, s, cfg)?))
}

/// Proximal gradient with the averaged full gradient.
pub fn proximal_gradient(
    problem: &Problem,
    mu0: &ParameterPair,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    problem.check(mu0)?;
    cfg.validate(problem.model.len())?;
    let all: Vec<usize> = (0..problem.model.len()).collect();
    let mut rec = problem.recorder(cfg.checkpoint_every);
    let mut mu = mu0.clone();
    for k in 0..cfg.max_iter {
        let penalty = cfg.lambda * problem.reg.value(&mu);
        let (fid, next) =
            gradient_step(problem, &mu, &all, k, cfg).map_err(|e| e.at_iteration(k))?;
        mu = next;
        rec.push(
            k,
            &mu,
            StepReport {
                picked_i: all.clone(),
                fidelity: fid,
                penalty,
                ..StepReport::default()
            },
        );
    }
    Ok(OptimResult {
        mu,
        trace: rec.trace,
        stopped_early: false,
    })
}

/// Proximal stochastic gradient: each step uses a random batch of
/// `batch_size` distinct illuminations.
pub fn proximal_stochastic_gradient(
    problem: &Problem,
    mu0: &ParameterPair,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    problem.check(mu0)?;
    let n = problem.model.len();
    cfg.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rec = problem.recorder(cfg.checkpoint_every);
    let mut mu = mu0.clone();
    for k in 0..cfg.max_iter {
        let mut batch = sample(&mut rng, n, cfg.batch_size).into_vec();
        batch.sort_unstable();
        let penalty = cfg.lambda * problem.reg.value(&mu);
        let (fid, next) =
            gradient_step(problem, &mu, &batch, k, cfg).map_err(|e| e.at_iteration(k))?;
        mu = next;
        rec.push(
            k,
            &mu,
            StepReport {
                picked_i: batch,
                fidelity: fid,
                penalty,
                ..StepReport::default()
            },
        );
    }
    Ok(OptimResult {
        mu,
        trace: rec.trace,
        stopped_early: false,
    })
}

/// Projected Landweber with the discrepancy principle
/// `‖v − F(μ)‖ ≤ τ δ`, `δ = (Σ δ_i²)^{1/2}`.
pub fn projected_landweber(
    problem: &Problem,
    mu0: &ParameterPair,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    problem.check(mu0)?;
    let n = problem.model.len();
    cfg.validate(n)?;
    let delta = if cfg.delta.is_empty() {
        0.0
    } else {
        cfg.delta.iter().map(|d| d * d).sum::<f64>().sqrt()
    };
    let all: Vec<usize> = (0..n).collect();
    let mut rec = problem.recorder(cfg.checkpoint_every);
    let mut mu = mu0.clone();
    for k in 0..cfg.max_iter {
        let (fid, grad) =
            batch_gradient(problem, &mu, &all, cfg.update_mu_s).map_err(|e| e.at_iteration(k))?;
        // mean fidelity → total residual norm
        let residual = (2.0 * fid * n as f64).sqrt();
        if residual <= cfg.tau * delta {
            return Ok(OptimResult {
                mu,
                trace: rec.trace,
                stopped_early: true,
            });
        }
        let s = cfg.step.at(k);
        let mut x = mu.clone();
        x.axpy(-s, &grad);
        let mut next = problem.set.project(&x);
        if !cfg.update_mu_s {
            next.mu_s.clone_from(&mu.mu_s);
        }
        mu = next;
        rec.push(
            k,
            &mu,
            StepReport {
                picked_i: all.clone(),
                fidelity: fid,
                ..StepReport::default()
            },
        );
    }
    Ok(OptimResult {
        mu,
        trace: rec.trace,
        stopped_early: false,
    })
}

/// Projected loping Landweber–Kaczmarz: a random illumination per step,
/// skipped when its residual is already below `τ δ_i`. Stops once every
/// illumination has been found below its threshold at the current iterate.
pub fn loping_landweber_kaczmarz(
    problem: &Problem,
    mu0: &ParameterPair,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    problem.check(mu0)?;
    let n = problem.model.len();
    cfg.validate(n)?;
    if cfg.delta.len() != n {
        return Err(QpatError::DimensionMismatch {
            context: "noise estimates",
            expected: n,
            got: cfg.delta.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rec = problem.recorder(cfg.checkpoint_every);
    let mut mu = mu0.clone();
    let mut below = vec![false; n];
    for k in 0..cfg.max_iter {
        let i = sample(&mut rng, n, 1).index(0);
        let model = problem.model;
        let residual = model
            .residual(&mu, &problem.data[i], i)
            .map_err(|e| e.at_iteration(k))?;
        let norm = model.wave.norm_sq(&residual).sqrt();
        let omega = norm > cfg.tau * cfg.delta[i];
        if omega {
            let mut grad = model
                .adjoint(&mu, &residual, i)
                .map_err(|e| e.at_iteration(k))?;
            if !cfg.update_mu_s {
                grad.mu_s.iter_mut().for_each(|v| *v = 0.0);
            }
            let mut x = mu.clone();
            x.axpy(-cfg.step.at(k), &grad);
            let mut next = problem.set.project(&x);
            if !cfg.update_mu_s {
                next.mu_s.clone_from(&mu.mu_s);
            }
            mu = next;
            below.iter_mut().for_each(|b| *b = false);
        } else {
            below[i] = true;
        }
        rec.push(
            k,
            &mu,
            StepReport {
                picked_i: vec![i],
                fidelity: 0.5 * norm * norm,
                omega: Some(omega),
                ..StepReport::default()
            },
        );
        if below.iter().all(|&b| b) {
            return Ok(OptimResult {
                mu,
                trace: rec.trace,
                stopped_early: true,
            });
        }
    }
    Ok(OptimResult {
        mu,
        trace: rec.trace,
        stopped_early: false,
    })
}
