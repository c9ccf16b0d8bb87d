use qpat::acoustic::PressureData;
use qpat::experiment::{
    add_noise, build_model, noise_norm, simulate_data, GridSpec, Phantom, SetupSpec,
};
use qpat::field::ParameterPair;
use qpat::forward::ForwardModel;
use qpat::optim_standard::{
    loping_landweber_kaczmarz, projected_landweber, proximal_gradient,
    proximal_stochastic_gradient, OptimConfig, OptimResult, Problem, StepSchedule,
};
use qpat::regularizers::{FeasibleSet, RegOperator};
use qpat::trace::IterateTrace;

struct Fixture {
    model: ForwardModel,
    data: Vec<PressureData>,
    truth: ParameterPair,
    reg: RegOperator,
    set: FeasibleSet,
    mu0: ParameterPair,
}

impl Fixture {
    /// Reconstruction grid `cells`, data from a finer grid.
    fn new(cells: usize) -> Self {
        let mut setup = SetupSpec::desk(cells);
        setup.n_det = 32;
        let model = build_model(GridSpec { cells, n_theta: 8 }, &setup).unwrap();
        let fine = build_model(
            GridSpec {
                cells: cells + cells / 4,
                n_theta: 16,
            },
            &setup,
        )
        .unwrap();
        let data = simulate_data(&fine, &Phantom::on_mesh(&fine.transport.mesh).mu).unwrap();
        let mesh = &model.transport.mesh;
        let truth = Phantom::on_mesh(mesh).mu;
        let set = FeasibleSet::new(3.0, 6.0).with_boundary(mesh, &truth);
        let mu0 = set.project(&ParameterPair::constant(model.n_nodes(), 0.3, 3.0));
        let reg = RegOperator::laplacian(mesh, 100.0);
        Fixture {
            model,
            data,
            truth,
            reg,
            set,
            mu0,
        }
    }

    fn problem(&self) -> Problem<'_> {
        Problem {
            model: &self.model,
            data: &self.data,
            reg: &self.reg,
            set: &self.set,
            truth: Some(&self.truth),
        }
    }

    fn initial_error(&self) -> f64 {
        qpat::experiment::relative_error(&self.mu0.mu_a, &self.truth.mu_a, self.model.mass())
    }
}

fn max_diff(a: &ParameterPair, b: &ParameterPair) -> f64 {
    a.mu_a
        .iter()
        .zip(&b.mu_a)
        .chain(a.mu_s.iter().zip(&b.mu_s))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Iterates `μ^1 … μ^k` of an algorithm, obtained by rerunning with
/// increasing iteration budgets.
fn trajectory(
    k: usize,
    cfg: &OptimConfig,
    run: impl Fn(&OptimConfig) -> OptimResult,
) -> Vec<ParameterPair> {
    (1..=k)
        .map(|m| {
            let c = OptimConfig {
                max_iter: m,
                ..cfg.clone()
            };
            run(&c).mu
        })
        .collect()
}

fn without_times(t: &IterateTrace) -> IterateTrace {
    let mut t = t.clone();
    t.records.iter_mut().for_each(|r| r.wall_s = 0.0);
    t
}

#[test]
fn full_batch_stochastic_gradient_is_proximal_gradient() {
    let fx = Fixture::new(8);
    let p = fx.problem();
    let cfg = OptimConfig {
        batch_size: fx.model.len(),
        ..OptimConfig::default()
    };
    let a = trajectory(5, &cfg, |c| proximal_gradient(&p, &fx.mu0, c).unwrap());
    let b = trajectory(5, &cfg, |c| {
        proximal_stochastic_gradient(&p, &fx.mu0, c).unwrap()
    });
    for (k, (x, y)) in a.iter().zip(&b).enumerate() {
        assert!(max_diff(x, y) <= 1e-12, "iteration {k}: {}", max_diff(x, y));
    }
    assert!(max_diff(&a[4], &fx.mu0) > 0.0);
}

#[test]
fn unregularized_proximal_gradient_is_projected_landweber() {
    let fx = Fixture::new(8);
    let p = fx.problem();
    let cfg = OptimConfig {
        lambda: 0.0,
        step: StepSchedule::Constant(5.0),
        ..OptimConfig::default()
    };
    let a = trajectory(5, &cfg, |c| proximal_gradient(&p, &fx.mu0, c).unwrap());
    let b = trajectory(5, &cfg, |c| projected_landweber(&p, &fx.mu0, c).unwrap());
    for (k, (x, y)) in a.iter().zip(&b).enumerate() {
        assert!(max_diff(x, y) <= 1e-12, "iteration {k}: {}", max_diff(x, y));
    }
}

#[test]
fn zero_data_and_zero_start_is_a_fixed_point() {
    let fx = Fixture::new(6);
    let n = fx.model.n_nodes();
    let zero = ParameterPair::constant(n, 0.0, 3.0);
    let set = FeasibleSet::new(3.0, 6.0).with_boundary(&fx.model.transport.mesh, &zero);
    let data: Vec<_> = (0..fx.model.len()).map(|_| fx.model.wave.zeros()).collect();
    let p = Problem {
        data: &data,
        set: &set,
        ..fx.problem()
    };
    let cfg = OptimConfig {
        lambda: 0.0,
        max_iter: 3,
        ..OptimConfig::default()
    };
    let out = proximal_gradient(&p, &zero, &cfg).unwrap();
    assert_eq!(out.mu, zero);
    assert!(out.trace.records.iter().all(|r| r.objective == 0.0));
}

#[test]
fn proximal_gradient_reduces_error_with_monotone_objective() {
    let fx = Fixture::new(16);
    let cfg = OptimConfig::default();
    let out = proximal_gradient(&fx.problem(), &fx.mu0, &cfg).unwrap();
    let recs = &out.trace.records;
    assert_eq!(recs.len(), 10);
    assert!(recs[9].rel_err_mu_a < fx.initial_error());
    for w in recs.windows(2) {
        assert!(
            w[1].objective <= w[0].objective,
            "{} > {}",
            w[1].objective,
            w[0].objective
        );
    }
    assert!(fx.set.contains(&out.mu, 1e-14));
    // scattering held at its start value
    assert_eq!(out.mu.mu_s, fx.mu0.mu_s);
}

#[test]
fn solve_counts_per_iteration() {
    let fx = Fixture::new(8);
    let p = fx.problem();
    let n = fx.model.len() as u64;
    let cfg = OptimConfig {
        max_iter: 4,
        ..OptimConfig::default()
    };
    let full = proximal_gradient(&p, &fx.mu0, &cfg).unwrap();
    let sto = proximal_stochastic_gradient(&p, &fx.mu0, &cfg).unwrap();
    let mut prev = (0, 0);
    for (a, b) in full.trace.records.iter().zip(&sto.trace.records) {
        assert_eq!(a.rte_solves - prev.0, 2 * n);
        assert_eq!(b.rte_solves - prev.1, 2);
        prev = (a.rte_solves, b.rte_solves);
    }
}

#[test]
fn stochastic_runs_are_reproducible() {
    let fx = Fixture::new(8);
    let p = fx.problem();
    let cfg = OptimConfig {
        max_iter: 6,
        seed: 42,
        ..OptimConfig::default()
    };
    let a = proximal_stochastic_gradient(&p, &fx.mu0, &cfg).unwrap();
    fx.model.clear_cache();
    let b = proximal_stochastic_gradient(&p, &fx.mu0, &cfg).unwrap();
    assert_eq!(a.mu, b.mu);
    let (ta, tb) = (without_times(&a.trace), without_times(&b.trace));
    let picks = |t: &IterateTrace| {
        t.records
            .iter()
            .map(|r| r.picked_i.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(picks(&ta), picks(&tb));
    for (x, y) in ta.records.iter().zip(&tb.records) {
        assert_eq!((x.objective, x.rel_err_mu_a), (y.objective, y.rel_err_mu_a));
    }
    let other =
        proximal_stochastic_gradient(&p, &fx.mu0, &OptimConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(picks(&ta), picks(&other.trace));
}

#[test]
fn loping_never_skips_on_exact_data() {
    let fx = Fixture::new(8);
    let cfg = OptimConfig {
        max_iter: 12,
        delta: vec![1e-300; fx.model.len()],
        ..OptimConfig::default()
    };
    let out = loping_landweber_kaczmarz(&fx.problem(), &fx.mu0, &cfg).unwrap();
    assert_eq!(out.trace.len(), 12);
    assert!(out.trace.records.iter().all(|r| r.omega == Some(true)));
    assert!(!out.stopped_early);
}

#[test]
fn loping_stops_without_updates_when_all_residuals_are_small() {
    let fx = Fixture::new(8);
    let cfg = OptimConfig {
        max_iter: 100,
        delta: vec![1e6; fx.model.len()],
        ..OptimConfig::default()
    };
    fx.model.clear_cache();
    let out = loping_landweber_kaczmarz(&fx.problem(), &fx.mu0, &cfg).unwrap();
    assert!(out.stopped_early);
    assert_eq!(out.mu, fx.mu0);
    assert_eq!(out.trace.skips(), out.trace.len());
    // one forward solve per illumination, reused when drawn again
    assert_eq!(out.trace.last().unwrap().rte_solves, fx.model.len() as u64);
}

#[test]
fn loping_skips_cost_at_most_the_residual_check() {
    let fx = Fixture::new(8);
    let mut data = fx.data.clone();
    let masks: Vec<_> = fx.model.illuminations.iter().map(|il| &il.mask).collect();
    let sigma = add_noise(&mut data, &masks, 0.05, 3).unwrap();
    let delta: Vec<f64> = fx
        .model
        .illuminations
        .iter()
        .map(|il| noise_norm(sigma, &il.mask, fx.model.wave.y_weights()))
        .collect();
    let p = Problem {
        data: &data,
        ..fx.problem()
    };
    let cfg = OptimConfig {
        max_iter: 60,
        delta,
        seed: 5,
        ..OptimConfig::default()
    };
    let out = loping_landweber_kaczmarz(&p, &fx.mu0, &cfg).unwrap();
    assert!(
        out.trace.skips() > 0,
        "no skip in {} steps",
        out.trace.len()
    );
    let mut prev = 0;
    for r in &out.trace.records {
        let spent = r.rte_solves - prev;
        match r.omega {
            Some(true) => assert!(spent <= 2),
            _ => assert!(spent <= 1),
        }
        prev = r.rte_solves;
        assert!(fx.set.contains(&out.mu, 1e-14));
    }
}

#[test]
fn landweber_stops_at_the_discrepancy_level() {
    let fx = Fixture::new(8);
    let n = fx.model.len();
    let p = fx.problem();
    let initial: f64 = (0..n)
        .map(|i| {
            fx.model
                .residual_norm(&fx.mu0, &fx.data[i], i)
                .unwrap()
                .powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let cfg = OptimConfig {
        max_iter: 50,
        step: StepSchedule::Constant(5.0),
        tau: 1.0,
        // total threshold at 60% of the initial residual
        delta: vec![0.6 * initial / (n as f64).sqrt(); n],
        ..OptimConfig::default()
    };
    let out = projected_landweber(&p, &fx.mu0, &cfg).unwrap();
    assert!(out.stopped_early);
    assert!(!out.trace.is_empty() && out.trace.len() < 50);
    let last: f64 = (0..n)
        .map(|i| {
            fx.model
                .residual_norm(&out.mu, &fx.data[i], i)
                .unwrap()
                .powi(2)
        })
        .sum::<f64>()
        .sqrt();
    assert!(last <= 0.6 * initial * (1.0 + 1e-12));
}

#[test]
fn invalid_configurations_are_rejected() {
    let fx = Fixture::new(4);
    let p = fx.problem();
    let n = fx.model.len();
    for cfg in [
        OptimConfig {
            lambda: -1.0,
            ..OptimConfig::default()
        },
        OptimConfig {
            step: StepSchedule::Constant(0.0),
            ..OptimConfig::default()
        },
        OptimConfig {
            batch_size: 0,
            ..OptimConfig::default()
        },
        OptimConfig {
            batch_size: n + 1,
            ..OptimConfig::default()
        },
        OptimConfig {
            tau: 0.5,
            ..OptimConfig::default()
        },
    ] {
        assert!(proximal_stochastic_gradient(&p, &fx.mu0, &cfg).is_err());
    }
    // loping needs one noise estimate per illumination
    assert!(loping_landweber_kaczmarz(&p, &fx.mu0, &OptimConfig::default()).is_err());
    // infeasible start
    let mut bad = fx.mu0.clone();
    bad.mu_a[0] = -1.0;
    assert!(proximal_gradient(&p, &bad, &OptimConfig::default()).is_err());
}
