use qpat::experiment::{
    build_model, relative_error, run_scenario, simulate_data, Algorithm, GridSpec, Phantom,
    Scenario, SetupSpec,
};
use qpat::field::ParameterPair;

fn data_l2(model_values: &[Vec<f64>], yw: &[f64]) -> f64 {
    model_values
        .iter()
        .map(|v| v.iter().zip(yw).map(|(a, w)| a * a * w).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn relative_difference(
    a: &[qpat::acoustic::PressureData],
    b: &[qpat::acoustic::PressureData],
    yw: &[f64],
) -> f64 {
    let diff: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.values.iter().zip(&y.values).map(|(p, q)| p - q).collect())
        .collect();
    let full: Vec<Vec<f64>> = a.iter().map(|d| d.values.clone()).collect();
    data_l2(&diff, yw) / data_l2(&full, yw)
}

#[test]
fn data_is_consistent_under_grid_refinement() {
    let setup = SetupSpec::desk(40);
    let fine = build_model(
        GridSpec {
            cells: 100,
            n_theta: 64,
        },
        &setup,
    )
    .unwrap();
    let half = build_model(
        GridSpec {
            cells: 50,
            n_theta: 32,
        },
        &setup,
    )
    .unwrap();
    let yw = fine.wave.y_weights();
    let smooth = |m: &qpat::grid::SpatialMesh| {
        let a = m.interpolate(|x| 0.3 + 0.7 * (-(x[0] * x[0] + (x[1] + 0.3).powi(2)) / 0.1).exp());
        ParameterPair::new(a, vec![3.0; m.num_nodes()])
    };
    let df = simulate_data(&fine, &smooth(&fine.transport.mesh)).unwrap();
    let dh = simulate_data(&half, &smooth(&half.transport.mesh)).unwrap();
    let rel = relative_difference(&df, &dh, yw);
    assert!(rel <= 0.05, "smooth absorption: relative difference {rel}");

    // The piecewise-constant phantom is resampled differently on each grid
    // (stripes are three cells wide at the coarse size), and the data are
    // dominated by its jumps: measured 0.154.
    let df = simulate_data(&fine, &Phantom::on_mesh(&fine.transport.mesh).mu).unwrap();
    let dh = simulate_data(&half, &Phantom::on_mesh(&half.transport.mesh).mu).unwrap();
    let rel = relative_difference(&df, &dh, yw);
    assert!(rel <= 0.2, "phantom: relative difference {rel}");
}

#[test]
fn data_respects_finite_speed() {
    let setup = SetupSpec::desk(20);
    let model = build_model(
        GridSpec {
            cells: 20,
            n_theta: 16,
        },
        &setup,
    )
    .unwrap();
    let data = simulate_data(&model, &Phantom::on_mesh(&model.transport.mesh).mu).unwrap();
    let geo = &model.wave.geometry;
    // the source lives in the unit square, so nothing reaches a detector
    // before R − √2 and the bulk has passed by R + √2
    let arrival = setup.radius - 2f64.sqrt();
    let passed = setup.radius + 2f64.sqrt() + 0.5;
    for d in &data {
        let peak = d.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak > 0.0);
        for k in 0..d.n_det {
            for (n, v) in d.trace(k).iter().enumerate() {
                let t = geo.time(n);
                if t < arrival - geo.dt {
                    assert_eq!(*v, 0.0, "signal before arrival at t={t}");
                }
                if t > passed {
                    assert!(
                        v.abs() <= 0.1 * peak,
                        "late signal {v} at t={t} (peak {peak})"
                    );
                }
            }
        }
    }
}

fn tiny_scenario(algorithm: Algorithm) -> Scenario {
    let mut s = Scenario::desk();
    s.data_grid = GridSpec {
        cells: 10,
        n_theta: 8,
    };
    s.recon_grid = GridSpec {
        cells: 8,
        n_theta: 8,
    };
    s.setup = SetupSpec::desk(8);
    s.setup.n_det = 32;
    s.noise_level = 0.005;
    s.noise_seed = 4;
    s.algorithm = algorithm;
    s.optim.max_iter = 3;
    s.mull.max_iter = 20;
    s
}

#[test]
fn scenario_runs_are_reproducible() {
    for alg in Algorithm::ALL {
        let a = run_scenario(&tiny_scenario(alg)).unwrap();
        let b = run_scenario(&tiny_scenario(alg)).unwrap();
        assert_eq!(a.mu, b.mu, "{}", alg.name());
        assert_eq!(a.trace.len(), b.trace.len());
        for (x, y) in a.trace.records.iter().zip(&b.trace.records) {
            assert_eq!(
                (x.objective, x.rel_err_mu_a, x.rte_solves),
                (y.objective, y.rel_err_mu_a, y.rte_solves)
            );
        }
        assert_eq!(a.counters, b.counters);
        assert!(a.final_error.is_finite());
        assert_eq!(Algorithm::parse(alg.name()), Some(alg));
    }
    assert_eq!(Algorithm::parse("sgd"), None);
}

#[test]
fn scenario_rejects_matching_grids() {
    let mut s = tiny_scenario(Algorithm::ProximalGradient);
    s.data_grid = s.recon_grid;
    assert!(s.simulate().is_err());
}

#[test]
fn zero_absorption_gives_zero_data() {
    let setup = SetupSpec::desk(8);
    let model = build_model(
        GridSpec {
            cells: 8,
            n_theta: 8,
        },
        &setup,
    )
    .unwrap();
    let mu = ParameterPair::constant(model.n_nodes(), 0.0, 3.0);
    for d in simulate_data(&model, &mu).unwrap() {
        assert!(d.values.iter().all(|&v| v == 0.0));
    }
    let m = model.mass();
    assert_eq!(
        relative_error(
            &mu.mu_a,
            &Phantom::on_mesh(&model.transport.mesh).mu.mu_a,
            m
        ),
        1.0
    );
}
