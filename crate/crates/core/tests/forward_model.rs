use qpat::acoustic::PressureData;
use qpat::experiment::{build_model, simulate_data, GridSpec, Phantom, SetupSpec};
use qpat::field::ParameterPair;
use qpat::forward::ForwardModel;
use qpat::grid::Side;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(cells: usize, n_theta: usize) -> ForwardModel {
    let mut setup = SetupSpec::desk(cells);
    setup.n_det = 32;
    build_model(GridSpec { cells, n_theta }, &setup).unwrap()
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

#[test]
fn derivative_adjoint_identity() {
    let model = small_model(8, 8);
    let n = model.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..20 {
        let mu = random_mu(&mut rng, n);
        let h = random_dir(&mut rng, n);
        let v = random_data(&mut rng, &model);
        let i = trial % model.len();
        let lhs = model.wave.inner(&model.derivative(&mu, &h, i).unwrap(), &v);
        let g = model.adjoint(&mu, &v, i).unwrap();
        let rhs = h.inner(&g, model.mass());
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs());
        assert!(rel <= 1e-6, "trial {trial}: {lhs} vs {rhs} (rel {rel:.2e})");
    }
}

#[test]
fn derivative_matches_finite_differences() {
    let model = small_model(8, 8);
    let n = model.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mu = random_mu(&mut rng, n);
    let h = random_dir(&mut rng, n);
    let d = model.derivative(&mu, &h, 1).unwrap();
    let f0 = model.forward(&mu, 1).unwrap();
    let mut errs = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
        let mut shifted = mu.clone();
        shifted.axpy(eps, &h);
        let f1 = model.forward(&shifted, 1).unwrap();
        let mut diff = model.wave.zeros();
        for k in 0..diff.values.len() {
            diff.values[k] = (f1.values[k] - f0.values[k]) / eps - d.values[k];
        }
        errs.push(model.wave.norm_sq(&diff).sqrt() / model.wave.norm_sq(&d).sqrt());
    }
    // first-order decay until round-off
    assert!(errs[1] < 0.2 * errs[0], "{errs:?}");
    assert!(errs[2] < 0.2 * errs[1], "{errs:?}");
    assert!(errs[3] < 1e-3, "{errs:?}");
    let zero = model.derivative(&mu, &ParameterPair::zeros(n), 1).unwrap();
    assert!(zero.values.iter().all(|&x| x == 0.0));
}

#[test]
fn derivative_rejects_infeasible_direction() {
    let model = small_model(4, 4);
    let n = model.n_nodes();
    let mut mu = ParameterPair::constant(n, 0.3, 3.0);
    mu.mu_a[3] = 0.0;
    let mut h = ParameterPair::zeros(n);
    h.mu_a[3] = -1.0;
    assert!(model.derivative(&mu, &h, 0).is_err());
}

#[test]
fn fidelity_gradient_matches_finite_differences() {
    let model = small_model(8, 8);
    let n = model.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let truth = random_mu(&mut rng, n);
    let data = simulate_data(&model, &truth).unwrap();
    for trial in 0..10 {
        let mu = random_mu(&mut rng, n);
        let h = random_dir(&mut rng, n);
        let i = trial % model.len();
        let (_, g) = model.fidelity_gradient(&mu, &data[i], i).unwrap();
        let eps = 1e-4;
        let mut plus = mu.clone();
        plus.axpy(eps, &h);
        let mut minus = mu.clone();
        minus.axpy(-eps, &h);
        let fd = (model.fidelity(&plus, &data[i], i).unwrap()
            - model.fidelity(&minus, &data[i], i).unwrap())
            / (2.0 * eps);
        let an = h.inner(&g, model.mass());
        let rel = (fd - an).abs() / fd.abs().max(an.abs());
        assert!(
            rel <= 1e-4,
            "trial {trial}: fd {fd} vs {an} (rel {rel:.2e})"
        );
    }
}

#[test]
fn gradient_cost_and_consistency() {
    let model = small_model(8, 8);
    let n = model.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = random_mu(&mut rng, n);
    let data = simulate_data(&model, &truth).unwrap();
    // exact data at the true coefficients
    model.clear_cache();
    for i in 0..model.len() {
        let (f, g) = model.fidelity_gradient(&truth, &data[i], i).unwrap();
        assert_eq!(f, 0.0);
        assert_eq!(g.norm(model.mass()), 0.0);
    }
    let mu = random_mu(&mut rng, n);
    model.clear_cache();
    let before = model.counters().snapshot();
    let (f, _) = model.fidelity_gradient(&mu, &data[2], 2).unwrap();
    let spent = model.counters().snapshot().since(&before);
    assert_eq!((spent.rte_solves, spent.adjoint_solves), (1, 1));
    assert!(f >= 0.0);
    // doubling the residual quadruples the fidelity
    let r = model.residual(&mu, &data[2], 2).unwrap();
    let mut shifted = data[2].clone();
    for (s, x) in shifted.values.iter_mut().zip(&r.values) {
        *s -= x;
    }
    let f2 = model.fidelity(&mu, &shifted, 2).unwrap();
    assert!((f2 - 4.0 * f).abs() <= 1e-12 * f2);
}

#[test]
fn heating_and_forward_trivial_cases() {
    let model = small_model(8, 8);
    let n = model.n_nodes();
    let mu = ParameterPair::new(vec![0.0; n], vec![3.0; n]);
    for i in 0..model.len() {
        assert!(model.heating(&mu, i).unwrap().iter().all(|&x| x == 0.0));
        assert!(model
            .forward(&mu, i)
            .unwrap()
            .values
            .iter()
            .all(|&x| x == 0.0));
    }
    // doubling the boundary source doubles the data
    let mut setup = SetupSpec::desk(8);
    setup.n_det = 32;
    let grid = GridSpec {
        cells: 8,
        n_theta: 8,
    };
    let base = build_model(grid, &setup).unwrap();
    let mut doubled = build_model(grid, &setup).unwrap();
    for il in doubled.illuminations.iter_mut() {
        il.source = il.source.scaled(2.0);
    }
    let doubled = ForwardModel::new(
        doubled.transport.clone(),
        doubled.wave.clone(),
        doubled.illuminations.clone(),
    )
    .unwrap();
    let p = Phantom::on_mesh(&base.transport.mesh);
    let a = base.forward(&p.mu, 0).unwrap();
    let b = doubled.forward(&p.mu, 0).unwrap();
    let scale = a.values.iter().map(|x| x.abs()).fold(0.0, f64::max);
    for (x, y) in a.values.iter().zip(&b.values) {
        assert!((2.0 * x - y).abs() <= 1e-9 * scale);
    }
}

#[test]
fn heating_follows_beer_lambert_without_scattering() {
    let mut setup = SetupSpec::desk(40);
    setup.sides = vec![Side::Top];
    setup.n_det = 16;
    let model = build_model(
        GridSpec {
            cells: 40,
            n_theta: 16,
        },
        &setup,
    )
    .unwrap();
    let mesh = &model.transport.mesh;
    let n = model.n_nodes();
    let mu_a = 0.4;
    let mu = ParameterPair::constant(n, mu_a, 0.0);
    let h = model.heating(&mu, 0).unwrap();
    let mut worst = 0.0f64;
    for (p, x) in mesh.nodes.iter().enumerate() {
        let exact = mu_a * (-mu_a * (1.0 - x[1])).exp();
        worst = worst.max((h[p] - exact).abs() / exact);
    }
    assert!(worst < 1e-2, "max relative deviation {worst}");
    // monotone decay with depth along every column
    let ns = mesh.n_side;
    for ix in 0..ns {
        for iy in 0..ns - 1 {
            assert!(h[iy * ns + ix] < h[(iy + 1) * ns + ix]);
        }
    }
}

#[test]
fn caches_give_bitwise_identical_sums() {
    let model = small_model(6, 8);
    let n = model.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let truth = random_mu(&mut rng, n);
    let data = simulate_data(&model, &truth).unwrap();
    let mu = random_mu(&mut rng, n);
    let mut total = ParameterPair::zeros(n);
    for i in 0..model.len() {
        total.axpy(1.0, &model.fidelity_gradient(&mu, &data[i], i).unwrap().1);
    }
    let mut again = ParameterPair::zeros(n);
    for i in 0..model.len() {
        model.clear_cache();
        again.axpy(1.0, &model.fidelity_gradient(&mu, &data[i], i).unwrap().1);
    }
    assert_eq!(total, again);
}

#[test]
fn gradient_lipschitz_estimate_is_stable() {
    let model = small_model(8, 8);
    let n = model.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let truth = random_mu(&mut rng, n);
    let data = simulate_data(&model, &truth).unwrap();
    let mass = model.mass();
    let grad = |mu: &ParameterPair| model.fidelity_gradient(mu, &data[0], 0).unwrap().1;
    let (mut l_full, mut l_half) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let a = random_mu(&mut rng, n);
        let b = random_mu(&mut rng, n);
        // midpoint stays feasible since the box is convex
        let mut mid = a.clone();
        mid.axpy(1.0, &b);
        let mid = mid.scaled(0.5);
        let ga = grad(&a);
        let ratio = |g2: &ParameterPair, x: &ParameterPair| {
            let mut dg = ga.clone();
            dg.axpy(-1.0, g2);
            let mut dx = a.clone();
            dx.axpy(-1.0, x);
            dg.norm(mass) / dx.norm(mass)
        };
        l_full = l_full.max(ratio(&grad(&b), &b));
        l_half = l_half.max(ratio(&grad(&mid), &mid));
    }
    assert!(l_full.is_finite() && l_full > 0.0);
    assert!(
        l_half <= 2.0 * l_full && l_half >= 0.5 * l_full,
        "{l_full} vs {l_half}"
    );
}
