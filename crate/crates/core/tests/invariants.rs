use proptest::prelude::*;
use qpat::experiment::relative_error;
use qpat::field::ParameterPair;
use qpat::grid::SpatialMesh;
use qpat::regularizers::{dykstra, DykstraConfig, FeasibleSet, RegOperator};

const N: usize = 7;

fn pair() -> impl Strategy<Value = ParameterPair> {
    (
        proptest::collection::vec(-2.0f64..6.0, N),
        proptest::collection::vec(-2.0f64..12.0, N),
    )
        .prop_map(|(a, s)| ParameterPair::new(a, s))
}

fn dist(a: &ParameterPair, b: &ParameterPair, mass: &[f64]) -> f64 {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d.norm(mass)
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_nonexpansive(x in pair(), y in pair()) {
        let set = FeasibleSet::new(3.0, 6.0);
        let mass = vec![1.0; N];
        let px = set.project(&x);
        prop_assert!(set.contains(&px, 0.0));
        prop_assert_eq!(set.project(&px), px.clone());
        let py = set.project(&y);
        prop_assert!(dist(&px, &py, &mass) <= dist(&x, &y, &mass) + 1e-12);
    }

    #[test]
    fn dykstra_output_is_feasible_and_beats_projection(
        x in pair(),
        t in 0.0f64..0.5,
    ) {
        let reg = RegOperator::laplacian_1d(N, 1.0 / 6.0, 1.0);
        let set = FeasibleSet::new(3.0, 6.0);
        let cfg = DykstraConfig { max_iter: 2000, tol: 1e-13 };
        let out = dykstra(&reg, &set, &x, t, &cfg).unwrap().mu;
        prop_assert!(set.contains(&out, 1e-9));
        // prox optimality: the output beats the plain projection in the
        // prox objective
        let obj = |z: &ParameterPair| {
            let d = dist(z, &x, &reg.mass);
            0.5 * d * d + t * reg.value(z)
        };
        prop_assert!(obj(&out) <= obj(&set.project(&x)) + 1e-9);
    }

    #[test]
    fn relative_error_is_scale_invariant(
        est in proptest::collection::vec(0.0f64..2.0, 25),
        truth in proptest::collection::vec(0.1f64..2.0, 25),
        c in 0.1f64..10.0,
    ) {
        let mass = SpatialMesh::with_cells(4).lumped_mass;
        let e = relative_error(&est, &truth, &mass);
        let se: Vec<f64> = est.iter().map(|v| v * c).collect();
        let st: Vec<f64> = truth.iter().map(|v| v * c).collect();
        prop_assert!((relative_error(&se, &st, &mass) - e).abs() <= 1e-12 * e.max(1.0));
        prop_assert_eq!(relative_error(&truth, &truth, &mass), 0.0);
    }
}
