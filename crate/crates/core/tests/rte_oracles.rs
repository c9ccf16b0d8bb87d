use std::f64::consts::PI;
use std::sync::Arc;

use qpat::experiment::{side_source, Phantom};
use qpat::field::{ParameterPair, PhotonField, SourcePair};
use qpat::grid::{AngularGrid, Side, SpatialMesh};
use qpat::rte::TransportOperator;
use qpat::scattering::ScatteringKernel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn operator(cells: usize, n_theta: usize, g: f64) -> Arc<TransportOperator> {
    operator_tol(cells, n_theta, g, 1e-8)
}

fn operator_tol(cells: usize, n_theta: usize, g: f64, tol: f64) -> Arc<TransportOperator> {
    let mesh = Arc::new(SpatialMesh::with_cells(cells));
    let angles = Arc::new(AngularGrid::new(n_theta).unwrap());
    let kernel = Arc::new(ScatteringKernel::new(&angles, g).unwrap());
    let d = mesh.h;
    Arc::new(
        TransportOperator::new(mesh, angles, kernel, d)
            .unwrap()
            .with_linear_tol(tol),
    )
}

// Degree-5 symmetric rule on the reference triangle (barycentric, weights
// summing to one).
fn triangle_rule() -> Vec<([f64; 3], f64)> {
    let mut pts = vec![([1.0 / 3.0; 3], 0.225)];
    for &(a, b, w) in &[
        (0.059715871789770, 0.470142064105115, 0.132394152788506),
        (0.797426985353087, 0.101286507323456, 0.125939180544827),
    ] {
        pts.push(([a, b, b], w));
        pts.push(([b, a, b], w));
        pts.push(([b, b, a], w));
    }
    pts
}

/// Barycentric gradients of a triangle, computed from the vertex coordinates.
fn bary_gradients(p: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for a in 0..3 {
        let b = (a + 1) % 3;
        let c = (a + 2) % 3;
        g[a] = [(p[b][1] - p[c][1]) / det, (p[c][0] - p[b][0]) / det];
    }
    g
}

#[test]
fn two_triangle_entries_match_hand_quadrature() {
    let op = operator(1, 4, 0.4);
    let mesh = &op.mesh;
    assert_eq!(mesh.num_triangles(), 2);
    let nn = mesh.num_nodes();
    let nd = 4;
    let mu = ParameterPair::new(vec![0.3, 0.1, 0.7, 0.2], vec![2.0, 4.5, 1.0, 3.0]);
    let csr = op.assemble(&mu).unwrap().to_csr().to_dense();

    let w = 2.0 * PI / nd as f64;
    let d = mesh.h;
    let dirs: Vec<[f64; 2]> = (0..nd)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / nd as f64;
            [t.cos(), t.sin()]
        })
        .collect();
    let mut expect = vec![vec![0.0; nn * nd]; nn * nd];
    for tri in &mesh.triangles {
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let g = bary_gradients(p);
        let area = 0.5
            * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
                - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]))
                .abs();
        for (lam, qw) in triangle_rule() {
            let ma: f64 = (0..3).map(|k| lam[k] * mu.mu_a[tri[k]]).sum();
            let ms: f64 = (0..3).map(|k| lam[k] * mu.mu_s[tri[k]]).sum();
            for (j, th) in dirs.iter().enumerate() {
                let dpsi: Vec<f64> = (0..3).map(|k| th[0] * g[k][0] + th[1] * g[k][1]).collect();
                for n in 0..3 {
                    let test = lam[n] + d * dpsi[n];
                    for m in 0..3 {
                        let row = j * nn + tri[n];
                        let local =
                            -lam[m] * dpsi[n] + d * dpsi[m] * dpsi[n] + (ma + ms) * lam[m] * test;
                        expect[row][j * nn + tri[m]] += w * qw * area * local;
                        for l in 0..nd {
                            let k = op.kernel.entry(j, l);
                            expect[row][l * nn + tri[m]] -= w * qw * area * k * ms * lam[m] * test;
                        }
                    }
                }
            }
        }
    }
    // outflow boundary term, two-point Gauss on each edge
    let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    for edge in &mesh.boundary_edges {
        let nu = edge.side.normal();
        for (j, th) in dirs.iter().enumerate() {
            let tn = th[0] * nu[0] + th[1] * nu[1];
            if tn <= 1e-12 {
                continue;
            }
            for &s in &gauss {
                let phi = [1.0 - s, s];
                for a in 0..2 {
                    for b in 0..2 {
                        expect[j * nn + edge.nodes[a]][j * nn + edge.nodes[b]] +=
                            w * tn * edge.length * 0.5 * phi[a] * phi[b];
                    }
                }
            }
        }
    }
    let scale = expect.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for r in 0..nn * nd {
        for c in 0..nn * nd {
            assert!(
                (csr[r][c] - expect[r][c]).abs() <= 1e-12 * scale,
                "entry ({r},{c}): {} vs {}",
                csr[r][c],
                expect[r][c]
            );
        }
    }
}

fn weighted_norm(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| a * a * b).sum::<f64>().sqrt()
}

/// L² norm of the inflow data over Γ−, trapezoid rule along each edge.
fn inflow_norm(op: &TransportOperator, q: &PhotonField) -> f64 {
    let w = op.angles.weight;
    let mut acc = 0.0;
    for (j, th) in op.angles.directions.iter().enumerate() {
        for edge in &op.mesh.boundary_edges {
            let nu = edge.side.normal();
            if th[0] * nu[0] + th[1] * nu[1] < 0.0 {
                let [a, b] = edge.nodes;
                acc += w * edge.length * 0.5 * (q.get(a, j).powi(2) + q.get(b, j).powi(2));
            }
        }
    }
    acc.sqrt()
}

#[test]
fn solution_bounded_by_sources_and_positive() {
    let op = operator(40, 16, 0.8);
    let mesh = &op.mesh;
    let mu = Phantom::on_mesh(mesh).mu;
    let sys = op.assemble(&mu).unwrap();
    let fw = op.field_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut sources: Vec<SourcePair> = Side::ALL
        .iter()
        .map(|&s| side_source(mesh, &op.angles, s))
        .collect();
    let mut interior = SourcePair::zeros(op.n_nodes(), op.n_dirs());
    interior
        .interior
        .values
        .iter_mut()
        .for_each(|v| *v = rng.random_range(0.0..1.0));
    sources.push(interior);

    let mut ratios = Vec::new();
    for q in &sources {
        let phi = sys.solve(q).unwrap();
        let denom = weighted_norm(&q.interior.values, &fw) + inflow_norm(&op, &q.boundary);
        let ratio = weighted_norm(&phi.values, &fw) / denom;
        let phi3 = sys.solve(&q.scaled(3.0)).unwrap();
        let denom3 = weighted_norm(&q.scaled(3.0).interior.values, &fw)
            + inflow_norm(&op, &q.scaled(3.0).boundary);
        let ratio3 = weighted_norm(&phi3.values, &fw) / denom3;
        assert!((ratio3 / ratio - 1.0).abs() < 1e-6, "{ratio} vs {ratio3}");
        ratios.push(ratio);

        // nonnegative sources: the stabilized scheme may undershoot, but
        // only by a small fraction of the peak
        let max = phi.values.iter().cloned().fold(f64::MIN, f64::max);
        let min = phi.values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max > 0.0);
        assert!(min >= -0.05 * max, "undershoot {min} vs peak {max}");
    }
    let c = ratios.iter().cloned().fold(0.0, f64::max);
    assert!(
        c.is_finite() && c > 0.0 && c < 10.0,
        "stability constant {c}"
    );
}

#[test]
fn manufactured_solution_converges() {
    // μ_s = 0 decouples directions, so the error is purely spatial.
    let exact = |x: [f64; 2], th: [f64; 2]| (0.5 * x[0] - 0.3 * x[1]).exp() * (1.5 + th[0] * th[1]);
    let grad = |x: [f64; 2], th: [f64; 2]| {
        let e = exact(x, th);
        [0.5 * e, -0.3 * e]
    };
    let a0 = 0.7;
    let mut errors = Vec::new();
    for &cells in &[8usize, 16, 32] {
        let op = operator_tol(cells, 8, 0.0, 1e-12);
        let mesh = &op.mesh;
        let nn = op.n_nodes();
        let mu = ParameterPair::constant(nn, a0, 0.0);
        let mut src = SourcePair::zeros(nn, op.n_dirs());
        let mut truth = vec![0.0; op.dim()];
        for (j, th) in op.angles.directions.iter().enumerate() {
            for (p, x) in mesh.nodes.iter().enumerate() {
                let g = grad(*x, *th);
                let u = exact(*x, *th);
                src.interior.set(p, j, th[0] * g[0] + th[1] * g[1] + a0 * u);
                src.boundary.set(p, j, u);
                truth[j * nn + p] = u;
            }
        }
        let sys = op.assemble(&mu).unwrap();
        let phi = sys.solve(&src).unwrap();
        let diff: Vec<f64> = phi.values.iter().zip(&truth).map(|(a, b)| a - b).collect();
        errors.push(
            weighted_norm(&diff, &op.field_weights()) / weighted_norm(&truth, &op.field_weights()),
        );
    }
    for k in 1..errors.len() {
        let order = (errors[k - 1] / errors[k]).log2();
        assert!(order >= 1.0, "observed order {order} ({errors:?})");
    }
}
