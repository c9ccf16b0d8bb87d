//! Quadratic smoothness penalty, its proximal map, the feasible set and the
//! composite proximal map computed with Dykstra's algorithm.

use crate::error::{check_len, Result};
use crate::field::ParameterPair;
use crate::grid::SpatialMesh;
use crate::linalg::{conjugate_gradient, wdot, CsrMatrix};

/// Penalty `½‖Lμ‖² = ½‖L_a μ_a‖² + ½‖L_s μ_s‖²`, where each `L` maps nodal
/// fields to rows weighted by `row_weights` and the parameter space carries
/// the weights `mass`.
#[derive(Debug, Clone)]
pub struct RegOperator {
    pub l_a: CsrMatrix,
    pub l_s: CsrMatrix,
    pub row_weights: Vec<f64>,
    pub mass: Vec<f64>,
}

impl RegOperator {
    /// Five-point Laplacian at interior nodes (boundary values act as the
    /// Dirichlet lift); `L_s = scale_s · L_a`.
    pub fn laplacian(mesh: &SpatialMesh, scale_s: f64) -> Self {
        let n = mesh.n_side;
        let h2 = mesh.h * mesh.h;
        let mut trip = Vec::new();
        let mut row = 0;
        for iy in 1..n - 1 {
            for ix in 1..n - 1 {
                let p = iy * n + ix;
                trip.push((row, p, -4.0 / h2));
                for q in [p - 1, p + 1, p - n, p + n] {
                    trip.push((row, q, 1.0 / h2));
                }
                row += 1;
            }
        }
        let l_a = CsrMatrix::from_triplets(row, mesh.num_nodes(), &trip);
        let l_s = scaled(&l_a, scale_s);
        RegOperator {
            l_a,
            l_s,
            row_weights: vec![h2; row],
            mass: mesh.lumped_mass.clone(),
        }
    }

    /// Second differences on a line of `n` nodes with spacing `h`.
    pub fn laplacian_1d(n: usize, h: f64, scale_s: f64) -> Self {
        let mut trip = Vec::new();
        for r in 0..n.saturating_sub(2) {
            trip.push((r, r, 1.0 / (h * h)));
            trip.push((r, r + 1, -2.0 / (h * h)));
            trip.push((r, r + 2, 1.0 / (h * h)));
        }
        let l_a = CsrMatrix::from_triplets(n.saturating_sub(2), n, &trip);
        let l_s = scaled(&l_a, scale_s);
        let mut mass = vec![h; n];
        if n > 1 {
            mass[0] = 0.5 * h;
            mass[n - 1] = 0.5 * h;
        }
        RegOperator {
            l_a,
            l_s,
            row_weights: vec![h; n.saturating_sub(2)],
            mass,
        }
    }

    /// `L = I` with unit weights.
    pub fn identity(n: usize) -> Self {
        let trip: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        let id = CsrMatrix::from_triplets(n, n, &trip);
        RegOperator {
            l_a: id.clone(),
            l_s: id,
            row_weights: vec![1.0; n],
            mass: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// `(L_a μ_a, L_s μ_s)`
    pub fn apply(&self, mu: &ParameterPair) -> (Vec<f64>, Vec<f64>) {
        let mut a = vec![0.0; self.l_a.nrows];
        let mut s = vec![0.0; self.l_s.nrows];
        self.l_a.mul_vec(&mu.mu_a, &mut a);
        self.l_s.mul_vec(&mu.mu_s, &mut s);
        (a, s)
    }

    /// `½‖Lμ‖²`
    pub fn value(&self, mu: &ParameterPair) -> f64 {
        let (a, s) = self.apply(mu);
        0.5 * (wdot(&self.row_weights, &a, &a) + wdot(&self.row_weights, &s, &s))
    }

    fn normal_apply(l: &CsrMatrix, rw: &[f64], mass: &[f64], x: &[f64], out: &mut [f64]) {
        let mut lx = vec![0.0; l.nrows];
        l.mul_vec(x, &mut lx);
        for (v, w) in lx.iter_mut().zip(rw) {
            *v *= w;
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        l.mul_transpose_add(&lx, out);
        for (o, m) in out.iter_mut().zip(mass) {
            *o /= m;
        }
    }

    /// `L*Lμ`, the gradient of `½‖Lμ‖²` in the weighted parameter product.
    pub fn normal(&self, mu: &ParameterPair) -> ParameterPair {
        let n = self.len();
        let mut a = vec![0.0; n];
        let mut s = vec![0.0; n];
        Self::normal_apply(&self.l_a, &self.row_weights, &self.mass, &mu.mu_a, &mut a);
        Self::normal_apply(&self.l_s, &self.row_weights, &self.mass, &mu.mu_s, &mut s);
        ParameterPair::new(a, s)
    }

    /// `(I + t L*L)⁻¹ x` by conjugate gradients (relative tolerance 1e-10).
    pub fn prox_quad(&self, x: &ParameterPair, t: f64) -> Result<ParameterPair> {
        check_len("prox input", self.len(), x.len())?;
        if t == 0.0 {
            return Ok(x.clone());
        }
        let n = self.len();
        let solve = |l: &CsrMatrix, b: &[f64]| -> Result<Vec<f64>> {
            let mut y = b.to_vec();
            let apply = |v: &[f64], out: &mut [f64]| {
                Self::normal_apply(l, &self.row_weights, &self.mass, v, out);
                for (o, vi) in out.iter_mut().zip(v) {
                    *o = vi + t * *o;
                }
            };
            conjugate_gradient(apply, &self.mass, b, &mut y, 1e-10, 10 * n + 100)?;
            Ok(y)
        };
        Ok(ParameterPair::new(
            solve(&self.l_a, &x.mu_a)?,
            solve(&self.l_s, &x.mu_s)?,
        ))
    }
}

fn scaled(m: &CsrMatrix, c: f64) -> CsrMatrix {
    let mut out = m.clone();
    out.values.iter_mut().for_each(|v| *v *= c);
    out
}

/// Box constraints with known boundary values.
#[derive(Debug, Clone)]
pub struct FeasibleSet {
    pub lower: f64,
    pub upper_a: f64,
    pub upper_s: f64,
    /// `(node, μ_a, μ_s)` values that are known exactly.
    pub fixed: Vec<(usize, f64, f64)>,
}

impl FeasibleSet {
    pub fn new(upper_a: f64, upper_s: f64) -> Self {
        FeasibleSet {
            lower: 0.0,
            upper_a,
            upper_s,
            fixed: Vec::new(),
        }
    }

    /// Whole space (no constraint).
    pub fn unbounded() -> Self {
        FeasibleSet {
            lower: f64::NEG_INFINITY,
            upper_a: f64::INFINITY,
            upper_s: f64::INFINITY,
            fixed: Vec::new(),
        }
    }

    /// Fixes `μ` on the boundary nodes of `mesh` to the values of `known`.
    pub fn with_boundary(mut self, mesh: &SpatialMesh, known: &ParameterPair) -> Self {
        self.fixed = mesh
            .boundary_nodes()
            .into_iter()
            .map(|p| (p, known.mu_a[p], known.mu_s[p]))
            .collect();
        self
    }

    /// Clamp to the box only.
    pub fn clamp(&self, mu: &mut ParameterPair) {
        for v in mu.mu_a.iter_mut() {
            *v = v.max(self.lower).min(self.upper_a);
        }
        for v in mu.mu_s.iter_mut() {
            *v = v.max(self.lower).min(self.upper_s);
        }
    }

    /// `P_D`: clamp to the box, then reset the known boundary values.
    pub fn project(&self, mu: &ParameterPair) -> ParameterPair {
        let mut out = mu.clone();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, mu: &mut ParameterPair) {
        self.clamp(mu);
        for &(p, a, s) in &self.fixed {
            mu.mu_a[p] = a;
            mu.mu_s[p] = s;
        }
    }

    pub fn contains(&self, mu: &ParameterPair, tol: f64) -> bool {
        let in_box = mu
            .mu_a
            .iter()
            .all(|&v| v >= self.lower - tol && v <= self.upper_a + tol)
            && mu
                .mu_s
                .iter()
                .all(|&v| v >= self.lower - tol && v <= self.upper_s + tol);
        in_box
            && self
                .fixed
                .iter()
                .all(|&(p, a, s)| (mu.mu_a[p] - a).abs() <= tol && (mu.mu_s[p] - s).abs() <= tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DykstraConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        DykstraConfig {
            max_iter: 50,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DykstraOutcome {
    pub mu: ParameterPair,
    pub iterations: usize,
    pub converged: bool,
}

/// `prox_{t G}(x)` for `G = (λ/2)‖Lμ‖² + χ_D`, with `t` already multiplied
/// by `λ`: alternates the quadratic prox and `P_D` with correction terms.
pub fn dykstra(
    reg: &RegOperator,
    set: &FeasibleSet,
    x: &ParameterPair,
    t: f64,
    cfg: &DykstraConfig,
) -> Result<DykstraOutcome> {
    check_len("dykstra input", reg.len(), x.len())?;
    let n = x.len();
    if t == 0.0 {
        return Ok(DykstraOutcome {
            mu: set.project(x),
            iterations: 0,
            converged: true,
        });
    }
    let mass = &reg.mass;
    let mut xm = x.clone();
    let mut p = ParameterPair::zeros(n);
    let mut q = ParameterPair::zeros(n);
    for m in 1..=cfg.max_iter.max(1) {
        let mut xp = xm.clone();
        xp.axpy(1.0, &p);
        let y = reg.prox_quad(&xp, t)?;
        // p ← x + p − y
        p = xp;
        p.axpy(-1.0, &y);
        let mut yq = y.clone();
        yq.axpy(1.0, &q);
        let next = set.project(&yq);
        q = yq;
        q.axpy(-1.0, &next);
        let mut diff = next.clone();
        diff.axpy(-1.0, &xm);
        let change = diff.norm(mass);
        let scale = next.norm(mass).max(1e-300);
        xm = next;
        if change <= cfg.tol * scale {
            return Ok(DykstraOutcome {
                mu: xm,
                iterations: m,
                converged: true,
            });
        }
    }
    Ok(DykstraOutcome {
        mu: xm,
        iterations: cfg.max_iter,
        converged: false,
    })
}
