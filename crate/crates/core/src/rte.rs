//! Streamline-diffusion finite elements for the stationary transport
//! equation `θ·∇Φ + μ_aΦ + μ_s(I−K)Φ = q_i`, `Φ = q_o` on Γ−.
//!
//! Space is discretized with P1 elements on the uniform triangulation, the
//! direction variable with nodal (lumped) quadrature on the equispaced
//! angular grid. With test functions `ψ + D θ·∇ψ` the discrete equations for
//! direction `θ_j` read
//!
//! ```text
//! w [ −(Φ, θ·∇ψ) + D(θ·∇Φ, θ·∇ψ) + ⟨|θ·ν| Φ, ψ⟩_{Γ+}
//!     + ((μ_a+μ_s)Φ − μ_s KΦ, ψ + Dθ·∇ψ) ]
//!   = w [ ⟨|θ·ν| q_o, ψ⟩_{Γ−} + (q_i, ψ + Dθ·∇ψ) ]
//! ```
//!
//! The μ-independent advection blocks are assembled once per
//! (mesh, angles, kernel); μ enters only through element reaction terms.

use std::sync::Arc;

use crate::counters::Counters;
use crate::error::{check_len, QpatError, Result};
use crate::field::{ParameterPair, PhotonField, SourcePair};
use crate::grid::{AngularGrid, SpatialMesh};
use crate::linalg::{gmres, CsrMatrix, GmresConfig, Ilu0, LinearOperator, Preconditioner};
use crate::scattering::ScatteringKernel;

/// `∫_e ψ_n ψ_m ψ_p / |e|`
fn triple_coeff(n: usize, m: usize, p: usize) -> f64 {
    if n == m && m == p {
        1.0 / 10.0
    } else if n == m || m == p || n == p {
        1.0 / 30.0
    } else {
        1.0 / 60.0
    }
}

/// `∫_e ψ_p ψ_m / |e|`
fn pair_coeff(p: usize, m: usize) -> f64 {
    if p == m {
        1.0 / 6.0
    } else {
        1.0 / 12.0
    }
}

/// μ-independent part of the discrete transport operator.
#[derive(Debug)]
pub struct TransportOperator {
    pub mesh: Arc<SpatialMesh>,
    pub angles: Arc<AngularGrid>,
    pub kernel: Arc<ScatteringKernel>,
    /// Streamline-diffusion coefficient (cm).
    pub sd_coefficient: f64,
    /// Relative residual tolerance of the Krylov solves.
    pub linear_tol: f64,
    pub counters: Arc<Counters>,
    pattern_row_ptr: Vec<usize>,
    pattern_col_idx: Vec<u32>,
    elem_slots: Vec<[[usize; 3]; 3]>,
    areas: Vec<f64>,
    /// `θ_j·∇ψ_a` on each element, indexed `[j][e][a]`.
    beta: Vec<[f64; 3]>,
    /// Advection, streamline diffusion and outflow terms per direction,
    /// on the shared sparsity pattern, already scaled by the angular weight.
    advection: Vec<Vec<f64>>,
    triple: [[[f64; 3]; 3]; 3],
    pair: [[f64; 3]; 3],
}

impl TransportOperator {
    pub fn new(
        mesh: Arc<SpatialMesh>,
        angles: Arc<AngularGrid>,
        kernel: Arc<ScatteringKernel>,
        sd_coefficient: f64,
    ) -> Result<Self> {
        check_len("kernel vs angular grid", angles.len(), kernel.n_theta)?;
        let n_nodes = mesh.num_nodes();
        let n_el = mesh.num_triangles();
        let n_dirs = angles.len();
        let w = angles.weight;

        // sparsity pattern from element connectivity
        let mut neighbours: Vec<Vec<u32>> = vec![Vec::new(); n_nodes];
        for tri in &mesh.triangles {
            for &a in tri {
                for &b in tri {
                    neighbours[a].push(b as u32);
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n_nodes + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for nb in neighbours.iter_mut() {
            nb.sort_unstable();
            nb.dedup();
            col_idx.extend_from_slice(nb);
            row_ptr.push(col_idx.len());
        }
        let slot = |r: usize, c: usize| -> usize {
            let s = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            row_ptr[r] + s.binary_search(&(c as u32)).expect("pattern entry")
        };
        let mut elem_slots = Vec::with_capacity(n_el);
        let mut areas = Vec::with_capacity(n_el);
        let mut grads = Vec::with_capacity(n_el);
        for (e, tri) in mesh.triangles.iter().enumerate() {
            let mut s = [[0usize; 3]; 3];
            for n in 0..3 {
                for m in 0..3 {
                    s[n][m] = slot(tri[n], tri[m]);
                }
            }
            elem_slots.push(s);
            areas.push(mesh.triangle_area(e));
            grads.push(mesh.basis_gradients(e));
        }

        let mut beta = Vec::with_capacity(n_dirs * n_el);
        for th in &angles.directions {
            for g in &grads {
                let mut b = [0.0; 3];
                for a in 0..3 {
                    b[a] = th[0] * g[a][0] + th[1] * g[a][1];
                }
                beta.push(b);
            }
        }

        let nnz = col_idx.len();
        let d = sd_coefficient;
        let mut advection = Vec::with_capacity(n_dirs);
        for (j, th) in angles.directions.iter().enumerate() {
            let mut vals = vec![0.0; nnz];
            for e in 0..n_el {
                let b = &beta[j * n_el + e];
                let area = areas[e];
                for n in 0..3 {
                    for m in 0..3 {
                        // −∫ψ_m θ·∇ψ_n + D∫(θ·∇ψ_m)(θ·∇ψ_n)
                        vals[elem_slots[e][n][m]] +=
                            w * (-b[n] * area / 3.0 + d * b[m] * b[n] * area);
                    }
                }
            }
            for edge in &mesh.boundary_edges {
                let nu = edge.side.normal();
                let tn = th[0] * nu[0] + th[1] * nu[1];
                if tn > 0.0 {
                    for (a, &na) in edge.nodes.iter().enumerate() {
                        for (b, &nb) in edge.nodes.iter().enumerate() {
                            let c = if a == b { 2.0 } else { 1.0 };
                            vals[slot(na, nb)] += w * tn * edge.length * c / 6.0;
                        }
                    }
                }
            }
            advection.push(vals);
        }

        let mut triple = [[[0.0; 3]; 3]; 3];
        let mut pair = [[0.0; 3]; 3];
        for n in 0..3 {
            for m in 0..3 {
                pair[n][m] = pair_coeff(n, m);
                for p in 0..3 {
                    triple[n][m][p] = triple_coeff(n, m, p);
                }
            }
        }

        Ok(TransportOperator {
            mesh,
            angles,
            kernel,
            sd_coefficient,
            linear_tol: 1e-8,
            counters: Arc::new(Counters::default()),
            pattern_row_ptr: row_ptr,
            pattern_col_idx: col_idx,
            elem_slots,
            areas,
            beta,
            advection,
            triple,
            pair,
        })
    }

    pub fn with_linear_tol(mut self, tol: f64) -> Self {
        self.linear_tol = tol;
        self
    }

    pub fn with_counters(mut self, counters: Arc<Counters>) -> Self {
        self.counters = counters;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.num_nodes()
    }

    pub fn n_dirs(&self) -> usize {
        self.angles.len()
    }

    /// Unknown count, `n_nodes · n_theta`.
    pub fn dim(&self) -> usize {
        self.n_nodes() * self.n_dirs()
    }

    /// Weights of the (node × direction) L² inner product: lumped mass times
    /// angular weight.
    pub fn field_weights(&self) -> Vec<f64> {
        let w = self.angles.weight;
        let mut out = Vec::with_capacity(self.dim());
        for _ in 0..self.n_dirs() {
            out.extend(self.mesh.lumped_mass.iter().map(|m| m * w));
        }
        out
    }

    fn check_mu(&self, mu: &ParameterPair) -> Result<()> {
        check_len("mu_a", self.n_nodes(), mu.mu_a.len())?;
        check_len("mu_s", self.n_nodes(), mu.mu_s.len())?;
        Ok(())
    }

    /// Per-element contractions of a nodal coefficient:
    /// `c0[e][n][m] = Σ_p c_p ∫ψ_pψ_mψ_n`, `cs[e][m] = Σ_p c_p ∫ψ_pψ_m`.
    fn coefficient_tables(&self, c: &[f64]) -> (Vec<[[f64; 3]; 3]>, Vec<[f64; 3]>) {
        let mut c0 = Vec::with_capacity(self.areas.len());
        let mut cs = Vec::with_capacity(self.areas.len());
        for (e, tri) in self.mesh.triangles.iter().enumerate() {
            let area = self.areas[e];
            let cl = [c[tri[0]], c[tri[1]], c[tri[2]]];
            let mut t0 = [[0.0; 3]; 3];
            let mut s0 = [0.0; 3];
            for n in 0..3 {
                for m in 0..3 {
                    let mut acc = 0.0;
                    for p in 0..3 {
                        acc += cl[p] * self.triple[n][m][p];
                    }
                    t0[n][m] = acc * area;
                }
            }
            for m in 0..3 {
                let mut acc = 0.0;
                for p in 0..3 {
                    acc += cl[p] * self.pair[p][m];
                }
                s0[m] = acc * area;
            }
            c0.push(t0);
            cs.push(s0);
        }
        (c0, cs)
    }

    /// `out_j += scale · w · R_j(c) x_j` for every direction, where
    /// `R_j(c)[n][m] = ∫ c ψ_m (ψ_n + D θ_j·∇ψ_n)`.
    fn add_reaction(
        &self,
        tables: &(Vec<[[f64; 3]; 3]>, Vec<[f64; 3]>),
        scale: f64,
        x: &[f64],
        out: &mut [f64],
    ) {
        let (c0, cs) = tables;
        let nn = self.n_nodes();
        let n_el = self.areas.len();
        let f = scale * self.angles.weight;
        let d = self.sd_coefficient;
        for j in 0..self.n_dirs() {
            let xj = &x[j * nn..(j + 1) * nn];
            let oj = &mut out[j * nn..(j + 1) * nn];
            let betas = &self.beta[j * n_el..(j + 1) * n_el];
            for (e, tri) in self.mesh.triangles.iter().enumerate() {
                let xl = [xj[tri[0]], xj[tri[1]], xj[tri[2]]];
                let sx = cs[e][0] * xl[0] + cs[e][1] * xl[1] + cs[e][2] * xl[2];
                let t = &c0[e];
                for n in 0..3 {
                    let v =
                        t[n][0] * xl[0] + t[n][1] * xl[1] + t[n][2] * xl[2] + d * betas[e][n] * sx;
                    oj[tri[n]] += f * v;
                }
            }
        }
    }

    /// `out_j += scale · w · R_j(c)ᵀ y_j`
    fn add_reaction_transpose(
        &self,
        tables: &(Vec<[[f64; 3]; 3]>, Vec<[f64; 3]>),
        scale: f64,
        y: &[f64],
        out: &mut [f64],
    ) {
        let (c0, cs) = tables;
        let nn = self.n_nodes();
        let n_el = self.areas.len();
        let f = scale * self.angles.weight;
        let d = self.sd_coefficient;
        for j in 0..self.n_dirs() {
            let yj = &y[j * nn..(j + 1) * nn];
            let oj = &mut out[j * nn..(j + 1) * nn];
            let betas = &self.beta[j * n_el..(j + 1) * n_el];
            for (e, tri) in self.mesh.triangles.iter().enumerate() {
                let yl = [yj[tri[0]], yj[tri[1]], yj[tri[2]]];
                let b = &betas[e];
                let by = d * (b[0] * yl[0] + b[1] * yl[1] + b[2] * yl[2]);
                let t = &c0[e];
                for m in 0..3 {
                    let v = t[0][m] * yl[0] + t[1][m] * yl[1] + t[2][m] * yl[2] + by * cs[e][m];
                    oj[tri[m]] += f * v;
                }
            }
        }
    }

    fn add_advection(&self, x: &[f64], out: &mut [f64]) {
        let nn = self.n_nodes();
        for j in 0..self.n_dirs() {
            let vals = &self.advection[j];
            let xj = &x[j * nn..(j + 1) * nn];
            let oj = &mut out[j * nn..(j + 1) * nn];
            for (r, o) in oj.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in self.pattern_row_ptr[r]..self.pattern_row_ptr[r + 1] {
                    acc += vals[k] * xj[self.pattern_col_idx[k] as usize];
                }
                *o += acc;
            }
        }
    }

    fn add_advection_transpose(&self, y: &[f64], out: &mut [f64]) {
        let nn = self.n_nodes();
        for j in 0..self.n_dirs() {
            let vals = &self.advection[j];
            let yj = &y[j * nn..(j + 1) * nn];
            let oj = &mut out[j * nn..(j + 1) * nn];
            for (r, &yr) in yj.iter().enumerate() {
                for k in self.pattern_row_ptr[r]..self.pattern_row_ptr[r + 1] {
                    oj[self.pattern_col_idx[k] as usize] += vals[k] * yr;
                }
            }
        }
    }

    /// Matrix-free `M(μ)Φ` (weak form, no right-hand side).
    pub fn apply(&self, mu: &ParameterPair, phi: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_mu(mu)?;
        check_len("apply_M input", self.dim(), phi.len())?;
        check_len("apply_M output", self.dim(), out.len())?;
        self.counters.record_apply();
        out.iter_mut().for_each(|v| *v = 0.0);
        self.add_advection(phi, out);
        self.add_coefficient_terms(&mu.mu_a, &mu.mu_s, phi, out);
        Ok(())
    }

    /// Matrix-free `M(μ)ᵀ y`.
    pub fn apply_transpose(&self, mu: &ParameterPair, y: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_mu(mu)?;
        check_len("apply_M^T input", self.dim(), y.len())?;
        check_len("apply_M^T output", self.dim(), out.len())?;
        self.counters.record_apply();
        out.iter_mut().for_each(|v| *v = 0.0);
        self.add_advection_transpose(y, out);
        let total: Vec<f64> = mu.mu_a.iter().zip(&mu.mu_s).map(|(a, s)| a + s).collect();
        self.add_reaction_transpose(&self.coefficient_tables(&total), 1.0, y, out);
        let mut tmp = vec![0.0; self.dim()];
        self.add_reaction_transpose(&self.coefficient_tables(&mu.mu_s), 1.0, y, &mut tmp);
        let mut ktmp = vec![0.0; self.dim()];
        self.kernel
            .apply_transpose_into(&tmp, &mut ktmp, self.n_nodes());
        for (o, k) in out.iter_mut().zip(&ktmp) {
            *o -= k;
        }
        Ok(())
    }

    /// Adds the μ-linear part `[(a + s) − s K] x` (weak form) to `out`.
    /// With `(a, s) = (h_a, h_s)` this is `M'(μ)[h] x`.
    pub fn add_coefficient_terms(&self, a: &[f64], s: &[f64], x: &[f64], out: &mut [f64]) {
        let total: Vec<f64> = a.iter().zip(s).map(|(p, q)| p + q).collect();
        if s.iter().any(|&v| v != 0.0) {
            let mut kx = vec![0.0; self.dim()];
            self.kernel.apply_into(x, &mut kx, self.n_nodes());
            self.add_reaction_pair(
                &self.coefficient_tables(&total),
                x,
                &self.coefficient_tables(s),
                &kx,
                out,
            );
        } else {
            self.add_reaction(&self.coefficient_tables(&total), 1.0, x, out);
        }
    }

    /// `out_j += w (R_j(c) x_j − R_j(d) y_j)` in a single pass.
    fn add_reaction_pair(
        &self,
        tc: &(Vec<[[f64; 3]; 3]>, Vec<[f64; 3]>),
        x: &[f64],
        td: &(Vec<[[f64; 3]; 3]>, Vec<[f64; 3]>),
        y: &[f64],
        out: &mut [f64],
    ) {
        let nn = self.n_nodes();
        let n_el = self.areas.len();
        let f = self.angles.weight;
        let d = self.sd_coefficient;
        for j in 0..self.n_dirs() {
            let xj = &x[j * nn..(j + 1) * nn];
            let yj = &y[j * nn..(j + 1) * nn];
            let oj = &mut out[j * nn..(j + 1) * nn];
            let betas = &self.beta[j * n_el..(j + 1) * n_el];
            for (e, tri) in self.mesh.triangles.iter().enumerate() {
                let xl = [xj[tri[0]], xj[tri[1]], xj[tri[2]]];
                let yl = [yj[tri[0]], yj[tri[1]], yj[tri[2]]];
                let (c0, cs) = (&tc.0[e], &tc.1[e]);
                let (d0, ds) = (&td.0[e], &td.1[e]);
                let sx = cs[0] * xl[0] + cs[1] * xl[1] + cs[2] * xl[2]
                    - (ds[0] * yl[0] + ds[1] * yl[1] + ds[2] * yl[2]);
                for n in 0..3 {
                    let v = c0[n][0] * xl[0] + c0[n][1] * xl[1] + c0[n][2] * xl[2]
                        - (d0[n][0] * yl[0] + d0[n][1] * yl[1] + d0[n][2] * yl[2])
                        + d * betas[e][n] * sx;
                    oj[tri[n]] += f * v;
                }
            }
        }
    }

    /// `M'(μ)[h] x` as a fresh vector.
    pub fn apply_derivative(&self, h: &ParameterPair, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.add_coefficient_terms(&h.mu_a, &h.mu_s, x, &mut out);
        out
    }

    /// Bilinear coefficient sensitivity
    /// `g[p] = Σ_j w ρ_jᵀ R_j(e_p) x_j`, i.e. `∂/∂c_p ⟨ρ, R(c) x⟩`.
    pub fn coefficient_sensitivity(&self, rho: &[f64], x: &[f64]) -> Vec<f64> {
        let nn = self.n_nodes();
        let n_el = self.areas.len();
        let w = self.angles.weight;
        let d = self.sd_coefficient;
        let mut g = vec![0.0; nn];
        for j in 0..self.n_dirs() {
            let rj = &rho[j * nn..(j + 1) * nn];
            let xj = &x[j * nn..(j + 1) * nn];
            let betas = &self.beta[j * n_el..(j + 1) * n_el];
            for (e, tri) in self.mesh.triangles.iter().enumerate() {
                let rl = [rj[tri[0]], rj[tri[1]], rj[tri[2]]];
                let xl = [xj[tri[0]], xj[tri[1]], xj[tri[2]]];
                let b = &betas[e];
                let area = self.areas[e];
                let br = d * (b[0] * rl[0] + b[1] * rl[1] + b[2] * rl[2]);
                for p in 0..3 {
                    let mut acc = 0.0;
                    for n in 0..3 {
                        for m in 0..3 {
                            acc += rl[n] * xl[m] * self.triple[n][m][p];
                        }
                    }
                    let sx =
                        self.pair[p][0] * xl[0] + self.pair[p][1] * xl[1] + self.pair[p][2] * xl[2];
                    g[tri[p]] += w * area * (acc + br * sx);
                }
            }
        }
        g
    }

    /// Gradient of `⟨ρ, M(μ) x⟩` with respect to nodal `(μ_a, μ_s)`
    /// (Euclidean, not mass-scaled).
    pub fn parameter_sensitivity(&self, rho: &[f64], x: &[f64]) -> ParameterPair {
        let ga = self.coefficient_sensitivity(rho, x);
        let mut kx = vec![0.0; self.dim()];
        self.kernel.apply_into(x, &mut kx, self.n_nodes());
        let diff: Vec<f64> = x.iter().zip(&kx).map(|(a, b)| a - b).collect();
        let gs = self.coefficient_sensitivity(rho, &diff);
        ParameterPair::new(ga, gs)
    }

    /// Discrete right-hand side `b^(h)` for a source pair.
    pub fn rhs(&self, source: &SourcePair) -> Result<Vec<f64>> {
        let nn = self.n_nodes();
        check_len("interior source", self.dim(), source.interior.values.len())?;
        check_len("boundary source", self.dim(), source.boundary.values.len())?;
        let w = self.angles.weight;
        let d = self.sd_coefficient;
        let n_el = self.areas.len();
        let mut b = vec![0.0; self.dim()];
        for (j, th) in self.angles.directions.iter().enumerate() {
            let bj = &mut b[j * nn..(j + 1) * nn];
            let qo = source.boundary.direction(j);
            for edge in &self.mesh.boundary_edges {
                let nu = edge.side.normal();
                let tn = th[0] * nu[0] + th[1] * nu[1];
                if tn < 0.0 {
                    let [a, c] = edge.nodes;
                    let f = w * (-tn) * edge.length / 6.0;
                    bj[a] += f * (2.0 * qo[a] + qo[c]);
                    bj[c] += f * (qo[a] + 2.0 * qo[c]);
                }
            }
            let qi = source.interior.direction(j);
            if qi.iter().any(|&v| v != 0.0) {
                let betas = &self.beta[j * n_el..(j + 1) * n_el];
                for (e, tri) in self.mesh.triangles.iter().enumerate() {
                    let area = self.areas[e];
                    let ql = [qi[tri[0]], qi[tri[1]], qi[tri[2]]];
                    let qsum = (ql[0] + ql[1] + ql[2]) * area / 3.0;
                    for n in 0..3 {
                        let mut acc = 0.0;
                        for m in 0..3 {
                            acc += self.pair[n][m] * ql[m] * area;
                        }
                        bj[tri[n]] += w * (acc + d * betas[e][n] * qsum);
                    }
                }
            }
        }
        Ok(b)
    }

    /// Assembles the sparse system for the given coefficients.
    pub fn assemble(self: &Arc<Self>, mu: &ParameterPair) -> Result<TransportSystem> {
        self.check_mu(mu)?;
        if let Some(v) = mu
            .mu_a
            .iter()
            .chain(&mu.mu_s)
            .find(|v| !v.is_finite() || **v < 0.0)
        {
            return Err(QpatError::Infeasible(format!(
                "transport coefficients must be finite and nonnegative (found {v})"
            )));
        }
        let n_el = self.areas.len();
        let w = self.angles.weight;
        let d = self.sd_coefficient;
        let total: Vec<f64> = mu.mu_a.iter().zip(&mu.mu_s).map(|(a, s)| a + s).collect();
        let tot_tab = self.coefficient_tables(&total);
        let sca_tab = self.coefficient_tables(&mu.mu_s);
        let nnz = self.pattern_col_idx.len();
        let mut transport = Vec::with_capacity(self.n_dirs());
        let mut scatter = Vec::with_capacity(self.n_dirs());
        for j in 0..self.n_dirs() {
            let mut a = self.advection[j].clone();
            let mut s = vec![0.0; nnz];
            let betas = &self.beta[j * n_el..(j + 1) * n_el];
            for e in 0..n_el {
                let slots = &self.elem_slots[e];
                for n in 0..3 {
                    for m in 0..3 {
                        let k = slots[n][m];
                        a[k] += w * (tot_tab.0[e][n][m] + d * betas[e][n] * tot_tab.1[e][m]);
                        s[k] += w * (sca_tab.0[e][n][m] + d * betas[e][n] * sca_tab.1[e][m]);
                    }
                }
            }
            transport.push(a);
            scatter.push(s);
        }
        // Preconditioner: per-direction blocks A_j − K̂_jj S_j factorized
        // incompletely with nodes ordered downwind, where ILU(0) is nearly
        // exact for the advection part.
        let mut blocks = Vec::with_capacity(self.n_dirs());
        for (j, th) in self.angles.directions.iter().enumerate() {
            let kjj = self.kernel.entry(j, j);
            let vals: Vec<f64> = transport[j]
                .iter()
                .zip(&scatter[j])
                .map(|(a, s)| a - kjj * s)
                .collect();
            let key: Vec<f64> = self
                .mesh
                .nodes
                .iter()
                .map(|x| th[0] * x[0] + th[1] * x[1])
                .collect();
            let mut perm: Vec<usize> = (0..self.n_nodes()).collect();
            perm.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
            blocks.push(Ilu0::new(
                &self.pattern_row_ptr,
                &self.pattern_col_idx,
                &vals,
                perm,
            )?);
        }
        Ok(TransportSystem {
            op: Arc::clone(self),
            transport,
            scatter,
            blocks,
        })
    }
}

/// `M^(h)` for fixed μ: per-direction blocks `A_j` (transport + total
/// attenuation) and `S_j` (scattering), with `(Mc)_j = A_j c_j − S_j (Kc)_j`.
#[derive(Debug)]
pub struct TransportSystem {
    pub op: Arc<TransportOperator>,
    transport: Vec<Vec<f64>>,
    scatter: Vec<Vec<f64>>,
    blocks: Vec<Ilu0>,
}

impl TransportSystem {
    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    fn block_mul(&self, vals: &[f64], x: &[f64], out: &mut [f64]) {
        let rp = &self.op.pattern_row_ptr;
        let ci = &self.op.pattern_col_idx;
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in rp[r]..rp[r + 1] {
                acc += vals[k] * x[ci[k] as usize];
            }
            *o = acc;
        }
    }

    fn block_mul_transpose_add(&self, vals: &[f64], y: &[f64], out: &mut [f64]) {
        let rp = &self.op.pattern_row_ptr;
        let ci = &self.op.pattern_col_idx;
        for (r, &yr) in y.iter().enumerate() {
            for k in rp[r]..rp[r + 1] {
                out[ci[k] as usize] += vals[k] * yr;
            }
        }
    }

    pub fn mul(&self, x: &[f64], out: &mut [f64]) {
        let nn = self.op.n_nodes();
        let mut kx = vec![0.0; x.len()];
        self.op.kernel.apply_into(x, &mut kx, nn);
        let mut tmp = vec![0.0; nn];
        for j in 0..self.op.n_dirs() {
            let oj = &mut out[j * nn..(j + 1) * nn];
            self.block_mul(&self.transport[j], &x[j * nn..(j + 1) * nn], oj);
            self.block_mul(&self.scatter[j], &kx[j * nn..(j + 1) * nn], &mut tmp);
            for (o, t) in oj.iter_mut().zip(&tmp) {
                *o -= t;
            }
        }
    }

    pub fn mul_transpose(&self, y: &[f64], out: &mut [f64]) {
        let nn = self.op.n_nodes();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut sy = vec![0.0; y.len()];
        for j in 0..self.op.n_dirs() {
            let yj = &y[j * nn..(j + 1) * nn];
            self.block_mul_transpose_add(&self.transport[j], yj, &mut out[j * nn..(j + 1) * nn]);
            self.block_mul_transpose_add(&self.scatter[j], yj, &mut sy[j * nn..(j + 1) * nn]);
        }
        let mut ksy = vec![0.0; y.len()];
        self.op.kernel.apply_transpose_into(&sy, &mut ksy, nn);
        for (o, k) in out.iter_mut().zip(&ksy) {
            *o -= k;
        }
    }

    /// Explicit sparse matrix over all (direction, node) unknowns. The
    /// scattering coupling makes it dense in direction; meant for small
    /// problems and cross-checks.
    pub fn to_csr(&self) -> CsrMatrix {
        let nn = self.op.n_nodes();
        let nd = self.op.n_dirs();
        let rp = &self.op.pattern_row_ptr;
        let ci = &self.op.pattern_col_idx;
        let mut triplets = Vec::new();
        for j in 0..nd {
            for r in 0..nn {
                for k in rp[r]..rp[r + 1] {
                    let c = ci[k] as usize;
                    triplets.push((j * nn + r, j * nn + c, self.transport[j][k]));
                    for l in 0..nd {
                        let kjl = self.op.kernel.entry(j, l);
                        triplets.push((j * nn + r, l * nn + c, -self.scatter[j][k] * kjl));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(nd * nn, nd * nn, &triplets)
    }

    fn gmres_config(&self) -> GmresConfig {
        GmresConfig {
            tol: self.op.linear_tol,
            ..GmresConfig::for_dim(self.dim())
        }
    }

    /// Solves `M c = b`.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("rhs", self.dim(), b.len())?;
        self.op.counters.record_solve();
        let mut x = vec![0.0; self.dim()];
        gmres(
            self,
            &BlockIlu(self, false),
            b,
            &mut x,
            &self.gmres_config(),
        )?;
        Ok(x)
    }

    /// Solves `Mᵀ c = b`.
    pub fn solve_transpose_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        check_len("adjoint rhs", self.dim(), b.len())?;
        self.op.counters.record_adjoint_solve();
        let mut x = vec![0.0; self.dim()];
        let t = Transposed(self);
        gmres(&t, &BlockIlu(self, true), b, &mut x, &self.gmres_config())?;
        Ok(x)
    }

    /// `Φ = T(q, μ)`
    pub fn solve(&self, source: &SourcePair) -> Result<PhotonField> {
        let b = self.op.rhs(source)?;
        let x = self.solve_vec(&b)?;
        Ok(PhotonField::from_values(
            self.op.n_nodes(),
            self.op.n_dirs(),
            x,
        ))
    }

    /// Discrete adjoint solve with a (direction, node) right-hand side.
    pub fn solve_adjoint(&self, source: &PhotonField) -> Result<PhotonField> {
        let x = self.solve_transpose_vec(&source.values)?;
        Ok(PhotonField::from_values(
            self.op.n_nodes(),
            self.op.n_dirs(),
            x,
        ))
    }
}

impl LinearOperator for TransportSystem {
    fn dim(&self) -> usize {
        self.op.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul(x, y)
    }
}

struct Transposed<'a>(&'a TransportSystem);

struct BlockIlu<'a>(&'a TransportSystem, bool);

impl Preconditioner for BlockIlu<'_> {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let nn = self.0.op.n_nodes();
        for (j, blk) in self.0.blocks.iter().enumerate() {
            let rj = &r[j * nn..(j + 1) * nn];
            let zj = &mut z[j * nn..(j + 1) * nn];
            if self.1 {
                blk.solve_transpose(rj, zj);
            } else {
                blk.solve(rj, zj);
            }
        }
    }
}

impl LinearOperator for Transposed<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.mul_transpose(x, y)
    }
}

/// `AΦ = Σ_j w Φ(·, θ_j)`
pub fn average(phi: &PhotonField, weight: f64) -> Vec<f64> {
    let mut out = vec![0.0; phi.n_nodes];
    for j in 0..phi.n_dirs {
        for (o, v) in out.iter_mut().zip(phi.direction(j)) {
            *o += weight * v;
        }
    }
    out
}

/// Adjoint of [`average`] between the lumped-mass L²(Ω) product and the
/// (node × direction) product weighted by mass and angular weight: the
/// spatial field is replicated across directions.
pub fn average_adjoint(w: &[f64], n_dirs: usize) -> PhotonField {
    let n = w.len();
    let mut values = Vec::with_capacity(n * n_dirs);
    for _ in 0..n_dirs {
        values.extend_from_slice(w);
    }
    PhotonField::from_values(n, n_dirs, values)
}
