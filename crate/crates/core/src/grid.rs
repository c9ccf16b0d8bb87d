//! Uniform triangulation of Ω = [-1,1]², equispaced directions on S¹ and the
//! inflow/outflow split of boundary × direction pairs.

use std::f64::consts::PI;

use crate::error::{QpatError, Result};

/// One of the four sides of the square domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Top,
    Right,
    Bottom,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Top, Side::Right, Side::Bottom, Side::Left];

    /// Outward unit normal.
    pub fn normal(self) -> [f64; 2] {
        match self {
            Side::Top => [0.0, 1.0],
            Side::Right => [1.0, 0.0],
            Side::Bottom => [0.0, -1.0],
            Side::Left => [-1.0, 0.0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Top => "top",
            Side::Right => "right",
            Side::Bottom => "bottom",
            Side::Left => "left",
        }
    }

    pub fn parse(s: &str) -> Option<Side> {
        match s {
            "top" => Some(Side::Top),
            "right" => Some(Side::Right),
            "bottom" => Some(Side::Bottom),
            "left" => Some(Side::Left),
            _ => None,
        }
    }
}

/// A boundary edge with its two end nodes, side and length.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub side: Side,
    pub length: f64,
}

#[derive(Debug, Clone)]
pub struct SpatialMesh {
    pub h: f64,
    /// Nodes per side, `2/h + 1`.
    pub n_side: usize,
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
    /// Sides each node lies on (empty for interior nodes, two for corners).
    pub side_tags: Vec<Vec<Side>>,
    /// Lumped (row-sum) mass per node.
    pub lumped_mass: Vec<f64>,
}

impl SpatialMesh {
    /// Uniform triangulation of [-1,1]² with mesh size `h`; `2/h` must be a
    /// positive integer. Nodes are ordered y-major, x-minor.
    pub fn uniform(h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(QpatError::InvalidMeshSize { h });
        }
        let cells = 2.0 / h;
        let nc = cells.round();
        if nc < 1.0 || (cells - nc).abs() > 1e-9 * nc.max(1.0) {
            return Err(QpatError::InvalidMeshSize { h });
        }
        Ok(Self::with_cells(nc as usize))
    }

    /// Same as [`uniform`](Self::uniform) with `cells` intervals per side.
    pub fn with_cells(cells: usize) -> Self {
        assert!(cells >= 1);
        let h = 2.0 / cells as f64;
        let n = cells + 1;
        let mut nodes = Vec::with_capacity(n * n);
        for iy in 0..n {
            for ix in 0..n {
                nodes.push([-1.0 + ix as f64 * h, -1.0 + iy as f64 * h]);
            }
        }
        let id = |ix: usize, iy: usize| iy * n + ix;
        let mut triangles = Vec::with_capacity(2 * cells * cells);
        for iy in 0..cells {
            for ix in 0..cells {
                let a = id(ix, iy);
                let b = id(ix + 1, iy);
                let c = id(ix + 1, iy + 1);
                let d = id(ix, iy + 1);
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
        let mut boundary_edges = Vec::with_capacity(4 * cells);
        for k in 0..cells {
            boundary_edges.push(BoundaryEdge {
                nodes: [id(k, 0), id(k + 1, 0)],
                side: Side::Bottom,
                length: h,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [id(cells, k), id(cells, k + 1)],
                side: Side::Right,
                length: h,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [id(k, cells), id(k + 1, cells)],
                side: Side::Top,
                length: h,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [id(0, k), id(0, k + 1)],
                side: Side::Left,
                length: h,
            });
        }
        let mut side_tags = vec![Vec::new(); n * n];
        for iy in 0..n {
            for ix in 0..n {
                let tags = &mut side_tags[id(ix, iy)];
                if iy == n - 1 {
                    tags.push(Side::Top);
                }
                if ix == n - 1 {
                    tags.push(Side::Right);
                }
                if iy == 0 {
                    tags.push(Side::Bottom);
                }
                if ix == 0 {
                    tags.push(Side::Left);
                }
            }
        }
        let mut mesh = SpatialMesh {
            h,
            n_side: n,
            nodes,
            triangles,
            boundary_edges,
            side_tags,
            lumped_mass: Vec::new(),
        };
        let mut mass = vec![0.0; mesh.num_nodes()];
        for t in 0..mesh.triangles.len() {
            let a = mesh.triangle_area(t) / 3.0;
            for &p in &mesh.triangles[t] {
                mass[p] += a;
            }
        }
        mesh.lumped_mass = mass;
        mesh
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, p: usize) -> bool {
        !self.side_tags[p].is_empty()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&p| self.is_boundary(p))
            .collect()
    }

    /// Signed area (positive for counter-clockwise triangles).
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Gradients of the three P1 basis functions on triangle `t`.
    pub fn basis_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        let p = [self.nodes[a], self.nodes[b], self.nodes[c]];
        let twice_area = 2.0 * self.triangle_area(t);
        let mut g = [[0.0; 2]; 3];
        for i in 0..3 {
            let j = (i + 1) % 3;
            let k = (i + 2) % 3;
            g[i] = [
                (p[j][1] - p[k][1]) / twice_area,
                (p[k][0] - p[j][0]) / twice_area,
            ];
        }
        g
    }

    /// Locates `x` and returns the node indices with barycentric weights of
    /// the P1 interpolant, or `None` outside Ω.
    pub fn locate(&self, x: [f64; 2]) -> Option<([usize; 3], [f64; 3])> {
        let cells = self.n_side - 1;
        let u = (x[0] + 1.0) / self.h;
        let v = (x[1] + 1.0) / self.h;
        let eps = 1e-12;
        if u < -eps || v < -eps || u > cells as f64 + eps || v > cells as f64 + eps {
            return None;
        }
        let ix = (u.floor().max(0.0) as usize).min(cells - 1);
        let iy = (v.floor().max(0.0) as usize).min(cells - 1);
        let fu = (u - ix as f64).clamp(0.0, 1.0);
        let fv = (v - iy as f64).clamp(0.0, 1.0);
        let n = self.n_side;
        let a = iy * n + ix;
        let b = a + 1;
        let c = a + n + 1;
        let d = a + n;
        if fu >= fv {
            // triangle (a, b, c)
            Some(([a, b, c], [1.0 - fu, fu - fv, fv]))
        } else {
            // triangle (a, c, d)
            Some(([a, c, d], [1.0 - fv, fu, fv - fu]))
        }
    }

    /// Nodal interpolation of a function.
    pub fn interpolate<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|&x| f(x)).collect()
    }
}

/// Equispaced directions `θ_j = (cos φ_j, sin φ_j)`, `φ_j = 2πj/n`.
#[derive(Debug, Clone)]
pub struct AngularGrid {
    pub directions: Vec<[f64; 2]>,
    pub weight: f64,
}

impl AngularGrid {
    pub fn new(n_theta: usize) -> Result<Self> {
        if n_theta < 4 {
            return Err(QpatError::TooFewDirections(n_theta));
        }
        let directions = (0..n_theta)
            .map(|j| {
                let phi = 2.0 * PI * j as f64 / n_theta as f64;
                [snap(phi.cos()), snap(phi.sin())]
            })
            .collect();
        Ok(AngularGrid {
            directions,
            weight: 2.0 * PI / n_theta as f64,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Index of the direction closest to the unit vector `u`.
    pub fn nearest(&self, u: [f64; 2]) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (j, d) in self.directions.iter().enumerate() {
            let c = d[0] * u[0] + d[1] * u[1];
            if c > best_dot + 1e-14 {
                best_dot = c;
                best = j;
            }
        }
        best
    }
}

// cos/sin at multiples of π/2 come out as ±6e-17; make them exact so that
// tangential directions classify as ν·θ = 0.
fn snap(v: f64) -> f64 {
    if v.abs() < 1e-14 {
        0.0
    } else if (v.abs() - 1.0).abs() < 1e-14 {
        v.signum()
    } else {
        v
    }
}

/// Inflow (`ν·θ ≤ 0`) and outflow (`ν·θ > 0`) membership of every
/// (boundary node, side, direction) triple. Corner nodes appear once per side.
#[derive(Debug, Clone)]
pub struct BoundaryClassification {
    pub inflow: Vec<(usize, Side, usize)>,
    pub outflow: Vec<(usize, Side, usize)>,
}

impl BoundaryClassification {
    pub fn new(mesh: &SpatialMesh, angles: &AngularGrid) -> Self {
        let mut inflow = Vec::new();
        let mut outflow = Vec::new();
        for p in 0..mesh.num_nodes() {
            for &side in &mesh.side_tags[p] {
                let nu = side.normal();
                for (j, th) in angles.directions.iter().enumerate() {
                    if is_inflow(nu, *th) {
                        inflow.push((p, side, j));
                    } else {
                        outflow.push((p, side, j));
                    }
                }
            }
        }
        BoundaryClassification { inflow, outflow }
    }

    pub fn is_inflow(&self, node: usize, side: Side, dir: usize) -> bool {
        self.inflow.contains(&(node, side, dir))
    }
}

/// `ν·θ ≤ 0`
pub fn is_inflow(normal: [f64; 2], theta: [f64; 2]) -> bool {
    normal[0] * theta[0] + normal[1] * theta[1] <= 0.0
}
