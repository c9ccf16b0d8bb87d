//! Nodal fields shared across the forward model and the optimizers.

use crate::linalg::{axpy, wdot};

/// Photon density over (direction, node), stored direction-major:
/// `values[j * n_nodes + p] = Φ(x_p, θ_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonField {
    pub n_nodes: usize,
    pub n_dirs: usize,
    pub values: Vec<f64>,
}

impl PhotonField {
    pub fn zeros(n_nodes: usize, n_dirs: usize) -> Self {
        PhotonField {
            n_nodes,
            n_dirs,
            values: vec![0.0; n_nodes * n_dirs],
        }
    }

    pub fn from_values(n_nodes: usize, n_dirs: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), n_nodes * n_dirs);
        PhotonField {
            n_nodes,
            n_dirs,
            values,
        }
    }

    #[inline]
    pub fn get(&self, node: usize, dir: usize) -> f64 {
        self.values[dir * self.n_nodes + node]
    }

    #[inline]
    pub fn set(&mut self, node: usize, dir: usize, v: f64) {
        self.values[dir * self.n_nodes + node] = v;
    }

    pub fn direction(&self, dir: usize) -> &[f64] {
        &self.values[dir * self.n_nodes..(dir + 1) * self.n_nodes]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Absorption and scattering coefficients at the mesh nodes (1/cm).
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPair {
    pub mu_a: Vec<f64>,
    pub mu_s: Vec<f64>,
}

impl ParameterPair {
    pub fn new(mu_a: Vec<f64>, mu_s: Vec<f64>) -> Self {
        assert_eq!(mu_a.len(), mu_s.len());
        ParameterPair { mu_a, mu_s }
    }

    pub fn constant(n: usize, mu_a: f64, mu_s: f64) -> Self {
        ParameterPair {
            mu_a: vec![mu_a; n],
            mu_s: vec![mu_s; n],
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(n, 0.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.mu_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu_a.is_empty()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParameterPair) {
        axpy(alpha, &other.mu_a, &mut self.mu_a);
        axpy(alpha, &other.mu_s, &mut self.mu_s);
    }

    pub fn scaled(&self, alpha: f64) -> ParameterPair {
        ParameterPair {
            mu_a: self.mu_a.iter().map(|v| alpha * v).collect(),
            mu_s: self.mu_s.iter().map(|v| alpha * v).collect(),
        }
    }

    /// Lumped-mass L² inner product summed over both components.
    pub fn inner(&self, other: &ParameterPair, mass: &[f64]) -> f64 {
        wdot(mass, &self.mu_a, &other.mu_a) + wdot(mass, &self.mu_s, &other.mu_s)
    }

    pub fn norm(&self, mass: &[f64]) -> f64 {
        self.inner(self, mass).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.mu_a.iter().chain(&self.mu_s).all(|v| v.is_finite())
    }

    /// Content fingerprint (FNV-1a over the bit patterns).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for v in self.mu_a.iter().chain(&self.mu_s) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }
}

/// Interior source `q_i` and boundary source `q_o`, both (direction, node)
/// fields. `q_o` is only read on inflow boundary edges.
#[derive(Debug, Clone)]
pub struct SourcePair {
    pub interior: PhotonField,
    pub boundary: PhotonField,
}

impl SourcePair {
    pub fn zeros(n_nodes: usize, n_dirs: usize) -> Self {
        SourcePair {
            interior: PhotonField::zeros(n_nodes, n_dirs),
            boundary: PhotonField::zeros(n_nodes, n_dirs),
        }
    }

    pub fn scaled(&self, alpha: f64) -> SourcePair {
        let mut out = self.clone();
        out.interior.values.iter_mut().for_each(|v| *v *= alpha);
        out.boundary.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }
}
