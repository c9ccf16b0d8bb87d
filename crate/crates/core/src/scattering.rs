//! Henyey–Greenstein phase function and the discrete scattering operator K.

use std::f64::consts::PI;

use crate::error::{check_len, QpatError, Result};
use crate::field::PhotonField;
use crate::grid::AngularGrid;

/// Two-dimensional Henyey–Greenstein density between unit vectors.
pub fn hg_value(theta: [f64; 2], theta_prime: [f64; 2], g: f64) -> Result<f64> {
    if !(g.abs() < 1.0) {
        return Err(QpatError::InvalidAnisotropy(g));
    }
    let cos = theta[0] * theta_prime[0] + theta[1] * theta_prime[1];
    Ok((1.0 - g * g) / (2.0 * PI * (1.0 + g * g - 2.0 * g * cos)))
}

/// Row-stochastic quadrature matrix `K̂[j][l] ≈ k(θ_j, θ_l)·w`.
#[derive(Debug, Clone)]
pub struct ScatteringKernel {
    pub g: f64,
    pub n_theta: usize,
    /// Row-major `n_theta × n_theta`.
    pub matrix: Vec<f64>,
}

impl ScatteringKernel {
    pub fn new(angles: &AngularGrid, g: f64) -> Result<Self> {
        let n = angles.len();
        let mut matrix = vec![0.0; n * n];
        for j in 0..n {
            for l in 0..n {
                matrix[j * n + l] =
                    hg_value(angles.directions[j], angles.directions[l], g)? * angles.weight;
            }
            let row = &mut matrix[j * n..(j + 1) * n];
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(ScatteringKernel {
            g,
            n_theta: n,
            matrix,
        })
    }

    #[inline]
    pub fn entry(&self, j: usize, l: usize) -> f64 {
        self.matrix[j * self.n_theta + l]
    }

    /// `(KΦ)(x_p, θ_j) = Σ_l K̂[j][l] Φ(x_p, θ_l)`
    pub fn apply(&self, phi: &PhotonField) -> Result<PhotonField> {
        check_len("scattering kernel directions", self.n_theta, phi.n_dirs)?;
        let mut out = PhotonField::zeros(phi.n_nodes, phi.n_dirs);
        self.apply_into(&phi.values, &mut out.values, phi.n_nodes);
        Ok(out)
    }

    /// Direction-major slices: `out[j*n_nodes + p] = Σ_l K̂[j][l] x[l*n_nodes + p]`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64], n_nodes: usize) {
        let n = self.n_theta;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            let dst = &mut out[j * n_nodes..(j + 1) * n_nodes];
            for l in 0..n {
                let k = self.matrix[j * n + l];
                let src = &x[l * n_nodes..(l + 1) * n_nodes];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }

    /// `out = K̂ᵀ x` in the same layout.
    pub fn apply_transpose_into(&self, x: &[f64], out: &mut [f64], n_nodes: usize) {
        let n = self.n_theta;
        out.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..n {
            let dst = &mut out[l * n_nodes..(l + 1) * n_nodes];
            for j in 0..n {
                let k = self.matrix[j * n + l];
                let src = &x[j * n_nodes..(j + 1) * n_nodes];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }
}
