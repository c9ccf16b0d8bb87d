//! Two-dimensional free-space wave propagation from an initial pressure,
//! recorded on a circle of detectors.
//!
//! The explicit solution
//! `p(z,t) = (1/2π) ∂_t ∫_{|y−z|<t} p0(y) / √(t²−|y−z|²) dy`
//! is written with circular means `M(z,r)` of `p0` as
//! `p(z,t) = ∂_t ∫_0^t r M(z,r) / √(t²−r²) dr`.
//! Means are sampled on a radius grid of half the time step and treated as
//! piecewise linear in `r`, so the Abel-type integral has closed-form
//! weights. The time derivative is a centered difference over half steps.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{check_len, QpatError, Result};
use crate::grid::{Side, SpatialMesh};
use crate::linalg::CsrMatrix;

/// Detectors on `∂B_R` and the recording time grid.
#[derive(Debug, Clone)]
pub struct DetectorGeometry {
    pub radius: f64,
    /// Detector `k` sits at angle `2π(k + ½)/n_det`.
    pub angles: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub dt: f64,
    /// Samples at `t_n = n·dt`, `n = 0..n_times`.
    pub n_times: usize,
}

impl DetectorGeometry {
    pub fn new(radius: f64, n_det: usize, dt: f64, t_max: f64) -> Result<Self> {
        if radius <= 2f64.sqrt() {
            return Err(QpatError::SupportOutsideDetector { radius });
        }
        if n_det == 0 || dt <= 0.0 || !dt.is_finite() {
            return Err(QpatError::Config(format!(
                "detector geometry needs n_det > 0 and dt > 0 (got {n_det}, {dt})"
            )));
        }
        if t_max < 2.0 * radius {
            return Err(QpatError::Config(format!(
                "recording time {t_max} shorter than 2R = {}",
                2.0 * radius
            )));
        }
        let angles: Vec<f64> = (0..n_det)
            .map(|k| 2.0 * PI * (k as f64 + 0.5) / n_det as f64)
            .collect();
        let positions = angles
            .iter()
            .map(|a| [radius * a.cos(), radius * a.sin()])
            .collect();
        let n_times = (t_max / dt + 1e-9).floor() as usize + 1;
        Ok(DetectorGeometry {
            radius,
            angles,
            positions,
            dt,
            n_times,
        })
    }

    pub fn n_det(&self) -> usize {
        self.angles.len()
    }

    pub fn len(&self) -> usize {
        self.n_det() * self.n_times
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Arc length per detector.
    pub fn ds(&self) -> f64 {
        2.0 * PI * self.radius / self.n_det() as f64
    }

    /// Weights of the time-weighted inner product `⟨u,v⟩_Y = Σ u v t Δt Δs`.
    pub fn y_weights(&self) -> Vec<f64> {
        let ds = self.ds();
        let mut w = Vec::with_capacity(self.len());
        for _ in 0..self.n_det() {
            for n in 0..self.n_times {
                w.push(self.time(n) * self.dt * ds);
            }
        }
        w
    }

    /// Detectors on the half circle facing the given side of the square.
    pub fn arc(&self, side: Side) -> Vec<usize> {
        let nu = side.normal();
        (0..self.n_det())
            .filter(|&k| {
                let a = self.angles[k];
                a.cos() * nu[0] + a.sin() * nu[1] > 1e-12
            })
            .collect()
    }
}

/// Pressure samples, detector-major: `values[k * n_times + n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureData {
    pub n_det: usize,
    pub n_times: usize,
    pub values: Vec<f64>,
}

impl PressureData {
    pub fn zeros(n_det: usize, n_times: usize) -> Self {
        PressureData {
            n_det,
            n_times,
            values: vec![0.0; n_det * n_times],
        }
    }

    pub fn trace(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_times..(k + 1) * self.n_times]
    }
}

/// Active set `Λ_i × (0, T_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMask {
    pub active: Vec<bool>,
}

impl DataMask {
    pub fn full(geometry: &DetectorGeometry) -> Self {
        DataMask {
            active: vec![true; geometry.len()],
        }
    }

    pub fn new(geometry: &DetectorGeometry, detectors: &[usize], horizon: f64) -> Self {
        let mut active = vec![false; geometry.len()];
        for &k in detectors {
            for n in 0..geometry.n_times {
                if geometry.time(n) <= horizon + 1e-12 {
                    active[k * geometry.n_times + n] = true;
                }
            }
        }
        DataMask { active }
    }

    pub fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Zeros every sample outside the active set.
    pub fn restrict(&self, v: &PressureData) -> PressureData {
        let mut out = v.clone();
        for (x, &a) in out.values.iter_mut().zip(&self.active) {
            if !a {
                *x = 0.0;
            }
        }
        out
    }

    /// Total Y weight of the active set.
    pub fn weight_sum(&self, y_weights: &[f64]) -> f64 {
        y_weights
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(w, _)| w)
            .sum()
    }
}

/// `∫_a^b r / √(τ²−r²) dr` and `∫_a^b r² / √(τ²−r²) dr` for `0 ≤ a ≤ b ≤ τ`.
fn abel_moments(a: f64, b: f64, tau: f64) -> (f64, f64) {
    let sa = (tau * tau - a * a).max(0.0).sqrt();
    let sb = (tau * tau - b * b).max(0.0).sqrt();
    let q0 = sa - sb;
    let asin = |r: f64| (r / tau).clamp(-1.0, 1.0).asin();
    let q1 = 0.5 * tau * tau * (asin(b) - asin(a)) - 0.5 * (b * sb - a * sa);
    (q0, q1)
}

/// Weights `w_m(τ)` with `∫_0^τ r M(r) / √(τ²−r²) dr = Σ_m w_m(τ) M(r_m)`
/// for `M` piecewise linear on `r_m = m·δr`.
fn abel_weights(tau: f64, dr: f64, n_r: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_r];
    if tau <= 0.0 {
        return w;
    }
    for m in 0..n_r - 1 {
        let r0 = m as f64 * dr;
        let r1 = (m + 1) as f64 * dr;
        if r0 >= tau {
            break;
        }
        let b = r1.min(tau);
        let (q0, q1) = abel_moments(r0, b, tau);
        w[m] += (r1 * q0 - q1) / dr;
        w[m + 1] += (q1 - r0 * q0) / dr;
    }
    w
}

/// Discrete wave trace operator `U` on a fixed spatial mesh.
#[derive(Debug)]
pub struct WaveOperator {
    pub mesh: Arc<SpatialMesh>,
    pub geometry: DetectorGeometry,
    /// Rows `k * n_r + m`: circular mean of the P1 field around detector
    /// `k` at radius `r_m`.
    circle: CsrMatrix,
    n_r: usize,
    /// Dense `n_times × n_r` map from radial means to pressure samples;
    /// columns outside `col_range` vanish for every detector.
    profile: Vec<f64>,
    col_range: (usize, usize),
    y_weights: Vec<f64>,
}

impl WaveOperator {
    pub fn new(mesh: Arc<SpatialMesh>, geometry: DetectorGeometry) -> Result<Self> {
        let reach = mesh
            .nodes
            .iter()
            .map(|x| (x[0] * x[0] + x[1] * x[1]).sqrt())
            .fold(0.0, f64::max);
        if reach >= geometry.radius {
            return Err(QpatError::SupportOutsideDetector {
                radius: geometry.radius,
            });
        }
        let dt = geometry.dt;
        let dr = 0.5 * dt;
        let tau_max = geometry.time(geometry.n_times - 1) + 0.5 * dt;
        let n_r = (tau_max / dr).ceil() as usize + 2;
        let spacing = 0.5 * mesh.h;
        let n_det = geometry.n_det();

        let mut row_ptr = Vec::with_capacity(n_det * n_r + 1);
        let mut col_idx: Vec<u32> = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let mut entries: Vec<(usize, f64)> = Vec::new();
        let mut used = (usize::MAX, 0usize);
        for z in &geometry.positions {
            let a0 = (-z[1]).atan2(-z[0]);
            for m in 0..n_r {
                let r = m as f64 * dr;
                entries.clear();
                if r > 0.0 {
                    let n_pts = ((2.0 * PI * r / spacing).ceil() as usize).max(8);
                    let inv = 1.0 / n_pts as f64;
                    for l in 0..n_pts {
                        let a = a0 + 2.0 * PI * l as f64 * inv;
                        let x = [z[0] + r * a.cos(), z[1] + r * a.sin()];
                        if let Some((nodes, bary)) = mesh.locate(x) {
                            for (n, b) in nodes.iter().zip(bary) {
                                if b != 0.0 {
                                    entries.push((*n, b * inv));
                                }
                            }
                        }
                    }
                }
                entries.sort_by_key(|e| e.0);
                let start = col_idx.len();
                for &(n, v) in entries.iter() {
                    if col_idx.len() > start && *col_idx.last().unwrap() == n as u32 {
                        *values.last_mut().unwrap() += v;
                    } else {
                        col_idx.push(n as u32);
                        values.push(v);
                    }
                }
                if col_idx.len() > start {
                    used.0 = used.0.min(m);
                    used.1 = used.1.max(m + 1);
                }
                row_ptr.push(col_idx.len());
            }
        }
        if used.0 == usize::MAX {
            used = (0, 0);
        }
        let circle = CsrMatrix {
            nrows: n_det * n_r,
            ncols: mesh.num_nodes(),
            row_ptr,
            col_idx,
            values,
        };

        let n_t = geometry.n_times;
        let mut profile = vec![0.0; n_t * n_r];
        for n in 0..n_t {
            let t = geometry.time(n);
            let hi = abel_weights(t + 0.5 * dt, dr, n_r);
            let lo = abel_weights(t - 0.5 * dt, dr, n_r);
            for m in 0..n_r {
                profile[n * n_r + m] = (hi[m] - lo[m]) / dt;
            }
        }
        let y_weights = geometry.y_weights();
        Ok(WaveOperator {
            mesh,
            geometry,
            circle,
            n_r,
            profile,
            col_range: used,
            y_weights,
        })
    }

    pub fn y_weights(&self) -> &[f64] {
        &self.y_weights
    }

    pub fn zeros(&self) -> PressureData {
        PressureData::zeros(self.geometry.n_det(), self.geometry.n_times)
    }

    /// `U p0` on all detectors and times.
    pub fn apply(&self, p0: &[f64]) -> Result<PressureData> {
        check_len("initial pressure", self.mesh.num_nodes(), p0.len())?;
        let mut means = vec![0.0; self.circle.nrows];
        self.circle.mul_vec(p0, &mut means);
        let n_t = self.geometry.n_times;
        let (lo, hi) = self.col_range;
        let mut out = self.zeros();
        for k in 0..self.geometry.n_det() {
            let mk = &means[k * self.n_r..(k + 1) * self.n_r];
            let trace = &mut out.values[k * n_t..(k + 1) * n_t];
            for (n, t) in trace.iter_mut().enumerate() {
                let row = &self.profile[n * self.n_r..(n + 1) * self.n_r];
                let mut acc = 0.0;
                for m in lo..hi {
                    acc += row[m] * mk[m];
                }
                *t = acc;
            }
        }
        Ok(out)
    }

    /// Adjoint of [`apply`](Self::apply) from the time-weighted data product
    /// to the lumped-mass L²(Ω) product.
    pub fn adjoint(&self, v: &PressureData) -> Result<Vec<f64>> {
        check_len("pressure data", self.geometry.len(), v.values.len())?;
        let n_t = self.geometry.n_times;
        let (lo, hi) = self.col_range;
        let mut means = vec![0.0; self.circle.nrows];
        for k in 0..self.geometry.n_det() {
            let mk = &mut means[k * self.n_r..(k + 1) * self.n_r];
            for n in 0..n_t {
                let yv = v.values[k * n_t + n] * self.y_weights[k * n_t + n];
                if yv == 0.0 {
                    continue;
                }
                let row = &self.profile[n * self.n_r..(n + 1) * self.n_r];
                for m in lo..hi {
                    mk[m] += row[m] * yv;
                }
            }
        }
        let mut out = vec![0.0; self.mesh.num_nodes()];
        self.circle.mul_transpose_add(&means, &mut out);
        for (o, m) in out.iter_mut().zip(&self.mesh.lumped_mass) {
            *o /= m;
        }
        Ok(out)
    }

    pub fn inner(&self, u: &PressureData, v: &PressureData) -> f64 {
        crate::linalg::wdot(&self.y_weights, &u.values, &v.values)
    }

    pub fn norm_sq(&self, v: &PressureData) -> f64 {
        self.inner(v, v)
    }

    /// `‖U p0‖²_Y / ‖p0‖²_{L²}`, `None` for `p0 = 0`.
    pub fn isometry_ratio(&self, p0: &[f64]) -> Result<Option<f64>> {
        let denom = crate::linalg::wdot(&self.mesh.lumped_mass, p0, p0);
        if denom == 0.0 {
            return Ok(None);
        }
        let v = self.apply(p0)?;
        Ok(Some(self.norm_sq(&v) / denom))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_operator(cells: usize, n_det: usize) -> WaveOperator {
        let mesh = Arc::new(SpatialMesh::with_cells(cells));
        let dt = mesh.h / 2.0;
        let geo = DetectorGeometry::new(1.8, n_det, dt, 4.0).unwrap();
        WaveOperator::new(mesh, geo).unwrap()
    }

    #[test]
    fn abel_weights_reproduce_known_integrals() {
        // M ≡ 1: ∫_0^τ r/√(τ²−r²) dr = τ
        let w = abel_weights(0.73, 0.01, 200);
        assert!((w.iter().sum::<f64>() - 0.73).abs() < 1e-13);
        // M(r) = r: ∫_0^τ r²/√(τ²−r²) dr = πτ²/4
        let s: f64 = w.iter().enumerate().map(|(m, x)| x * m as f64 * 0.01).sum();
        assert!((s - PI * 0.73 * 0.73 / 4.0).abs() < 1e-12);
        assert!(abel_weights(-0.1, 0.01, 10).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn constant_initial_pressure_is_reproduced_at_early_times() {
        // uniform p0 over a disk large compared to the elapsed time: the
        // pressure at an interior point stays p0 until the edge arrives
        let dr = 0.005;
        let n_r = 400;
        let dt = 2.0 * dr;
        for &t in &[0.3, 0.6, 1.2] {
            let hi = abel_weights(t + 0.5 * dt, dr, n_r);
            let lo = abel_weights(t - 0.5 * dt, dr, n_r);
            let p: f64 = hi.iter().zip(&lo).map(|(a, b)| (a - b) / dt).sum();
            assert!((p - 1.0).abs() < 1e-10, "t={t} p={p}");
        }
    }

    #[test]
    fn geometry_layout() {
        let geo = DetectorGeometry::new(1.8, 128, 0.025, 4.0).unwrap();
        assert_eq!(geo.n_times, 161);
        for p in &geo.positions {
            assert!(((p[0] * p[0] + p[1] * p[1]).sqrt() - 1.8).abs() < 1e-14);
        }
        for side in Side::ALL {
            let arc = geo.arc(side);
            assert_eq!(arc.len(), 64);
        }
        assert_eq!(geo.arc(Side::Top), (0..64).collect::<Vec<_>>());
        assert!(DetectorGeometry::new(1.2, 128, 0.025, 4.0).is_err());
        assert!(DetectorGeometry::new(1.8, 128, 0.025, 3.0).is_err());
    }

    #[test]
    fn zero_and_linearity() {
        let op = small_operator(8, 16);
        let n = op.mesh.num_nodes();
        let z = op.apply(&vec![0.0; n]).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 3.0 * x - y).collect();
        let ua = op.apply(&a).unwrap();
        let ub = op.apply(&b).unwrap();
        let uc = op.apply(&c).unwrap();
        let scale = ua.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..uc.values.len() {
            assert!((uc.values[i] - (3.0 * ua.values[i] - ub.values[i])).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn adjoint_identity() {
        let op = small_operator(10, 24);
        let n = op.mesh.num_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut v = op.zeros();
        v.values
            .iter_mut()
            .for_each(|x| *x = rng.random_range(-1.0..1.0));
        let lhs = op.inner(&op.apply(&p0).unwrap(), &v);
        let adj = op.adjoint(&v).unwrap();
        let rhs = crate::linalg::wdot(&op.mesh.lumped_mass, &p0, &adj);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()));
        assert!(op.adjoint(&op.zeros()).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn restriction_properties() {
        let op = small_operator(8, 16);
        let geo = &op.geometry;
        let mask = DataMask::new(geo, &geo.arc(Side::Left), 2.5);
        let mut v = op.zeros();
        for (i, x) in v.values.iter_mut().enumerate() {
            *x = ((i * 37) % 13) as f64 - 6.0;
        }
        let once = mask.restrict(&v);
        assert_eq!(mask.restrict(&once), once);
        assert!(op.norm_sq(&once) <= op.norm_sq(&v));
        let all: Vec<usize> = (0..geo.n_det()).collect();
        let full = DataMask::new(geo, &all, geo.time(geo.n_times - 1));
        assert_eq!(full.restrict(&v), v);
        // the adjoint of the restricted operator ignores masked-out data
        let mut w = v.clone();
        for (x, &a) in w.values.iter_mut().zip(&mask.active) {
            if !a {
                *x += 100.0;
            }
        }
        assert_eq!(
            op.adjoint(&mask.restrict(&v)).unwrap(),
            op.adjoint(&mask.restrict(&w)).unwrap()
        );
    }
}
