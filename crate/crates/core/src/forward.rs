//! Per-illumination forward operators `F_i = χ_i U (μ_a A T_i(μ))`, their
//! derivatives, adjoints and the data-fidelity terms.

use std::sync::{Arc, Mutex};

use crate::acoustic::{DataMask, PressureData, WaveOperator};
use crate::counters::Counters;
use crate::error::{check_len, QpatError, Result};
use crate::field::{ParameterPair, PhotonField, SourcePair};
use crate::grid::Side;
use crate::rte::{average, TransportOperator, TransportSystem};

/// One boundary illumination together with its detector arc.
#[derive(Debug, Clone)]
pub struct Illumination {
    pub index: usize,
    pub side: Side,
    pub source: SourcePair,
    pub detectors: Vec<usize>,
    pub horizon: f64,
    pub mask: DataMask,
}

#[derive(Debug, Default)]
struct Cache {
    fingerprint: Option<u64>,
    system: Option<Arc<TransportSystem>>,
    photons: Vec<Option<Arc<PhotonField>>>,
}

/// The discrete forward model on one spatial/angular grid.
#[derive(Debug)]
pub struct ForwardModel {
    pub transport: Arc<TransportOperator>,
    pub wave: Arc<WaveOperator>,
    pub illuminations: Vec<Illumination>,
    rhs: Vec<Vec<f64>>,
    cache: Mutex<Cache>,
}

impl ForwardModel {
    pub fn new(
        transport: Arc<TransportOperator>,
        wave: Arc<WaveOperator>,
        illuminations: Vec<Illumination>,
    ) -> Result<Self> {
        check_len(
            "wave operator mesh",
            transport.n_nodes(),
            wave.mesh.num_nodes(),
        )?;
        let rhs = illuminations
            .iter()
            .map(|il| transport.rhs(&il.source))
            .collect::<Result<Vec<_>>>()?;
        let n = illuminations.len();
        Ok(ForwardModel {
            transport,
            wave,
            illuminations,
            rhs,
            cache: Mutex::new(Cache {
                photons: vec![None; n],
                ..Cache::default()
            }),
        })
    }

    pub fn len(&self) -> usize {
        self.illuminations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.illuminations.is_empty()
    }

    pub fn n_nodes(&self) -> usize {
        self.transport.n_nodes()
    }

    pub fn mass(&self) -> &[f64] {
        &self.transport.mesh.lumped_mass
    }

    pub fn counters(&self) -> &Arc<Counters> {
        &self.transport.counters
    }

    /// Discrete right-hand side of illumination `i`.
    pub fn rhs(&self, i: usize) -> &[f64] {
        &self.rhs[i]
    }

    pub fn clear_cache(&self) {
        let mut c = self.cache.lock().unwrap();
        c.fingerprint = None;
        c.system = None;
        c.photons.iter_mut().for_each(|p| *p = None);
    }

    fn refresh(&self, c: &mut Cache, mu: &ParameterPair) -> Result<Arc<TransportSystem>> {
        let fp = mu.fingerprint();
        if c.fingerprint != Some(fp) || c.system.is_none() {
            let sys = Arc::new(self.transport.assemble(mu)?);
            c.fingerprint = Some(fp);
            c.system = Some(sys);
            c.photons.iter_mut().for_each(|p| *p = None);
        }
        Ok(Arc::clone(c.system.as_ref().unwrap()))
    }

    /// Assembled transport system at `μ` (cached).
    pub fn system(&self, mu: &ParameterPair) -> Result<Arc<TransportSystem>> {
        let mut c = self.cache.lock().unwrap();
        self.refresh(&mut c, mu)
    }

    /// `Φ_i = T_i(μ)` (cached per μ).
    pub fn photon(&self, mu: &ParameterPair, i: usize) -> Result<Arc<PhotonField>> {
        let mut c = self.cache.lock().unwrap();
        let sys = self.refresh(&mut c, mu)?;
        if let Some(p) = &c.photons[i] {
            return Ok(Arc::clone(p));
        }
        let x = sys.solve_vec(&self.rhs[i])?;
        let phi = Arc::new(PhotonField::from_values(
            self.transport.n_nodes(),
            self.transport.n_dirs(),
            x,
        ));
        c.photons[i] = Some(Arc::clone(&phi));
        Ok(phi)
    }

    /// `H_i = μ_a · A Φ_i`
    pub fn heating(&self, mu: &ParameterPair, i: usize) -> Result<Vec<f64>> {
        let phi = self.photon(mu, i)?;
        let a = average(&phi, self.transport.angles.weight);
        Ok(a.iter().zip(&mu.mu_a).map(|(x, m)| x * m).collect())
    }

    /// `F_i(μ)`: restricted wave trace of the heating.
    pub fn forward(&self, mu: &ParameterPair, i: usize) -> Result<PressureData> {
        let h = self.heating(mu, i)?;
        let v = self.wave.apply(&h)?;
        Ok(self.illuminations[i].mask.restrict(&v))
    }

    /// `F_i'(μ) h`
    pub fn derivative(
        &self,
        mu: &ParameterPair,
        h: &ParameterPair,
        i: usize,
    ) -> Result<PressureData> {
        check_len("direction", mu.len(), h.len())?;
        for p in 0..mu.len() {
            if (mu.mu_a[p] <= 0.0 && h.mu_a[p] < 0.0) || (mu.mu_s[p] <= 0.0 && h.mu_s[p] < 0.0) {
                return Err(QpatError::Infeasible(format!(
                    "direction leaves the feasible set at node {p}"
                )));
            }
        }
        let phi = self.photon(mu, i)?;
        let sys = self.system(mu)?;
        let w = self.transport.angles.weight;
        let mut src = self.transport.apply_derivative(h, &phi.values);
        src.iter_mut().for_each(|v| *v = -*v);
        let dphi = PhotonField::from_values(phi.n_nodes, phi.n_dirs, sys.solve_vec(&src)?);
        let a_phi = average(&phi, w);
        let a_dphi = average(&dphi, w);
        let p0: Vec<f64> = (0..mu.len())
            .map(|p| h.mu_a[p] * a_phi[p] + mu.mu_a[p] * a_dphi[p])
            .collect();
        let v = self.wave.apply(&p0)?;
        Ok(self.illuminations[i].mask.restrict(&v))
    }

    /// `F_i'(μ)* v`, adjoint with respect to the time-weighted data product
    /// and the lumped-mass L² product on both coefficient components.
    pub fn adjoint(&self, mu: &ParameterPair, v: &PressureData, i: usize) -> Result<ParameterPair> {
        let masked = self.illuminations[i].mask.restrict(v);
        let g = self.wave.adjoint(&masked)?;
        let phi = self.photon(mu, i)?;
        let sys = self.system(mu)?;
        let n = self.n_nodes();
        let nd = self.transport.n_dirs();
        let w = self.transport.angles.weight;
        let mass = self.mass();
        let mut z = vec![0.0; n * nd];
        for j in 0..nd {
            for p in 0..n {
                z[j * n + p] = w * mass[p] * mu.mu_a[p] * g[p];
            }
        }
        let lambda = sys.solve_transpose_vec(&z)?;
        let sens = self.transport.parameter_sensitivity(&lambda, &phi.values);
        let a_phi = average(&phi, w);
        let ga = (0..n)
            .map(|p| a_phi[p] * g[p] - sens.mu_a[p] / mass[p])
            .collect();
        let gs = (0..n).map(|p| -sens.mu_s[p] / mass[p]).collect();
        Ok(ParameterPair::new(ga, gs))
    }

    /// `F_i(μ) − v_i` on the active data set.
    pub fn residual(
        &self,
        mu: &ParameterPair,
        data: &PressureData,
        i: usize,
    ) -> Result<PressureData> {
        check_len("data", self.wave.geometry.len(), data.values.len())?;
        let mut r = self.forward(mu, i)?;
        let mask = &self.illuminations[i].mask;
        for ((x, d), &a) in r.values.iter_mut().zip(&data.values).zip(&mask.active) {
            *x = if a { *x - d } else { 0.0 };
        }
        Ok(r)
    }

    /// `½‖F_i(μ) − v_i‖²_Y`
    pub fn fidelity(&self, mu: &ParameterPair, data: &PressureData, i: usize) -> Result<f64> {
        let r = self.residual(mu, data, i)?;
        Ok(0.5 * self.wave.norm_sq(&r))
    }

    /// Value and gradient of the fidelity term of illumination `i`; one
    /// transport solve and one adjoint solve unless `Φ_i` is cached.
    pub fn fidelity_gradient(
        &self,
        mu: &ParameterPair,
        data: &PressureData,
        i: usize,
    ) -> Result<(f64, ParameterPair)> {
        let r = self.residual(mu, data, i)?;
        let value = 0.5 * self.wave.norm_sq(&r);
        let grad = self.adjoint(mu, &r, i)?;
        Ok((value, grad))
    }

    /// Y-norm of the data residual of illumination `i`.
    pub fn residual_norm(&self, mu: &ParameterPair, data: &PressureData, i: usize) -> Result<f64> {
        Ok(self.wave.norm_sq(&self.residual(mu, data, i)?).sqrt())
    }
}
