//! Nosé-Hoover chains and the isotropic MTK barostat state, plus
//! Maxwell-Boltzmann velocity assignment.

use crate::system::{Configuration, Vec3};
use crate::units::{BOLTZMANN, MVV_TO_EV};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// 1 eV/Å³ in bar.
pub const EV_PER_A3_TO_BAR: f64 = 1.602_176_634e6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ThermostatError {
    #[error("chain length must be at least 1")]
    EmptyChain,
    #[error("collision frequency must be positive, got {0} /ps")]
    BadFrequency(f64),
    #[error("target temperature must be non-negative and finite, got {0} K")]
    BadTemperature(f64),
    #[error("mtk_loops must be at least 1")]
    NoLoops,
}

/// A Nosé-Hoover chain. Masses follow Q_1 = N_f k T / ω², Q_k = k T / ω²
/// with ω the collision frequency; each half step is split into `mtk_loops`
/// sub-steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoseHooverChain {
    chain_length: usize,
    /// Collision frequency in 1/ps.
    collision_frequency: f64,
    mtk_loops: usize,
    target_temperature: f64,
    eta: Vec<f64>,
    /// 1/fs.
    eta_dot: Vec<f64>,
    eta_dotdot: Vec<f64>,
}

impl NoseHooverChain {
    pub fn new(chain_length: usize, collision_frequency: f64, mtk_loops: usize, target_temperature: f64) -> Result<Self, ThermostatError> {
        if chain_length == 0 {
            return Err(ThermostatError::EmptyChain);
        }
        if !(collision_frequency > 0.0 && collision_frequency.is_finite()) {
            return Err(ThermostatError::BadFrequency(collision_frequency));
        }
        if mtk_loops == 0 {
            return Err(ThermostatError::NoLoops);
        }
        if !(target_temperature >= 0.0 && target_temperature.is_finite()) {
            return Err(ThermostatError::BadTemperature(target_temperature));
        }
        Ok(Self {
            chain_length,
            collision_frequency,
            mtk_loops,
            target_temperature,
            eta: vec![0.0; chain_length],
            eta_dot: vec![0.0; chain_length],
            eta_dotdot: vec![0.0; chain_length],
        })
    }

    /// Chain of 5, 0.02 /ps, 5 loops.
    pub fn standard(target_temperature: f64) -> Result<Self, ThermostatError> {
        Self::new(5, 0.02, 5, target_temperature)
    }

    pub fn chain_length(&self) -> usize {
        self.chain_length
    }

    pub fn collision_frequency(&self) -> f64 {
        self.collision_frequency
    }

    pub fn mtk_loops(&self) -> usize {
        self.mtk_loops
    }

    pub fn target_temperature(&self) -> f64 {
        self.target_temperature
    }

    pub fn set_target_temperature(&mut self, t: f64) -> Result<(), ThermostatError> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(ThermostatError::BadTemperature(t));
        }
        self.target_temperature = t;
        Ok(())
    }

    pub fn eta_dot(&self) -> &[f64] {
        &self.eta_dot
    }

    fn masses(&self, ndof: f64) -> Vec<f64> {
        let w = self.collision_frequency * 1e-3;
        let kt = BOLTZMANN * self.target_temperature;
        (0..self.chain_length).map(|k| if k == 0 { ndof * kt / (w * w) } else { kt / (w * w) }).collect()
    }

    /// Propagates the chain over dt/2 given twice the kinetic energy of the
    /// coupled degrees of freedom; returns the factor by which their
    /// velocities must be scaled.
    pub fn half_step(&mut self, mut two_ke: f64, ndof: f64, dt: f64) -> f64 {
        let kt = BOLTZMANN * self.target_temperature;
        if ndof <= 0.0 || kt <= 0.0 {
            return 1.0;
        }
        let q = self.masses(ndof);
        let m = self.chain_length;
        let ke_target = ndof * kt;
        self.eta_dotdot[0] = (two_ke - ke_target) / q[0];
        for k in 1..m {
            self.eta_dotdot[k] = (q[k - 1] * self.eta_dot[k - 1].powi(2) - kt) / q[k];
        }
        let frac = 1.0 / self.mtk_loops as f64;
        let (dthalf, dt4, dt8) = (0.5 * dt * frac, 0.25 * dt * frac, 0.125 * dt * frac);
        let next = |ed: &[f64], k: usize| if k + 1 < m { ed[k + 1] } else { 0.0 };
        let mut total = 1.0;
        for _ in 0..self.mtk_loops {
            for k in (1..m).rev() {
                let e = (-dt8 * next(&self.eta_dot, k)).exp();
                self.eta_dot[k] = (self.eta_dot[k] * e + self.eta_dotdot[k] * dt4) * e;
            }
            let e0 = (-dt8 * next(&self.eta_dot, 0)).exp();
            self.eta_dot[0] = (self.eta_dot[0] * e0 + self.eta_dotdot[0] * dt4) * e0;

            let factor = (-dthalf * self.eta_dot[0]).exp();
            total *= factor;
            two_ke *= factor * factor;
            for k in 0..m {
                self.eta[k] += dthalf * self.eta_dot[k];
            }

            self.eta_dotdot[0] = (two_ke - ke_target) / q[0];
            self.eta_dot[0] = (self.eta_dot[0] * e0 + self.eta_dotdot[0] * dt4) * e0;
            for k in 1..m {
                let e = (-dt8 * next(&self.eta_dot, k)).exp();
                self.eta_dotdot[k] = (q[k - 1] * self.eta_dot[k - 1].powi(2) - kt) / q[k];
                self.eta_dot[k] = (self.eta_dot[k] * e + self.eta_dotdot[k] * dt4) * e;
            }
        }
        total
    }

    /// Energy stored in the chain, eV.
    pub fn energy(&self, ndof: f64) -> f64 {
        let kt = BOLTZMANN * self.target_temperature;
        if ndof <= 0.0 || kt <= 0.0 {
            return 0.0;
        }
        let q = self.masses(ndof);
        let kinetic: f64 = (0..self.chain_length).map(|k| 0.5 * q[k] * self.eta_dot[k].powi(2)).sum();
        let potential = ndof * kt * self.eta[0] + kt * self.eta[1..].iter().sum::<f64>();
        kinetic + potential
    }
}

/// Isotropic pressure coupling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarostatSpec {
    /// 1/ps.
    pub collision_frequency: f64,
    /// eV/Å³.
    pub target_pressure: f64,
}

impl BarostatSpec {
    pub fn new(collision_frequency: f64, target_pressure: f64) -> Result<Self, ThermostatError> {
        if !(collision_frequency > 0.0 && collision_frequency.is_finite()) {
            return Err(ThermostatError::BadFrequency(collision_frequency));
        }
        Ok(Self { collision_frequency, target_pressure })
    }
}

/// Barostat dynamical state: log-volume velocity and its own chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barostat {
    pub spec: BarostatSpec,
    /// 1/fs.
    pub(crate) v_eps: f64,
    pub(crate) chain: NoseHooverChain,
}

impl Barostat {
    /// Barostat whose chain shares the particle thermostat's settings.
    pub fn new(spec: BarostatSpec, thermostat: &NoseHooverChain) -> Result<Self, ThermostatError> {
        let chain = NoseHooverChain::new(
            thermostat.chain_length(),
            thermostat.collision_frequency(),
            thermostat.mtk_loops(),
            thermostat.target_temperature(),
        )?;
        Ok(Self { spec, v_eps: 0.0, chain })
    }

    /// Barostat mass W = (N_f + 3) k T / ω_b², eV·fs².
    pub(crate) fn mass(&self, ndof: f64, temperature: f64) -> f64 {
        let w = self.spec.collision_frequency * 1e-3;
        (ndof + 3.0) * BOLTZMANN * temperature.max(1e-3) / (w * w)
    }

    pub fn volume_rate(&self) -> f64 {
        self.v_eps
    }
}

/// Independent Gaussian velocities with variance k T / m per component, no
/// post-processing.
pub fn sample_maxwell_boltzmann<R: Rng>(masses: &[f64], temperature: f64, rng: &mut R) -> Vec<Vec3> {
    masses
        .iter()
        .map(|&m| {
            let s = (BOLTZMANN * temperature / (m * MVV_TO_EV)).sqrt();
            let g = |rng: &mut R| -> f64 { StandardNormal.sample(rng) };
            [s * g(rng), s * g(rng), s * g(rng)]
        })
        .collect()
}

/// Maxwell-Boltzmann velocities with zero total momentum, rescaled to exactly
/// `temperature`. Atoms flagged in `frozen` get zero velocity.
pub fn assign_velocities<R: Rng>(config: &mut Configuration, temperature: f64, frozen: Option<&[bool]>, rng: &mut R) {
    let masses = config.masses().to_vec();
    let mut v = sample_maxwell_boltzmann(&masses, temperature, rng);
    let is_frozen = |i: usize| frozen.map(|f| f[i]).unwrap_or(false);
    let mobile: Vec<usize> = (0..v.len()).filter(|&i| !is_frozen(i)).collect();
    for i in 0..v.len() {
        if is_frozen(i) {
            v[i] = [0.0; 3];
        }
    }
    if mobile.len() >= 2 {
        let mtot: f64 = mobile.iter().map(|&i| masses[i]).sum();
        let mut p = [0.0; 3];
        for &i in &mobile {
            for a in 0..3 {
                p[a] += masses[i] * v[i][a];
            }
        }
        for &i in &mobile {
            for a in 0..3 {
                v[i][a] -= p[a] / mtot;
            }
        }
        let two_ke: f64 = mobile.iter().map(|&i| masses[i] * crate::system::norm2(v[i])).sum::<f64>() * MVV_TO_EV;
        let ndof = (3 * mobile.len() - 3) as f64;
        let current = two_ke / (ndof * BOLTZMANN);
        if current > 0.0 {
            let s = (temperature / current).sqrt();
            for &i in &mobile {
                v[i] = crate::system::scale(v[i], s);
            }
        }
    }
    config.set_velocities(v).expect("length preserved");
}
