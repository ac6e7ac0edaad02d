//! Velocity-Verlet integration with optional Nosé-Hoover chain and MTK
//! pressure coupling.

use super::neighbor::{build_neighbor_list, NeighborError, NeighborList};
use super::thermostat::{Barostat, NoseHooverChain};
use crate::forcefield::{evaluate, ForceError, ForceEvaluation, PairPotential};
use crate::system::{Configuration, SystemError};
use crate::units::{BOLTZMANN, MVV_TO_EV};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MdError {
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Thermostat(#[from] super::thermostat::ThermostatError),
    #[error("invalid engine setup: {0}")]
    Setup(String),
    #[error("non-finite {what} for atom {index} after step {step}")]
    Diverged { what: &'static str, index: usize, step: u64 },
}

/// Owns one evolving configuration and its force state.
pub struct MdEngine<'m, M: PairPotential + ?Sized> {
    model: &'m M,
    config: Configuration,
    neighbors: NeighborList,
    eval: ForceEvaluation,
    skin: f64,
    frozen: Option<Vec<bool>>,
    steps: u64,
    rebuilds: u64,
}

impl<'m, M: PairPotential + ?Sized> MdEngine<'m, M> {
    pub fn new(model: &'m M, config: Configuration, skin: f64) -> Result<Self, MdError> {
        let neighbors = build_neighbor_list(&config, model.cutoff(), skin)?;
        let eval = evaluate(model, &config, &neighbors)?;
        Ok(Self { model, config, neighbors, eval, skin, frozen: None, steps: 0, rebuilds: 1 })
    }

    /// Atoms flagged true keep their positions and zero velocity.
    pub fn set_frozen(&mut self, mask: Option<Vec<bool>>) -> Result<(), MdError> {
        if let Some(m) = &mask {
            if m.len() != self.config.len() {
                return Err(MdError::Setup(format!("frozen mask has {} entries for {} atoms", m.len(), self.config.len())));
            }
            for (v, &f) in self.config.velocities_mut().iter_mut().zip(m) {
                if f {
                    *v = [0.0; 3];
                }
            }
        }
        self.frozen = mask;
        Ok(())
    }

    pub fn frozen(&self) -> Option<&[bool]> {
        self.frozen.as_deref()
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut Configuration {
        &mut self.config
    }

    pub fn into_config(self) -> Configuration {
        self.config
    }

    pub fn model(&self) -> &M {
        self.model
    }

    pub fn forces(&self) -> &ForceEvaluation {
        &self.eval
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn neighbor_rebuilds(&self) -> u64 {
        self.rebuilds
    }

    fn is_frozen(&self, i: usize) -> bool {
        self.frozen.as_ref().map(|f| f[i]).unwrap_or(false)
    }

    /// Thermal degrees of freedom: 3N - 3 with all atoms mobile, 3 N_mobile
    /// when some are frozen (momentum is then not conserved).
    pub fn degrees_of_freedom(&self) -> f64 {
        match &self.frozen {
            Some(f) => 3.0 * f.iter().filter(|x| !**x).count() as f64,
            None => (3 * self.config.len()).saturating_sub(3) as f64,
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.config.kinetic_energy()
    }

    pub fn potential_energy(&self) -> f64 {
        self.eval.potential_energy.unwrap_or(0.0)
    }

    pub fn temperature(&self) -> f64 {
        let ndof = self.degrees_of_freedom();
        if ndof <= 0.0 {
            return 0.0;
        }
        2.0 * self.thermal_kinetic_energy() / (ndof * BOLTZMANN)
    }

    /// Kinetic energy measured in the center-of-mass frame when all atoms are mobile.
    fn thermal_kinetic_energy(&self) -> f64 {
        if self.frozen.is_some() {
            return self.config.kinetic_energy();
        }
        let p = self.config.momentum();
        let m = self.config.total_mass();
        self.config.kinetic_energy() - 0.5 * MVV_TO_EV * crate::system::norm2(p) / m
    }

    /// Instantaneous pressure (2K + W)/(3V), eV/Å³.
    pub fn pressure(&self) -> f64 {
        (2.0 * self.kinetic_energy() + self.eval.virial) / (3.0 * self.config.cell().volume())
    }

    pub fn total_energy(&self) -> f64 {
        self.kinetic_energy() + self.potential_energy()
    }

    fn refresh_forces(&mut self) -> Result<(), MdError> {
        if !self.neighbors.is_valid_for(&self.config) {
            self.neighbors = build_neighbor_list(&self.config, self.model.cutoff(), self.skin)?;
            self.rebuilds += 1;
        }
        self.eval = evaluate(self.model, &self.config, &self.neighbors)?;
        Ok(())
    }

    /// Replaces positions/velocities (e.g. after an external edit) and recomputes forces.
    pub fn reset_config(&mut self, config: Configuration) -> Result<(), MdError> {
        if config.len() != self.config.len() {
            return Err(MdError::Setup("atom count changed".into()));
        }
        self.config = config;
        self.neighbors = build_neighbor_list(&self.config, self.model.cutoff(), self.skin)?;
        self.rebuilds += 1;
        self.eval = evaluate(self.model, &self.config, &self.neighbors)?;
        Ok(())
    }

    fn kick(&mut self, dt_half: f64) {
        let frozen = self.frozen.as_deref();
        let Configuration { velocities, masses, .. } = &mut self.config;
        for (i, v) in velocities.iter_mut().enumerate() {
            if frozen.map(|f| f[i]).unwrap_or(false) {
                continue;
            }
            let c = dt_half / (masses[i] * MVV_TO_EV);
            let f = self.eval.forces[i];
            for a in 0..3 {
                v[a] += c * f[a];
            }
        }
    }

    fn drift(&mut self, dt: f64) {
        let frozen = self.frozen.as_deref();
        let Configuration { positions, velocities, cell, .. } = &mut self.config;
        for (i, p) in positions.iter_mut().enumerate() {
            if frozen.map(|f| f[i]).unwrap_or(false) {
                continue;
            }
            let v = velocities[i];
            *p = cell.wrap([p[0] + v[0] * dt, p[1] + v[1] * dt, p[2] + v[2] * dt]);
        }
    }

    fn scale_velocities(&mut self, s: f64) {
        for v in self.config.velocities_mut() {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }

    fn finish_step(&mut self, dt: f64) -> Result<(), MdError> {
        self.steps += 1;
        self.config.time_ps += dt * 1e-3;
        for (i, (p, v)) in self.config.positions.iter().zip(&self.config.velocities).enumerate() {
            if p.iter().chain(v.iter()).any(|x| !x.is_finite()) {
                return Err(MdError::Diverged { what: "state", index: i, step: self.steps });
            }
        }
        Ok(())
    }

    /// One velocity-Verlet step of `dt` fs.
    pub fn step_nve(&mut self, dt: f64) -> Result<(), MdError> {
        self.kick(0.5 * dt);
        self.drift(dt);
        self.refresh_forces()?;
        self.kick(0.5 * dt);
        self.finish_step(dt)
    }

    /// Velocity Verlet wrapped in two chain half steps.
    pub fn step_nvt(&mut self, dt: f64, chain: &mut NoseHooverChain) -> Result<(), MdError> {
        let ndof = self.degrees_of_freedom();
        let s = chain.half_step(2.0 * self.thermal_kinetic_energy(), ndof, dt);
        self.scale_velocities(s);
        self.kick(0.5 * dt);
        self.drift(dt);
        self.refresh_forces()?;
        self.kick(0.5 * dt);
        let s = chain.half_step(2.0 * self.thermal_kinetic_energy(), ndof, dt);
        self.scale_velocities(s);
        self.finish_step(dt)
    }

    /// Isotropic MTK step: the log-volume velocity couples to the particle
    /// velocities and positions, with its own chain.
    pub fn step_npt(&mut self, dt: f64, chain: &mut NoseHooverChain, baro: &mut Barostat) -> Result<(), MdError> {
        if self.frozen.is_some() {
            return Err(MdError::Setup("pressure coupling is not supported with frozen atoms".into()));
        }
        let ndof = self.degrees_of_freedom();
        let alpha = 1.0 + 3.0 / ndof;
        let w = baro.mass(ndof, chain.target_temperature());

        self.npt_thermostats(dt, chain, baro, w, ndof);
        baro.v_eps += 0.5 * dt * self.g_eps(alpha, w, baro.spec.target_pressure);
        self.npt_kick(dt, alpha, baro.v_eps);

        let x = baro.v_eps * dt;
        let grow = x.exp();
        let half = 0.5 * x;
        let sinhc = if half.abs() < 1e-8 { 1.0 + half * half / 6.0 } else { half.sinh() / half };
        let drift = dt * half.exp() * sinhc;
        let new_cell = self.config.cell.scaled(grow);
        {
            let Configuration { positions, velocities, .. } = &mut self.config;
            for (p, v) in positions.iter_mut().zip(velocities.iter()) {
                *p = new_cell.wrap([p[0] * grow + v[0] * drift, p[1] * grow + v[1] * drift, p[2] * grow + v[2] * drift]);
            }
        }
        self.config.cell = new_cell;
        let edge = new_cell.min_periodic_edge();
        if edge <= 2.0 * (self.model.cutoff() + self.skin) {
            return Err(MdError::Neighbor(NeighborError::CellTooSmall { edge, needed: 2.0 * (self.model.cutoff() + self.skin) }));
        }
        self.refresh_forces()?;

        self.npt_kick(dt, alpha, baro.v_eps);
        baro.v_eps += 0.5 * dt * self.g_eps(alpha, w, baro.spec.target_pressure);
        self.npt_thermostats(dt, chain, baro, w, ndof);
        self.finish_step(dt)
    }

    fn g_eps(&self, alpha: f64, w: f64, p_ext: f64) -> f64 {
        let v = self.config.cell().volume();
        (alpha * 2.0 * self.kinetic_energy() + self.eval.virial - 3.0 * v * p_ext) / w
    }

    fn npt_thermostats(&mut self, dt: f64, chain: &mut NoseHooverChain, baro: &mut Barostat, w: f64, ndof: f64) {
        let sb = baro.chain.half_step(w * baro.v_eps * baro.v_eps, 1.0, dt);
        baro.v_eps *= sb;
        let s = chain.half_step(2.0 * self.thermal_kinetic_energy(), ndof, dt);
        self.scale_velocities(s);
    }

    fn npt_kick(&mut self, dt: f64, alpha: f64, v_eps: f64) {
        let damp = (-alpha * v_eps * 0.25 * dt).exp();
        self.scale_velocities(damp);
        self.kick(0.5 * dt);
        self.scale_velocities(damp);
    }

    /// Extended-system energy for NVT (`baro` None) or NPT.
    pub fn conserved_energy(&self, chain: Option<&NoseHooverChain>, baro: Option<&Barostat>) -> f64 {
        let ndof = self.degrees_of_freedom();
        let mut h = self.total_energy();
        if let Some(c) = chain {
            h += c.energy(ndof);
        }
        if let (Some(b), Some(c)) = (baro, chain) {
            let w = b.mass(ndof, c.target_temperature());
            h += b.spec.target_pressure * self.config.cell().volume() + 0.5 * w * b.v_eps * b.v_eps + b.chain.energy(1.0);
        }
        h
    }

    /// Recomputes forces with a fresh list (test hook for list equivalence).
    pub fn forces_without_list(&self) -> Result<ForceEvaluation, MdError> {
        Ok(crate::forcefield::evaluate_fresh(self.model, &self.config)?)
    }

    pub fn is_atom_frozen(&self, i: usize) -> bool {
        self.is_frozen(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcefield::{LennardJonesModel, ZeroForceModel};
    use crate::md::thermostat::{assign_velocities, BarostatSpec};
    use crate::solid::build_fcc;
    use crate::system::{instantaneous_temperature, SimulationCell};
    use crate::units::{ARGON_EPSILON, ARGON_MASS, ARGON_SIGMA};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lj() -> LennardJonesModel {
        LennardJonesModel::argon()
    }

    #[test]
    fn equilibrium_fcc_stays_put() {
        let cfg = build_fcc(4, 0.858, ARGON_MASS).unwrap();
        let m = lj();
        let mut e = MdEngine::new(&m, cfg.clone(), 0.5).unwrap();
        for _ in 0..20 {
            e.step_nve(10.78).unwrap();
        }
        let dev = e.config().positions().iter().flatten().zip(cfg.positions().iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-12, "{dev}");
    }

    #[test]
    fn free_atom_moves_ballistically() {
        let cell = SimulationCell::cubic(30.0).unwrap();
        let mut cfg = Configuration::at_rest(vec![[1.0, 2.0, 3.0]], ARGON_MASS, cell).unwrap();
        cfg.set_velocities(vec![[0.01, -0.002, 0.0005]]).unwrap();
        let m = lj();
        let mut e = MdEngine::new(&m, cfg, 0.5).unwrap();
        e.step_nve(2.0).unwrap();
        let p = e.config().positions()[0];
        assert_eq!(p, [1.0 + 0.01 * 2.0, 2.0 - 0.002 * 2.0, 3.0 + 0.0005 * 2.0]);
    }

    fn dimer_drift(dt: f64, steps: usize) -> f64 {
        let cell = SimulationCell::cubic(30.0).unwrap();
        let mut cfg = Configuration::at_rest(vec![[10.0, 10.0, 10.0], [13.6, 10.0, 10.0]], ARGON_MASS, cell).unwrap();
        cfg.set_velocities(vec![[0.001, 0.0, 0.0], [-0.001, 0.0, 0.0]]).unwrap();
        let m = lj();
        let mut e = MdEngine::new(&m, cfg, 0.5).unwrap();
        let e0 = e.total_energy();
        let mut worst = 0.0f64;
        for _ in 0..steps {
            e.step_nve(dt).unwrap();
            worst = worst.max((e.total_energy() - e0).abs());
        }
        worst
    }

    #[test]
    fn dimer_energy_drift_bounded() {
        let full = dimer_drift(1.0, 10_000);
        let half = dimer_drift(0.5, 20_000);
        assert!(full < 1e-5, "drift {full}");
        // Second-order integrator: halving dt quarters the error.
        assert!(half < 0.35 * full, "{half} vs {full}");
    }

    fn small_liquid(seed: u64, n_cells: usize, temperature: f64) -> Configuration {
        let mut cfg = build_fcc(n_cells, 0.858, ARGON_MASS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        assign_velocities(&mut cfg, temperature, None, &mut rng);
        cfg
    }

    #[test]
    fn momentum_conserved_and_lists_match_brute_force() {
        let m = lj();
        let mut e = MdEngine::new(&m, small_liquid(3, 4, 300.0), 0.5).unwrap();
        let p0 = e.config().momentum();
        for step in 1..=1000 {
            e.step_nve(5.0).unwrap();
            if step % 100 == 0 {
                let bf = e.forces_without_list().unwrap();
                let dev = bf.forces.iter().flatten().zip(e.forces().forces.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(dev < 1e-10, "step {step}: {dev}");
            }
        }
        let p1 = e.config().momentum();
        for a in 0..3 {
            assert!((p1[a] - p0[a]).abs() < 1e-10);
        }
        assert!(e.neighbor_rebuilds() > 1);
    }

    #[test]
    fn nvt_first_step_matches_nve_at_target() {
        let m = lj();
        let cfg = small_liquid(5, 4, 100.0);
        let t0 = instantaneous_temperature(&cfg).unwrap();
        let mut a = MdEngine::new(&m, cfg.clone(), 0.5).unwrap();
        let mut b = MdEngine::new(&m, cfg, 0.5).unwrap();
        let mut chain = NoseHooverChain::standard(t0).unwrap();
        a.step_nve(1.0).unwrap();
        b.step_nvt(1.0, &mut chain).unwrap();
        let dev = a.config().velocities().iter().flatten().zip(b.config().velocities().iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let vscale = a.config().velocities().iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
        assert!(dev < 1e-6 * vscale, "{dev}");
    }

    #[test]
    fn frozen_atoms_do_not_move() {
        let m = lj();
        let cfg = small_liquid(6, 4, 150.0);
        let mut e = MdEngine::new(&m, cfg.clone(), 0.5).unwrap();
        let mask: Vec<bool> = (0..cfg.len()).map(|i| i % 2 == 0).collect();
        e.set_frozen(Some(mask.clone())).unwrap();
        let mut chain = NoseHooverChain::new(3, 1.0, 1, 150.0).unwrap();
        for _ in 0..50 {
            e.step_nvt(5.0, &mut chain).unwrap();
        }
        for i in (0..cfg.len()).step_by(2) {
            assert_eq!(e.config().positions()[i], cfg.positions()[i]);
            assert_eq!(e.config().velocities()[i], [0.0; 3]);
        }
        assert_eq!(e.degrees_of_freedom(), 3.0 * 128.0);
        assert!(e.set_frozen(Some(vec![true])).is_err());
    }

    #[test]
    fn barostat_limit_keeps_volume() {
        let m = lj();
        let cfg = small_liquid(7, 4, 100.0);
        let v0 = cfg.cell().volume();
        let mut e = MdEngine::new(&m, cfg, 0.5).unwrap();
        let mut chain = NoseHooverChain::standard(100.0).unwrap();
        let mut baro = Barostat::new(BarostatSpec::new(1e-9, 0.0).unwrap(), &chain).unwrap();
        for _ in 0..100 {
            e.step_npt(10.0, &mut chain, &mut baro).unwrap();
        }
        assert!((e.config().cell().volume() / v0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ideal_gas_density_follows_pressure() {
        // Zero forces at 100 K and P: the volume should settle near N k T / P.
        let n = 500usize;
        let t = 100.0;
        let p = 0.0002;
        let target_v = n as f64 * BOLTZMANN * t / p;
        let edge = (1.3 * target_v).cbrt();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos: Vec<[f64; 3]> = (0..n).map(|_| {
            use rand::Rng;
            [rng.gen::<f64>() * edge, rng.gen::<f64>() * edge, rng.gen::<f64>() * edge]
        }).collect();
        let mut cfg = Configuration::at_rest(pos, ARGON_MASS, SimulationCell::cubic(edge).unwrap()).unwrap();
        assign_velocities(&mut cfg, t, None, &mut rng);
        let m = ZeroForceModel { cutoff: 1.0 };
        let mut e = MdEngine::new(&m, cfg, 0.5).unwrap();
        let mut chain = NoseHooverChain::new(3, 5.0, 2, t).unwrap();
        let mut baro = Barostat::new(BarostatSpec::new(2.0, p).unwrap(), &chain).unwrap();
        let mut acc = 0.0;
        let mut count = 0.0;
        for step in 0..40_000 {
            e.step_npt(10.0, &mut chain, &mut baro).unwrap();
            if step >= 10_000 {
                acc += e.config().cell().volume();
                count += 1.0;
            }
        }
        let mean_v = acc / count;
        assert!((mean_v / target_v - 1.0).abs() < 0.05, "V = {mean_v}, ideal {target_v}");
    }

    #[test]
    fn nvt_extended_energy_is_conserved() {
        // Shifted energy: crossings of an unshifted cutoff alone move H by ~1e-4 eV each.
        let m = LennardJonesModel::new(ARGON_EPSILON, ARGON_SIGMA, 8.5, true).unwrap();
        let mut e = MdEngine::new(&m, small_liquid(8, 4, 120.0), 0.5).unwrap();
        let mut chain = NoseHooverChain::new(5, 0.5, 5, 100.0).unwrap();
        let h0 = e.conserved_energy(Some(&chain), None);
        let mut worst = 0.0f64;
        for _ in 0..2000 {
            e.step_nvt(5.0, &mut chain).unwrap();
            worst = worst.max((e.conserved_energy(Some(&chain), None) - h0).abs());
        }
        assert!(worst < 2e-3, "drift {worst}");
    }
}
