//! Solid–liquid coexistence melting point: biphasic cells, phase labels,
//! interface velocity and the zero-velocity temperature.

mod order;

pub use order::{averaged_q6, Labels, Phase, PhaseClassifier};

use crate::dynamics::linear_fit;
use crate::forcefield::PairPotential;
use crate::md::{run_protocol_with, Ensemble, NeighborError, PressureTarget, ProtocolError, ProtocolSpec, RunOptions, Stage};
use crate::solid::{build_fcc, build_fcc_cells, fcc_lattice_constant};
use crate::system::{Configuration, SystemError, Trajectory};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Coexistence temperatures, K.
pub const DEFAULT_TEMPERATURES: [f64; 3] = [20.0, 61.36, 100.0];

#[derive(Debug, thiserror::Error)]
pub enum MeltingError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("liquid half still {solid:.0}% solid after melting at {temperature} K; raise melt_temperature_k")]
    DidNotMelt { solid: f64, temperature: f64 },
    #[error("half-cell thickness {thickness:.2} Å must exceed twice the model cutoff ({cutoff} Å)")]
    TooThin { thickness: f64, cutoff: f64 },
    #[error("a phase vanished after {survival_ps:.3} ps, leaving {points} frames of coexistence (need 3)")]
    PhaseVanished { survival_ps: f64, points: usize },
    #[error("melting point needs at least 2 temperatures, got {0}")]
    TooFewTemperatures(usize),
    #[error("interface velocity does not depend on temperature")]
    FlatResponse,
    #[error("invalid melting setup: {0}")]
    Invalid(String),
}

fn default_axis() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiphasicSpec {
    pub solid_temperature_k: f64,
    pub liquid_temperature_k: f64,
    /// Temperature used to destroy the lattice of the liquid half before cooling.
    pub melt_temperature_k: f64,
    #[serde(default = "default_axis")]
    pub axis: usize,
    /// Conventional FCC cells of each half; the axis count is doubled for the joined cell.
    pub half_cells: [usize; 3],
    pub density: f64,
    pub mass: f64,
    pub solid_equilibration_ps: f64,
    pub melt_ps: f64,
    pub liquid_equilibration_ps: f64,
    pub timestep_fs: f64,
    pub seed: u64,
}

impl Default for BiphasicSpec {
    /// 2048 + 2048 atoms at 0.858 amu/Å³.
    fn default() -> Self {
        Self {
            solid_temperature_k: 20.0,
            liquid_temperature_k: 100.0,
            melt_temperature_k: 300.0,
            axis: 2,
            half_cells: [8, 8, 8],
            density: 0.858,
            mass: crate::units::ARGON_MASS,
            solid_equilibration_ps: 10.78,
            melt_ps: 10.78,
            liquid_equilibration_ps: 10.78,
            timestep_fs: 10.78,
            seed: 2024,
        }
    }
}

fn nvt(name: &str, ps: f64, dt: f64, t0: f64, t1: f64, seed: u64, assign: bool) -> Stage {
    Stage {
        name: Some(name.into()),
        ensemble: Ensemble::Nvt,
        duration_ps: ps,
        timestep_fs: dt,
        t_start_k: t0,
        t_end_k: t1,
        sample_every_steps: None,
        seed,
        assign_velocities: Some(assign),
        collision_frequency_per_ps: 0.5,
        chain_length: 5,
        mtk_loops: 5,
        barostat_collision_frequency_per_ps: 0.2,
        target_pressure: PressureTarget::default(),
    }
}

/// Atoms in the lower half along `axis` form the solid.
pub fn solid_half_mask(config: &Configuration, axis: usize) -> Vec<bool> {
    let half = 0.5 * config.cell().lengths()[axis];
    config.positions().iter().map(|p| p[axis] < half).collect()
}

/// Prepares the solid half with the liquid half frozen, then melts and
/// equilibrates the liquid half with the solid frozen.
pub fn build_biphasic<M: PairPotential + ?Sized>(spec: &BiphasicSpec, model: &M, classifier: &PhaseClassifier) -> Result<Configuration, MeltingError> {
    if spec.axis > 2 {
        return Err(MeltingError::Invalid(format!("axis {} out of range", spec.axis)));
    }
    let mut cells = spec.half_cells;
    cells[spec.axis] *= 2;
    let a = fcc_lattice_constant(spec.density, spec.mass);
    let thickness = spec.half_cells[spec.axis] as f64 * a;
    if thickness <= 2.0 * model.cutoff() {
        return Err(MeltingError::TooThin { thickness, cutoff: model.cutoff() });
    }
    // Shift by a quarter layer so no lattice plane sits on the split.
    let mut config = build_fcc_cells(cells, spec.density, spec.mass)?;
    let mut shift = [0.0; 3];
    shift[spec.axis] = 0.125 * a;
    config.translate(shift);
    let solid = solid_half_mask(&config, spec.axis);
    let liquid: Vec<bool> = solid.iter().map(|s| !s).collect();
    let dt = spec.timestep_fs;

    let solid_stage = ProtocolSpec {
        skin_angstrom: 0.5,
        stages: vec![nvt("solid", spec.solid_equilibration_ps, dt, spec.solid_temperature_k, spec.solid_temperature_k, spec.seed, true)],
    };
    let config = run_protocol_with(&solid_stage, model, config, &RunOptions { checkpoint: None, frozen: Some(liquid.clone()) })?.final_config;

    let melting = spec.melt_temperature_k > spec.liquid_temperature_k && spec.melt_ps > 0.0;
    let mut stages = Vec::new();
    if melting {
        stages.push(nvt("melt", spec.melt_ps, dt, spec.melt_temperature_k, spec.melt_temperature_k, spec.seed + 1, true));
    }
    stages.push(nvt(
        "liquid",
        spec.liquid_equilibration_ps,
        dt,
        spec.liquid_temperature_k,
        spec.liquid_temperature_k,
        spec.seed + 2,
        !melting,
    ));
    let liquid_stage = ProtocolSpec { skin_angstrom: 0.5, stages };
    let config = run_protocol_with(&liquid_stage, model, config, &RunOptions { checkpoint: None, frozen: Some(solid.clone()) })?.final_config;

    let labels = classifier.classify(&config)?;
    let n_liquid = liquid.iter().filter(|l| **l).count() as f64;
    let still_solid = labels.phases.iter().zip(&liquid).filter(|(p, l)| **l && **p == Phase::Solid).count() as f64 / n_liquid;
    if spec.liquid_temperature_k > spec.solid_temperature_k && still_solid > 0.5 {
        return Err(MeltingError::DidNotMelt { solid: 100.0 * still_solid, temperature: spec.melt_temperature_k.max(spec.liquid_temperature_k) });
    }
    let mut config = config;
    config.set_time_ps(0.0);
    Ok(config)
}

/// Calibrates the q̄6 threshold from short pure-phase runs of a 256-atom cell.
pub fn calibrate_classifier<M: PairPotential + ?Sized>(
    model: &M,
    density: f64,
    mass: f64,
    solid_temperature_k: f64,
    liquid_temperature_k: f64,
    seed: u64,
) -> Result<PhaseClassifier, MeltingError> {
    let a = fcc_lattice_constant(density, mass);
    let cutoff = 0.5 * (1.0 / 2f64.sqrt() + 1.0) * a;
    let n = ((2.0 * (model.cutoff() + 0.5) / a).floor() as usize + 1).max(4);
    let dt = 10.78;
    let sample = |stages: Vec<Stage>| -> Result<Vec<Configuration>, MeltingError> {
        let mut stages = stages;
        if let Some(last) = stages.last_mut() {
            last.sample_every_steps = Some(100);
        }
        let spec = ProtocolSpec { skin_angstrom: 0.5, stages };
        Ok(run_protocol_with(&spec, model, build_fcc(n, density, mass)?, &RunOptions::default())?.trajectory.into_frames())
    };
    let solid = sample(vec![nvt("solid", 10.78, dt, solid_temperature_k, solid_temperature_k, seed, true)])?;
    let liquid = sample(vec![
        nvt("melt", 10.78, dt, 3.0 * liquid_temperature_k, 3.0 * liquid_temperature_k, seed + 1, true),
        nvt("liquid", 10.78, dt, liquid_temperature_k, liquid_temperature_k, seed + 2, false),
    ])?;
    Ok(PhaseClassifier::calibrate(&solid, &liquid, cutoff)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile {
    pub times_ps: Vec<f64>,
    pub solid_fraction: Vec<f64>,
    /// Two interface positions along the axis per frame (NaN when not resolvable).
    pub interfaces: Vec<[f64; 2]>,
    #[serde(skip)]
    pub labels: Vec<Vec<Phase>>,
}

impl PhaseProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_ps,solid_fraction,interface_1_A,interface_2_A\n");
        for k in 0..self.times_ps.len() {
            let _ = writeln!(s, "{},{},{},{}", self.times_ps[k], self.solid_fraction[k], self.interfaces[k][0], self.interfaces[k][1]);
        }
        s
    }
}

/// Positions where the slab-wise solid fraction crosses 1/2.
fn interfaces(config: &Configuration, labels: &[Phase], axis: usize, slab: f64) -> [f64; 2] {
    let l = config.cell().lengths()[axis];
    let nb = ((l / slab).round() as usize).max(4);
    let w = l / nb as f64;
    let mut solid = vec![0.0; nb];
    let mut total = vec![0.0; nb];
    for (p, ph) in config.positions().iter().zip(labels) {
        let b = ((p[axis] / w) as usize).min(nb - 1);
        total[b] += 1.0;
        if *ph == Phase::Solid {
            solid[b] += 1.0;
        }
    }
    let f: Vec<f64> = (0..nb).map(|b| if total[b] > 0.0 { solid[b] / total[b] } else { 0.0 }).collect();
    let mut cross = Vec::new();
    for b in 0..nb {
        let (y0, y1) = (f[b] - 0.5, f[(b + 1) % nb] - 0.5);
        if (y0 < 0.0) != (y1 < 0.0) {
            let t = y0 / (y0 - y1);
            cross.push(((b as f64 + 0.5 + t) * w) % l);
        }
    }
    if cross.len() == 2 {
        cross.sort_by(f64::total_cmp);
        [cross[0], cross[1]]
    } else {
        [f64::NAN, f64::NAN]
    }
}

pub fn phase_profile(traj: &Trajectory, axis: usize, classifier: &PhaseClassifier) -> Result<PhaseProfile, MeltingError> {
    let slab = classifier.cutoff;
    let per_frame: Vec<Result<(Labels, [f64; 2]), NeighborError>> = crate::par::map_slice(traj.frames(), |f| {
        let l = classifier.classify(f)?;
        let i = interfaces(f, &l.phases, axis, slab);
        Ok((l, i))
    });
    let mut out = PhaseProfile { times_ps: Vec::new(), solid_fraction: Vec::new(), interfaces: Vec::new(), labels: Vec::new() };
    for (f, r) in traj.frames().iter().zip(per_frame) {
        let (l, i) = r?;
        out.times_ps.push(f.time_ps());
        out.solid_fraction.push(l.solid_fraction());
        out.interfaces.push(i);
        out.labels.push(l.phases);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceVelocity {
    /// Å/ps, positive when the solid grows.
    pub velocity: f64,
    pub stderr: f64,
    /// Fit window, ps.
    pub window_ps: [f64; 2],
    /// Time at which a phase vanished, if it did.
    pub survival_ps: Option<f64>,
}

/// Solid-fraction slope converted to the speed of each of the two planar interfaces.
pub fn interface_velocity_from_fraction(times_ps: &[f64], solid_fraction: &[f64], axis_length: f64) -> Result<InterfaceVelocity, MeltingError> {
    let end = solid_fraction.iter().position(|f| !(0.1..=0.9).contains(f)).unwrap_or(solid_fraction.len());
    let survival_ps = (end < solid_fraction.len()).then(|| times_ps[end] - times_ps[0]);
    if end < 3 {
        return Err(MeltingError::PhaseVanished { survival_ps: survival_ps.unwrap_or(0.0), points: end });
    }
    let (_, slope, se) = linear_fit(&times_ps[..end], &solid_fraction[..end]);
    // Solid thickness is φ·L, shared between two interfaces.
    let scale = 0.5 * axis_length;
    Ok(InterfaceVelocity { velocity: slope * scale, stderr: se * scale, window_ps: [times_ps[0], times_ps[end - 1]], survival_ps })
}

pub fn interface_velocity(traj: &Trajectory, axis: usize, classifier: &PhaseClassifier) -> Result<(InterfaceVelocity, PhaseProfile), MeltingError> {
    traj.require_fixed_cell()?;
    let profile = phase_profile(traj, axis, classifier)?;
    let v = interface_velocity_from_fraction(&profile.times_ps, &profile.solid_fraction, traj.frames()[0].cell().lengths()[axis])?;
    Ok((v, profile))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySample {
    pub temperature_k: f64,
    pub velocity: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeltingFit {
    pub samples: Vec<VelocitySample>,
    /// v = intercept + slope·T.
    pub slope: f64,
    pub intercept: f64,
    pub t_melt_k: f64,
    pub t_melt_stderr_k: f64,
    /// Root outside the sampled bracket or no sign change among the samples.
    pub extrapolated: bool,
}

/// Weighted linear fit of velocity against temperature; the root is T_melt.
pub fn melting_point(samples: &[VelocitySample]) -> Result<MeltingFit, MeltingError> {
    if samples.len() < 2 {
        return Err(MeltingError::TooFewTemperatures(samples.len()));
    }
    let known = samples.iter().all(|s| s.stderr > 0.0 && s.stderr.is_finite());
    let w: Vec<f64> = samples.iter().map(|s| if known { 1.0 / (s.stderr * s.stderr) } else { 1.0 }).collect();
    let sw: f64 = w.iter().sum();
    let sx: f64 = samples.iter().zip(&w).map(|(s, w)| w * s.temperature_k).sum();
    let sy: f64 = samples.iter().zip(&w).map(|(s, w)| w * s.velocity).sum();
    let sxx: f64 = samples.iter().zip(&w).map(|(s, w)| w * s.temperature_k * s.temperature_k).sum();
    let sxy: f64 = samples.iter().zip(&w).map(|(s, w)| w * s.temperature_k * s.velocity).sum();
    let det = sw * sxx - sx * sx;
    if det.abs() < 1e-300 {
        return Err(MeltingError::FlatResponse);
    }
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    if slope == 0.0 {
        return Err(MeltingError::FlatResponse);
    }
    // Parameter covariance; rescaled by the residual variance when errors are unknown.
    let n = samples.len() as f64;
    let s2 = if known {
        1.0
    } else if n > 2.0 {
        samples.iter().map(|s| (s.velocity - intercept - slope * s.temperature_k).powi(2)).sum::<f64>() / (n - 2.0)
    } else {
        0.0
    };
    let (var_a, var_b, cov_ab) = (s2 * sxx / det, s2 * sw / det, -s2 * sx / det);
    let t = -intercept / slope;
    let var_t = (var_a + t * t * var_b + 2.0 * t * cov_ab) / (slope * slope);
    let tmin = samples.iter().map(|s| s.temperature_k).fold(f64::INFINITY, f64::min);
    let tmax = samples.iter().map(|s| s.temperature_k).fold(f64::NEG_INFINITY, f64::max);
    let sign_change = samples.iter().any(|s| s.velocity > 0.0) && samples.iter().any(|s| s.velocity < 0.0);
    Ok(MeltingFit {
        samples: samples.to_vec(),
        slope,
        intercept,
        t_melt_k: t,
        t_melt_stderr_k: var_t.max(0.0).sqrt(),
        extrapolated: !sign_change || t < tmin || t > tmax,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoexistenceSettings {
    pub duration_ps: f64,
    pub timestep_fs: f64,
    pub sample_every_steps: u64,
    pub collision_frequency_per_ps: f64,
    pub seed: u64,
}

impl Default for CoexistenceSettings {
    fn default() -> Self {
        Self { duration_ps: 53.9, timestep_fs: 10.78, sample_every_steps: 50, collision_frequency_per_ps: 0.5, seed: 77 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeltingRun {
    pub classifier: PhaseClassifier,
    pub profiles: Vec<(f64, PhaseProfile)>,
    pub fit: MeltingFit,
}

/// NVT coexistence at each temperature (whole cell thermostatted) and the zero-velocity fit.
pub fn run_melting<M: PairPotential + ?Sized>(
    model: &M,
    spec: &BiphasicSpec,
    temperatures: &[f64],
    settings: &CoexistenceSettings,
) -> Result<MeltingRun, MeltingError> {
    let classifier = calibrate_classifier(model, spec.density, spec.mass, spec.solid_temperature_k, spec.liquid_temperature_k, spec.seed)?;
    let start = build_biphasic(spec, model, &classifier)?;
    let mut samples = Vec::new();
    let mut profiles = Vec::new();
    for (k, &t) in temperatures.iter().enumerate() {
        let mut stage = nvt("coexistence", settings.duration_ps, settings.timestep_fs, t, t, settings.seed + k as u64, true);
        stage.sample_every_steps = Some(settings.sample_every_steps);
        stage.collision_frequency_per_ps = settings.collision_frequency_per_ps;
        let spec_run = ProtocolSpec { skin_angstrom: 0.5, stages: vec![stage] };
        let traj = run_protocol_with(&spec_run, model, start.clone(), &RunOptions::default())?.trajectory;
        let (v, profile) = interface_velocity(&traj, spec.axis, &classifier)?;
        samples.push(VelocitySample { temperature_k: t, velocity: v.velocity, stderr: v.stderr });
        profiles.push((t, profile));
    }
    let fit = melting_point(&samples)?;
    Ok(MeltingRun { classifier, profiles, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_root() {
        let samples: Vec<VelocitySample> =
            DEFAULT_TEMPERATURES.iter().map(|&t| VelocitySample { temperature_k: t, velocity: -0.01 * (t - 55.2), stderr: 0.001 }).collect();
        let fit = melting_point(&samples).unwrap();
        assert!((fit.t_melt_k - 55.2).abs() < 1e-9);
        assert!(fit.t_melt_stderr_k > 0.0);
        assert!(!fit.extrapolated);
    }

    #[test]
    fn no_sign_change_flags_extrapolation() {
        let samples = [
            VelocitySample { temperature_k: 20.0, velocity: 0.5, stderr: 0.1 },
            VelocitySample { temperature_k: 40.0, velocity: 0.2, stderr: 0.1 },
        ];
        assert!(melting_point(&samples).unwrap().extrapolated);
        assert!(matches!(melting_point(&samples[..1]), Err(MeltingError::TooFewTemperatures(1))));
    }

    #[test]
    fn scripted_fraction_decay() {
        let t: Vec<f64> = (0..50).map(|k| k as f64 * 0.5).collect();
        let phi: Vec<f64> = t.iter().map(|x| 0.6 - 0.01 * x).collect();
        let v = interface_velocity_from_fraction(&t, &phi, 90.0).unwrap();
        assert!((v.velocity - (-0.01 * 45.0)).abs() < 1e-9);
        assert!(v.survival_ps.is_none());
        let gone: Vec<f64> = t.iter().map(|x| 0.15 - 0.05 * x).collect();
        assert!(matches!(interface_velocity_from_fraction(&t, &gone, 90.0), Err(MeltingError::PhaseVanished { .. })));
    }

    #[test]
    fn interfaces_of_split_crystal() {
        let c = build_fcc_cells([2, 2, 8], 0.858, crate::units::ARGON_MASS).unwrap();
        let l = c.cell().lengths()[2];
        let labels: Vec<Phase> = c.positions().iter().map(|p| if p[2] > 0.25 * l && p[2] < 0.75 * l { Phase::Solid } else { Phase::Liquid }).collect();
        let i = interfaces(&c, &labels, 2, 4.9);
        assert!((i[0] - 0.25 * l).abs() < 4.0 && (i[1] - 0.75 * l).abs() < 4.0, "{i:?}");
    }
}
