//! Standard runs and analysis recipes shared by the command line and the
//! acceptance suite.

use crate::dynamics::{fit_diffusivity, msd, unwrap, DiffusivityFit, DynamicsError, MsdCurve};
use crate::forcefield::{evaluate_fresh, fit_surrogate_with, FitError, FitOptions, FitReport, ForceDataset, ForceError, ForceErrorStats, PairPotential, SplinePairModel, StatsError};
use crate::md::{assign_velocities, run_protocol_with, Ensemble, PressureTarget, ProtocolError, ProtocolSpec, RunOptions, Stage};
use crate::solid::{build_fcc, numeric_hessian, pdos_with_range, symmetricity, symmetrize, HessianError, MatrixNorm, PdosError, PdosHistogram, SymmetricityScore};
use crate::structure::{FormFactorTable, GaussianFormFactor};
use crate::system::{Configuration, SystemError, Trajectory};
use crate::xpcs::{
    beta_delta, beta_zero, compute_speckles, correlation_time, default_bins, fit_decay, g2, ContrastCurve, CorrelationTime, DecayFit, DecayFitOptions, DetectorSlice, G2Curve,
    QBin, SpeckleSeries, XpcsError, DEFAULT_BIN_HALF_WIDTH, DEFAULT_K_IN, DEFAULT_Q_COVERAGE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Xpcs(#[from] XpcsError),
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Hessian(#[from] HessianError),
    #[error(transparent)]
    Pdos(#[from] PdosError),
    #[error("{0}")]
    Invalid(String),
}

fn nvt(name: &str, ps: f64, dt: f64, t: f64, freq: f64, seed: u64, assign: bool, sample: Option<u64>) -> Stage {
    Stage {
        name: Some(name.into()),
        ensemble: Ensemble::Nvt,
        duration_ps: ps,
        timestep_fs: dt,
        t_start_k: t,
        t_end_k: t,
        sample_every_steps: sample,
        seed,
        assign_velocities: Some(assign),
        collision_frequency_per_ps: freq,
        chain_length: 5,
        mtk_loops: 5,
        barostat_collision_frequency_per_ps: 0.2,
        target_pressure: PressureTarget::default(),
    }
}

/// FCC start, a hot NVT stage to melt it, NVT equilibration at T, then an NVT
/// production run sampled at a fixed interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiquidRun {
    /// Conventional FCC cells per edge (4n³ atoms).
    pub cells: usize,
    pub density: f64,
    pub mass: f64,
    pub temperature_k: f64,
    pub melt_temperature_k: f64,
    pub melt_ps: f64,
    pub equilibration_ps: f64,
    /// Thermostat collision frequency for melting and equilibration, 1/ps.
    pub equilibration_collision_per_ps: f64,
    pub production_ps: f64,
    /// Production thermostat, 1/ps.
    pub production_collision_per_ps: f64,
    pub timestep_fs: f64,
    pub sample_every_steps: u64,
    pub seed: u64,
}

impl Default for LiquidRun {
    /// 864 atoms at 100 K, 539 ps production sampled every 107.8 fs.
    fn default() -> Self {
        Self {
            cells: 6,
            density: 0.858,
            mass: crate::units::ARGON_MASS,
            temperature_k: 100.0,
            melt_temperature_k: 300.0,
            melt_ps: 10.78,
            equilibration_ps: 53.9,
            equilibration_collision_per_ps: 1.0,
            production_ps: 539.0,
            production_collision_per_ps: 0.02,
            timestep_fs: 10.78,
            sample_every_steps: 10,
            seed: 2024,
        }
    }
}

impl LiquidRun {
    pub fn protocol(&self) -> ProtocolSpec {
        let dt = self.timestep_fs;
        let mut stages = Vec::new();
        if self.melt_ps > 0.0 {
            stages.push(nvt("melt", self.melt_ps, dt, self.melt_temperature_k, self.equilibration_collision_per_ps, self.seed, true, None));
        }
        if self.equilibration_ps > 0.0 {
            stages.push(nvt("equilibrate", self.equilibration_ps, dt, self.temperature_k, self.equilibration_collision_per_ps, self.seed + 1, stages.is_empty(), None));
        }
        stages.push(nvt(
            "production",
            self.production_ps,
            dt,
            self.temperature_k,
            self.production_collision_per_ps,
            self.seed + 2,
            stages.is_empty(),
            Some(self.sample_every_steps),
        ));
        ProtocolSpec { skin_angstrom: 0.5, stages }
    }

    pub fn initial(&self) -> Result<Configuration, SystemError> {
        build_fcc(self.cells, self.density, self.mass)
    }

    pub fn run<M: PairPotential + ?Sized>(&self, model: &M, checkpoint: Option<PathBuf>) -> Result<Trajectory, WorkflowError> {
        let opts = RunOptions { checkpoint, frozen: None };
        Ok(run_protocol_with(&self.protocol(), model, self.initial()?, &opts)?.trajectory)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diffusion {
    pub msd: MsdCurve,
    pub fit: DiffusivityFit,
}

/// MSD over lags up to half the span, fitted from 1 ps (or 10% of the lag range) to the end.
pub fn diffusion(traj: &Trajectory) -> Result<Diffusion, WorkflowError> {
    let u = unwrap(traj)?;
    let max_lag = 0.5 * traj.span_ps();
    let curve = msd(&u, max_lag)?;
    let end = *curve.lags_ps.last().unwrap_or(&0.0);
    let fit = fit_diffusivity(&curve, [(0.1 * end).max(crate::dynamics::MIN_FIT_START_PS), end])?;
    Ok(Diffusion { msd: curve, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XpcsSettings {
    /// Detector pixels per side.
    pub pixels: usize,
    pub k_in: f64,
    pub q_coverage: f64,
    pub bins: Vec<QBin>,
    /// g2 lag range, ps.
    pub max_lag_ps: f64,
    /// Largest pulse width for β_Δ, ps.
    pub max_width_ps: f64,
    pub decay: DecayFitOptions,
    /// Bin used for the correlation time.
    pub contrast_bin: QBin,
    pub species: Vec<String>,
}

impl Default for XpcsSettings {
    fn default() -> Self {
        Self {
            pixels: 81,
            k_in: DEFAULT_K_IN,
            q_coverage: DEFAULT_Q_COVERAGE,
            bins: default_bins(),
            max_lag_ps: 3.5574,
            max_width_ps: 8.0,
            decay: DecayFitOptions::default(),
            contrast_bin: QBin::new(1.844, DEFAULT_BIN_HALF_WIDTH),
            species: vec!["Ar".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAnalysis {
    pub bin: QBin,
    pub pixels: usize,
    pub g2: G2Curve,
    /// None when the decay could not be fitted (too few points above the noise floor).
    pub decay: Option<DecayFit>,
    pub beta_zero: f64,
    pub contrast: ContrastCurve,
    pub correlation_time: Option<CorrelationTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XpcsAnalysis {
    pub bins: Vec<BinAnalysis>,
    /// Bins with fewer than two pixels.
    pub skipped: Vec<QBin>,
}

impl XpcsAnalysis {
    pub fn bin(&self, center: f64) -> Option<&BinAnalysis> {
        self.bins.iter().find(|b| (b.bin.center - center).abs() < 1e-9)
    }
}

pub fn speckles(traj: &Trajectory, settings: &XpcsSettings) -> Result<SpeckleSeries, WorkflowError> {
    let cell = traj.frames()[0].cell();
    let mut bins = settings.bins.clone();
    bins.push(settings.contrast_bin);
    let slice = DetectorSlice::new(cell, settings.pixels, settings.pixels, settings.k_in, settings.q_coverage)?.restricted_to(&bins);
    let table = FormFactorTable::builtin();
    let names: Vec<&str> = settings.species.iter().map(String::as_str).collect();
    let factors: Vec<GaussianFormFactor> = table.for_species(&names).map_err(|e| WorkflowError::Invalid(e.to_string()))?;
    Ok(compute_speckles(traj, &slice, &factors)?)
}

pub fn xpcs_analysis(series: &SpeckleSeries, settings: &XpcsSettings) -> Result<XpcsAnalysis, WorkflowError> {
    let dt = series.frame_interval_ps();
    let max_w = ((settings.max_width_ps / dt).floor() as usize).clamp(1, series.frames() / 2);
    let widths: Vec<f64> = (1..=max_w).map(|k| k as f64 * dt).collect();
    let mut bins = settings.bins.clone();
    if !bins.iter().any(|b| (b.center - settings.contrast_bin.center).abs() < 1e-9) {
        bins.push(settings.contrast_bin);
    }
    let mut out = XpcsAnalysis { bins: Vec::new(), skipped: Vec::new() };
    for bin in bins {
        let pixels = match series.pixels_in(bin) {
            Ok(p) => p.len(),
            Err(XpcsError::EmptyBin { .. }) => {
                out.skipped.push(bin);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let curve = g2(series, bin, settings.max_lag_ps.min(series.span_ps()))?;
        let decay = fit_decay(&curve, settings.decay).ok();
        let contrast = beta_delta(series, bin, &widths)?;
        out.bins.push(BinAnalysis {
            bin,
            pixels,
            decay,
            beta_zero: beta_zero(series, bin)?,
            correlation_time: correlation_time(&contrast).ok(),
            contrast,
            g2: curve,
        });
    }
    Ok(out)
}

/// Forces of `candidate` against `reference` on the given frames.
pub fn force_comparison<R: PairPotential + ?Sized, C: PairPotential + ?Sized>(
    reference: &R,
    candidate: &C,
    frames: &[Configuration],
) -> Result<ForceErrorStats, WorkflowError> {
    let mut p = Vec::with_capacity(frames.len());
    let mut r = Vec::with_capacity(frames.len());
    for f in frames {
        r.push(evaluate_fresh(reference, f)?.forces);
        p.push(evaluate_fresh(candidate, f)?.forces);
    }
    Ok(crate::forcefield::force_error_stats(&p, &r)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phonons {
    pub symmetricity: SymmetricityScore,
    pub pdos: PdosHistogram,
    pub dimension: usize,
}

/// Numeric Hessian of a perfect FCC crystal, its symmetricity and PDOS.
pub fn phonons<M: PairPotential + ?Sized>(
    model: &M,
    cells: usize,
    density: f64,
    mass: f64,
    displacement: f64,
    bins: usize,
    nu_max_thz: Option<f64>,
) -> Result<Phonons, WorkflowError> {
    let c = build_fcc(cells, density, mass)?;
    let h = numeric_hessian(&c, model, displacement)?;
    let score = symmetricity(&h, MatrixNorm::Spectral)?;
    let dimension = h.dim();
    let s = symmetrize(&h);
    drop(h);
    let pdos = pdos_with_range(&s, mass, bins, nu_max_thz)?;
    Ok(Phonons { symmetricity: score, pdos, dimension })
}

/// Thermalized copies of an FCC crystal: every atom displaced by a Gaussian
/// of the harmonic amplitude at `temperature_k`, no dynamics.
pub fn solid_snapshots(cells: usize, density: f64, mass: f64, temperature_k: f64, count: usize, seed: u64) -> Result<Vec<Configuration>, WorkflowError> {
    use rand_distr::{Distribution, Normal};
    let base = build_fcc(cells, density, mass)?;
    // Einstein estimate for LJ argon near 0.858 amu/Å³: ~1.2 THz.
    let omega = 2.0 * std::f64::consts::PI * 1.2e-3;
    let sigma = (crate::units::BOLTZMANN * temperature_k / (mass * crate::units::MVV_TO_EV * omega * omega)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| WorkflowError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut c = base.clone();
        let pos = c.positions().iter().map(|p| [p[0] + normal.sample(&mut rng), p[1] + normal.sample(&mut rng), p[2] + normal.sample(&mut rng)]).collect();
        c.set_positions(pos)?;
        assign_velocities(&mut c, temperature_k, None, &mut rng);
        out.push(c);
    }
    Ok(out)
}

/// Surrogate fitted on a dataset labeled by `reference`, with the window set by
/// the observed pair distances.
pub fn fit_on<M: PairPotential + ?Sized>(
    reference: &M,
    configs: Vec<Configuration>,
    knots: usize,
    lambda: f64,
) -> Result<(SplinePairModel, FitReport), WorkflowError> {
    let ds = ForceDataset::label(reference, configs)?;
    let cutoff = reference.cutoff();
    let (lo, _) = ds.pair_distance_range(cutoff).ok_or_else(|| WorkflowError::Invalid("dataset has no pairs inside the cutoff".into()))?;
    let mut opts = FitOptions::new(knots, [lo, cutoff], lambda);
    opts.cutoff = Some(cutoff);
    Ok(fit_surrogate_with(&ds, &opts)?)
}
