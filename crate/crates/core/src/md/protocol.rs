//! Staged simulation protocols (equilibration, ramps, production) read from TOML.

use super::engine::{MdEngine, MdError};
use super::thermostat::{assign_velocities, Barostat, BarostatSpec, NoseHooverChain};
use crate::forcefield::PairPotential;
use crate::system::{Configuration, SimulationCell, Trajectory, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("protocol parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid protocol: {0}")]
    Invalid(String),
    #[error("stage {stage} ({name}), step {step}: {source}")]
    Stage { stage: usize, name: String, step: u64, source: MdError },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },
    #[error(transparent)]
    System(#[from] crate::system::SystemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ensemble {
    #[serde(alias = "NVE")]
    Nve,
    #[serde(alias = "NVT")]
    Nvt,
    #[serde(alias = "NPT")]
    Npt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PressureKeyword {
    /// Pressure of the configuration entering the stage.
    Initial,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PressureTarget {
    /// eV/Å³.
    Fixed(f64),
    Named(PressureKeyword),
}

impl Default for PressureTarget {
    fn default() -> Self {
        PressureTarget::Named(PressureKeyword::Initial)
    }
}

fn default_timestep() -> f64 {
    10.78
}
fn default_collision() -> f64 {
    0.02
}
fn default_chain() -> usize {
    5
}
fn default_loops() -> usize {
    5
}
fn default_barostat_collision() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    #[serde(default)]
    pub name: Option<String>,
    pub ensemble: Ensemble,
    pub duration_ps: f64,
    #[serde(default = "default_timestep")]
    pub timestep_fs: f64,
    #[serde(rename = "T_start_K")]
    pub t_start_k: f64,
    #[serde(rename = "T_end_K")]
    pub t_end_k: f64,
    #[serde(default)]
    pub sample_every_steps: Option<u64>,
    pub seed: u64,
    /// Draw fresh velocities at T_start. Defaults to true for the first stage only.
    #[serde(default)]
    pub assign_velocities: Option<bool>,
    #[serde(default = "default_collision")]
    pub collision_frequency_per_ps: f64,
    #[serde(default = "default_chain")]
    pub chain_length: usize,
    #[serde(default = "default_loops")]
    pub mtk_loops: usize,
    #[serde(default = "default_barostat_collision")]
    pub barostat_collision_frequency_per_ps: f64,
    #[serde(default)]
    pub target_pressure: PressureTarget,
}

impl Stage {
    pub fn steps(&self) -> u64 {
        (self.duration_ps * 1000.0 / self.timestep_fs).round() as u64
    }

    /// Thermostat target after `k` of `n` steps (linear ramp).
    pub fn temperature_at(&self, k: u64, n: u64) -> f64 {
        self.t_start_k + (self.t_end_k - self.t_start_k) * k as f64 / n.max(1) as f64
    }

    fn label(&self, index: usize) -> String {
        self.name.clone().unwrap_or_else(|| format!("stage-{index}"))
    }

    fn frame_interval_fs(&self) -> Option<f64> {
        self.sample_every_steps.map(|e| e as f64 * self.timestep_fs)
    }
}

fn default_skin() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSpec {
    #[serde(default = "default_skin")]
    pub skin_angstrom: f64,
    #[serde(default, rename = "stage")]
    pub stages: Vec<Stage>,
}

impl ProtocolSpec {
    pub fn from_toml(text: &str) -> Result<Self, ProtocolError> {
        let spec: ProtocolSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("protocol serializes")
    }

    /// Replaces every stage seed with `base + stage index`.
    pub fn with_seed(mut self, base: u64) -> Self {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.seed = base.wrapping_add(i as u64);
        }
        self
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !(self.skin_angstrom >= 0.0) {
            return Err(ProtocolError::Invalid(format!("skin must be non-negative, got {}", self.skin_angstrom)));
        }
        let mut interval: Option<f64> = None;
        let mut sampled_block_closed = false;
        for (i, s) in self.stages.iter().enumerate() {
            let bad = |msg: String| Err(ProtocolError::Invalid(format!("{}: {msg}", s.label(i))));
            if !(s.duration_ps > 0.0 && s.duration_ps.is_finite()) {
                return bad(format!("duration must be positive, got {}", s.duration_ps));
            }
            if !(s.timestep_fs > 0.0) {
                return bad(format!("timestep must be positive, got {}", s.timestep_fs));
            }
            if s.steps() == 0 {
                return bad("duration shorter than one timestep".into());
            }
            if !(s.t_start_k >= 0.0 && s.t_end_k >= 0.0) {
                return bad("temperatures must be non-negative".into());
            }
            if s.ensemble != Ensemble::Nve && !(s.collision_frequency_per_ps > 0.0) {
                return bad("collision frequency must be positive".into());
            }
            if s.ensemble == Ensemble::Npt && !(s.barostat_collision_frequency_per_ps > 0.0) {
                return bad("barostat collision frequency must be positive".into());
            }
            match (s.sample_every_steps, s.frame_interval_fs()) {
                (Some(0), _) => return bad("sample_every_steps must be at least 1".into()),
                (Some(_), Some(f)) => {
                    if sampled_block_closed {
                        return bad("sampled stages must be consecutive so frames stay uniformly spaced".into());
                    }
                    if let Some(prev) = interval {
                        if ((prev - f) / prev).abs() > 1e-12 {
                            return bad(format!("frame interval {f} fs differs from earlier sampled stages ({prev} fs)"));
                        }
                    }
                    interval = Some(f);
                }
                _ => {
                    if interval.is_some() {
                        sampled_block_closed = true;
                    }
                }
            }
        }
        Ok(())
    }

    /// Interval between recorded frames, if any stage samples.
    pub fn frame_interval_fs(&self) -> Option<f64> {
        self.stages.iter().find_map(|s| s.frame_interval_fs())
    }

    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex::encode(&Sha256::digest(self.to_toml().as_bytes())[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub name: String,
    pub steps: u64,
    pub final_temperature_k: f64,
    pub mean_temperature_k: f64,
    pub final_density: f64,
    pub mean_pressure: f64,
    pub neighbor_rebuilds: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Sidecar file written after every completed stage; an existing one is resumed.
    pub checkpoint: Option<PathBuf>,
    /// Atoms that never move (used to prepare biphasic cells).
    pub frozen: Option<Vec<bool>>,
}

#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub trajectory: Trajectory,
    pub stages: Vec<StageSummary>,
    pub final_config: Configuration,
}

/// Runs every stage in order and returns the sampled frames (or only the
/// final state when no stage samples).
pub fn run_protocol<M: PairPotential + ?Sized>(spec: &ProtocolSpec, model: &M, initial: Configuration) -> Result<Trajectory, ProtocolError> {
    Ok(run_protocol_with(spec, model, initial, &RunOptions::default())?.trajectory)
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    positions: Vec<Vec3>,
    velocities: Vec<Vec3>,
    time_ps: f64,
    cell: Vec3,
}

impl Snapshot {
    fn of(c: &Configuration) -> Self {
        Self { positions: c.positions().to_vec(), velocities: c.velocities().to_vec(), time_ps: c.time_ps(), cell: c.cell().lengths() }
    }

    fn restore(self, template: &Configuration) -> Result<Configuration, ProtocolError> {
        let cell = SimulationCell::new(self.cell, template.cell().periodicity())?;
        Ok(Configuration::new(
            self.positions,
            self.velocities,
            template.species().to_vec(),
            template.masses().to_vec(),
            cell,
            self.time_ps,
        )?)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    protocol_hash: String,
    initial_hash: String,
    completed_stages: usize,
    sampled_steps: u64,
    state: Snapshot,
    frames: Vec<Snapshot>,
    summaries: Vec<StageSummary>,
}

fn read_checkpoint(path: &Path) -> Result<Option<Checkpoint>, ProtocolError> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| ProtocolError::Checkpoint { path: path.into(), reason: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(ProtocolError::Checkpoint { path: path.into(), reason: e.to_string() }),
    }
}

fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), ProtocolError> {
    let err = |e: String| ProtocolError::Checkpoint { path: path.into(), reason: e };
    let tmp = path.with_extension("tmp");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| err(e.to_string()))?;
    }
    std::fs::write(&tmp, serde_json::to_vec(cp).map_err(|e| err(e.to_string()))?).map_err(|e| err(e.to_string()))?;
    std::fs::rename(&tmp, path).map_err(|e| err(e.to_string()))
}

pub fn run_protocol_with<M: PairPotential + ?Sized>(
    spec: &ProtocolSpec,
    model: &M,
    initial: Configuration,
    opts: &RunOptions,
) -> Result<ProtocolRun, ProtocolError> {
    spec.validate()?;
    let protocol_hash = spec.content_hash();
    let initial_hash = initial.content_hash();
    let mut frames: Vec<Configuration> = Vec::new();
    let mut summaries = Vec::new();
    let mut state = initial.clone();
    let mut start = 0;
    let mut sampled_steps = 0;
    if let Some(path) = &opts.checkpoint {
        if let Some(cp) = read_checkpoint(path)? {
            if cp.protocol_hash != protocol_hash || cp.initial_hash != initial_hash {
                return Err(ProtocolError::Checkpoint {
                    path: path.clone(),
                    reason: "checkpoint belongs to a different protocol or initial configuration".into(),
                });
            }
            start = cp.completed_stages;
            sampled_steps = cp.sampled_steps;
            state = cp.state.restore(&initial)?;
            for f in cp.frames {
                frames.push(f.restore(&initial)?);
            }
            summaries = cp.summaries;
        }
    }

    let mut on_stage = |done: usize, sampled: u64, cfg: &Configuration, frames: &[Configuration], sums: &[StageSummary]| -> Result<(), ProtocolError> {
        if let Some(path) = &opts.checkpoint {
            let cp = Checkpoint {
                protocol_hash: protocol_hash.clone(),
                initial_hash: initial_hash.clone(),
                completed_stages: done,
                sampled_steps: sampled,
                state: Snapshot::of(cfg),
                frames: frames.iter().map(Snapshot::of).collect(),
                summaries: sums.to_vec(),
            };
            write_checkpoint(path, &cp)?;
        }
        Ok(())
    };

    let final_config = execute(spec, model, state, start, sampled_steps, opts.frozen.clone(), &mut frames, &mut summaries, &mut on_stage)?;
    let trajectory = if frames.is_empty() {
        let dt = spec.stages.last().map(|s| s.timestep_fs).unwrap_or(1.0);
        Trajectory::single(final_config.clone(), dt)
    } else {
        Trajectory::new(frames, spec.frame_interval_fs().expect("sampling stage present"))?
    };
    Ok(ProtocolRun { trajectory, stages: summaries, final_config })
}

/// Streams sampled frames to `sink` instead of collecting them; returns the final state.
pub fn run_protocol_streaming<M: PairPotential + ?Sized>(
    spec: &ProtocolSpec,
    model: &M,
    initial: Configuration,
    frozen: Option<Vec<bool>>,
    sink: &mut dyn FnMut(&Configuration),
) -> Result<(Configuration, Vec<StageSummary>), ProtocolError> {
    spec.validate()?;
    let mut summaries = Vec::new();
    let mut sink_vec = StreamSink { sink };
    let cfg = execute(spec, model, initial, 0, 0, frozen, &mut sink_vec, &mut summaries, &mut |_, _, _, _, _| Ok(()))?;
    Ok((cfg, summaries))
}

trait FrameSink {
    fn push(&mut self, c: &Configuration);
    fn frames(&self) -> &[Configuration];
}

impl FrameSink for Vec<Configuration> {
    fn push(&mut self, c: &Configuration) {
        Vec::push(self, c.clone());
    }
    fn frames(&self) -> &[Configuration] {
        self
    }
}

struct StreamSink<'a> {
    sink: &'a mut dyn FnMut(&Configuration),
}

impl FrameSink for StreamSink<'_> {
    fn push(&mut self, c: &Configuration) {
        (self.sink)(c)
    }
    fn frames(&self) -> &[Configuration] {
        &[]
    }
}

#[allow(clippy::too_many_arguments)]
fn execute<M: PairPotential + ?Sized, S: FrameSink + ?Sized>(
    spec: &ProtocolSpec,
    model: &M,
    state: Configuration,
    start: usize,
    mut sampled_steps: u64,
    frozen: Option<Vec<bool>>,
    sink: &mut S,
    summaries: &mut Vec<StageSummary>,
    on_stage: &mut dyn FnMut(usize, u64, &Configuration, &[Configuration], &[StageSummary]) -> Result<(), ProtocolError>,
) -> Result<Configuration, ProtocolError> {
    if start >= spec.stages.len() {
        return Ok(state);
    }
    let stage_err = |i: usize, step: u64, source: MdError| ProtocolError::Stage {
        stage: i,
        name: spec.stages[i].label(i),
        step,
        source,
    };
    let mut engine = MdEngine::new(model, state, spec.skin_angstrom).map_err(|e| stage_err(start, 0, e))?;
    engine.set_frozen(frozen.clone()).map_err(|e| stage_err(start, 0, e))?;

    for (i, stage) in spec.stages.iter().enumerate().skip(start) {
        let n = stage.steps();
        let assign = stage.assign_velocities.unwrap_or(i == 0);
        if assign {
            let mut rng = ChaCha8Rng::seed_from_u64(stage.seed);
            let mut cfg = engine.config().clone();
            assign_velocities(&mut cfg, stage.t_start_k, frozen.as_deref(), &mut rng);
            engine.reset_config(cfg).map_err(|e| stage_err(i, 0, e))?;
        }
        let mut chain = NoseHooverChain::new(stage.chain_length, stage.collision_frequency_per_ps, stage.mtk_loops, stage.t_start_k.max(1e-6))
            .map_err(|e| stage_err(i, 0, e.into()))?;
        let mut baro = if stage.ensemble == Ensemble::Npt {
            let p = match stage.target_pressure {
                PressureTarget::Fixed(p) => p,
                PressureTarget::Named(PressureKeyword::Zero) => 0.0,
                PressureTarget::Named(PressureKeyword::Initial) => engine.pressure(),
            };
            let spec = BarostatSpec::new(stage.barostat_collision_frequency_per_ps, p).map_err(|e| stage_err(i, 0, e.into()))?;
            Some(Barostat::new(spec, &chain).map_err(|e| stage_err(i, 0, e.into()))?)
        } else {
            None
        };

        let t0 = engine.config().time_ps();
        let rebuilds0 = engine.neighbor_rebuilds();
        let mut t_sum = 0.0;
        let mut p_sum = 0.0;
        for k in 1..=n {
            let target = stage.temperature_at(k, n).max(1e-6);
            chain.set_target_temperature(target).map_err(|e| stage_err(i, k, e.into()))?;
            let res = match (stage.ensemble, baro.as_mut()) {
                (Ensemble::Nve, _) => engine.step_nve(stage.timestep_fs),
                (Ensemble::Nvt, _) => engine.step_nvt(stage.timestep_fs, &mut chain),
                (Ensemble::Npt, Some(b)) => {
                    b.chain.set_target_temperature(target).map_err(|e| stage_err(i, k, e.into()))?;
                    engine.step_npt(stage.timestep_fs, &mut chain, b)
                }
                (Ensemble::Npt, None) => unreachable!(),
            };
            res.map_err(|e| stage_err(i, k, e))?;
            // Exact times avoid accumulating rounding across long stages.
            engine.config_mut().set_time_ps(t0 + k as f64 * stage.timestep_fs * 1e-3);
            t_sum += engine.temperature();
            p_sum += engine.pressure();
            if let Some(every) = stage.sample_every_steps {
                // Counted across consecutive sampled stages so spacing stays uniform.
                sampled_steps += 1;
                if sampled_steps % every == 0 {
                    sink.push(engine.config());
                }
            }
        }
        summaries.push(StageSummary {
            name: stage.label(i),
            steps: n,
            final_temperature_k: engine.temperature(),
            mean_temperature_k: t_sum / n as f64,
            final_density: engine.config().mass_density(),
            mean_pressure: p_sum / n as f64,
            neighbor_rebuilds: engine.neighbor_rebuilds() - rebuilds0,
        });
        on_stage(i + 1, sampled_steps, engine.config(), sink.frames(), summaries)?;
    }
    Ok(engine.into_config())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcefield::LennardJonesModel;
    use crate::solid::build_fcc;
    use crate::units::ARGON_MASS;

    const QUICK: &str = r#"
skin_angstrom = 0.5

[[stage]]
name = "heat"
ensemble = "nvt"
duration_ps = 2.156
timestep_fs = 10.78
T_start_K = 10.0
T_end_K = 50.0
seed = 7

[[stage]]
ensemble = "NVT"
duration_ps = 1.078
T_start_K = 50.0
T_end_K = 50.0
sample_every_steps = 10
seed = 8
"#;

    #[test]
    fn parses_and_counts_frames() {
        let spec = ProtocolSpec::from_toml(QUICK).unwrap();
        assert_eq!(spec.stages[0].steps(), 200);
        assert_eq!(spec.stages[1].timestep_fs, 10.78);
        assert_eq!(spec.stages[1].collision_frequency_per_ps, 0.02);
        let m = LennardJonesModel::argon();
        let traj = run_protocol(&spec, &m, build_fcc(4, 0.858, ARGON_MASS).unwrap()).unwrap();
        assert_eq!(traj.len(), 10);
        assert!((traj.frame_interval_fs() - 107.8).abs() < 1e-12);
        assert!((traj.frames()[0].time_ps() - (2.156 + 0.1078)).abs() < 1e-12);
    }

    #[test]
    fn ramp_sampling_arithmetic() {
        let stage = Stage {
            name: None,
            ensemble: Ensemble::Nvt,
            duration_ps: 2156.0,
            timestep_fs: 10.78,
            t_start_k: 10.0,
            t_end_k: 105.0,
            sample_every_steps: Some(100),
            seed: 1,
            assign_velocities: None,
            collision_frequency_per_ps: 0.02,
            chain_length: 5,
            mtk_loops: 5,
            barostat_collision_frequency_per_ps: 0.2,
            target_pressure: PressureTarget::default(),
        };
        assert_eq!(stage.steps() / 100, 2000);
        assert_eq!(stage.temperature_at(stage.steps(), stage.steps()), 105.0);
    }

    #[test]
    fn empty_protocol_returns_initial() {
        let spec = ProtocolSpec::from_toml("").unwrap();
        let init = build_fcc(4, 0.858, ARGON_MASS).unwrap();
        let traj = run_protocol(&spec, &LennardJonesModel::argon(), init.clone()).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.frames()[0], init);
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let spec = ProtocolSpec::from_toml(QUICK).unwrap();
        let m = LennardJonesModel::argon();
        let a = crate::par::with_threads(1, || run_protocol(&spec, &m, build_fcc(4, 0.858, ARGON_MASS).unwrap()).unwrap());
        let b = crate::par::with_threads(1, || run_protocol(&spec, &m, build_fcc(4, 0.858, ARGON_MASS).unwrap()).unwrap());
        assert_eq!(a, b);
        let c = run_protocol(&spec.clone().with_seed(99), &m, build_fcc(4, 0.858, ARGON_MASS).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn validation_errors() {
        let bad = QUICK.replace("duration_ps = 2.156", "duration_ps = -1.0");
        assert!(ProtocolSpec::from_toml(&bad).unwrap_err().to_string().contains("duration"));
        let bad = QUICK.replace("T_start_K = 10.0", "T_start = 10.0");
        assert!(matches!(ProtocolSpec::from_toml(&bad), Err(ProtocolError::Parse(_))));
        let mixed = format!("{QUICK}\n[[stage]]\nensemble = \"nvt\"\nduration_ps = 1.0\nT_start_K = 1.0\nT_end_K = 1.0\nsample_every_steps = 3\nseed = 1\n");
        assert!(ProtocolSpec::from_toml(&mixed).unwrap_err().to_string().contains("frame interval"));
    }

    #[test]
    fn checkpoint_resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt.json");
        let spec = ProtocolSpec::from_toml(QUICK).unwrap();
        let m = LennardJonesModel::argon();
        let init = build_fcc(4, 0.858, ARGON_MASS).unwrap();
        let full = crate::par::with_threads(1, || run_protocol(&spec, &m, init.clone()).unwrap());
        // Run only the first stage, then resume with the full protocol.
        let first = ProtocolSpec { skin_angstrom: spec.skin_angstrom, stages: spec.stages[..1].to_vec() };
        let opts = RunOptions { checkpoint: Some(path.clone()), frozen: None };
        crate::par::with_threads(1, || run_protocol_with(&first, &m, init.clone(), &opts).unwrap());
        let mut cp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        cp["protocol_hash"] = serde_json::Value::String(spec.content_hash());
        std::fs::write(&path, serde_json::to_string(&cp).unwrap()).unwrap();
        let resumed = crate::par::with_threads(1, || run_protocol_with(&spec, &m, init.clone(), &opts).unwrap());
        assert_eq!(resumed.trajectory, full);
        assert_eq!(resumed.stages.len(), 2);
    }

    #[test]
    fn stage_errors_carry_context() {
        let spec = ProtocolSpec::from_toml(QUICK).unwrap();
        let cell = crate::system::SimulationCell::cubic(12.0).unwrap();
        let tiny = Configuration::at_rest(vec![[1.0; 3], [5.0; 3]], ARGON_MASS, cell).unwrap();
        let err = run_protocol(&spec, &LennardJonesModel::argon(), tiny).unwrap_err();
        assert!(err.to_string().contains("stage 0 (heat)"), "{err}");
    }
}
