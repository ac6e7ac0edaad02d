//! Shared domain types: periodic cells, configurations and trajectories.

use std::sync::Arc;

use crate::units::{BOLTZMANN, MVV_TO_EV};

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm2(a: Vec3) -> f64 {
    dot(a, a)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SystemError {
    #[error("cell edge lengths must be finite and positive, got {0:?}")]
    InvalidCell(Vec3),
    #[error("configuration needs at least one atom")]
    Empty,
    #[error("array `{field}` has {got} entries, expected {expected}")]
    LengthMismatch { field: &'static str, got: usize, expected: usize },
    #[error("atom {index} has non-positive mass {mass}")]
    NonPositiveMass { index: usize, mass: f64 },
    #[error("atom {index} has a non-finite {field}")]
    NonFinite { index: usize, field: &'static str },
    #[error("trajectory has no frames")]
    EmptyTrajectory,
    #[error("frame {frame} has {got} atoms, first frame has {expected}")]
    AtomCountChanged { frame: usize, got: usize, expected: usize },
    #[error("frame {frame} time {time_ps} ps breaks the uniform {interval_fs} fs spacing")]
    NonUniformTimes { frame: usize, time_ps: f64, interval_fs: f64 },
    #[error("frame interval must be positive, got {0} fs")]
    BadInterval(f64),
    #[error("cell volume changes at frame {frame} ({volume} vs {expected} Å³); analysis requires a fixed cell")]
    VolumeChanged { frame: usize, volume: f64, expected: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error("temperature needs at least 2 atoms, got {0}")]
    TooFewAtoms(usize),
}

/// Orthorhombic simulation cell with per-axis periodicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationCell {
    lengths: Vec3,
    periodic: [bool; 3],
}

impl SimulationCell {
    pub fn new(lengths: Vec3, periodic: [bool; 3]) -> Result<Self, SystemError> {
        if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(SystemError::InvalidCell(lengths));
        }
        Ok(Self { lengths, periodic })
    }

    pub fn periodic(lengths: Vec3) -> Result<Self, SystemError> {
        Self::new(lengths, [true; 3])
    }

    pub fn cubic(edge: f64) -> Result<Self, SystemError> {
        Self::periodic([edge; 3])
    }

    pub fn lengths(&self) -> Vec3 {
        self.lengths
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.periodic[axis]
    }

    pub fn periodicity(&self) -> [bool; 3] {
        self.periodic
    }

    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    /// Smallest edge among the periodic axes (infinite when nothing is periodic).
    pub fn min_periodic_edge(&self) -> f64 {
        (0..3)
            .filter(|&a| self.periodic[a])
            .map(|a| self.lengths[a])
            .fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn scaled(&self, factor: f64) -> Self {
        Self { lengths: scale(self.lengths, factor), periodic: self.periodic }
    }

    /// Maps a displacement into [-L/2, L/2) on periodic axes.
    pub fn minimum_image(&self, d: Vec3) -> Vec3 {
        let mut out = d;
        for a in 0..3 {
            if self.periodic[a] {
                out[a] = image_component(d[a], self.lengths[a]);
            }
        }
        out
    }

    /// Wraps a position into [0, L) on periodic axes.
    pub fn wrap(&self, p: Vec3) -> Vec3 {
        let mut out = p;
        for a in 0..3 {
            if self.periodic[a] {
                let l = self.lengths[a];
                let mut x = p[a] - l * (p[a] / l).floor();
                if x >= l {
                    x -= l;
                }
                if x < 0.0 {
                    x += l;
                }
                out[a] = x;
            }
        }
        out
    }
}

#[inline]
fn image_component(d: f64, l: f64) -> f64 {
    let k = (d / l + 0.5).floor();
    let mut r = d - k * l;
    let half = 0.5 * l;
    if r >= half {
        r -= l;
    } else if r < -half {
        r += l;
    }
    r
}

/// Free function form of [`SimulationCell::minimum_image`].
pub fn minimum_image(displacement: Vec3, cell: &SimulationCell) -> Vec3 {
    cell.minimum_image(displacement)
}

/// One snapshot of the system. Positions are kept wrapped into the cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub(crate) positions: Vec<Vec3>,
    pub(crate) velocities: Vec<Vec3>,
    pub(crate) species: Arc<[u32]>,
    pub(crate) masses: Arc<[f64]>,
    pub(crate) cell: SimulationCell,
    pub(crate) time_ps: f64,
}

impl Configuration {
    pub fn new(
        positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
        species: Vec<u32>,
        masses: Vec<f64>,
        cell: SimulationCell,
        time_ps: f64,
    ) -> Result<Self, SystemError> {
        let n = positions.len();
        if n == 0 {
            return Err(SystemError::Empty);
        }
        for (field, got) in [("velocities", velocities.len()), ("species", species.len()), ("masses", masses.len())] {
            if got != n {
                return Err(SystemError::LengthMismatch { field, got, expected: n });
            }
        }
        for (i, &m) in masses.iter().enumerate() {
            if !(m > 0.0 && m.is_finite()) {
                return Err(SystemError::NonPositiveMass { index: i, mass: m });
            }
        }
        for i in 0..n {
            if positions[i].iter().any(|x| !x.is_finite()) {
                return Err(SystemError::NonFinite { index: i, field: "position" });
            }
            if velocities[i].iter().any(|x| !x.is_finite()) {
                return Err(SystemError::NonFinite { index: i, field: "velocity" });
            }
        }
        let positions = positions.into_iter().map(|p| cell.wrap(p)).collect();
        Ok(Self { positions, velocities, species: species.into(), masses: masses.into(), cell, time_ps })
    }

    /// Single-species configuration at rest.
    pub fn at_rest(positions: Vec<Vec3>, mass: f64, cell: SimulationCell) -> Result<Self, SystemError> {
        let n = positions.len();
        Self::new(positions, vec![[0.0; 3]; n], vec![0; n], vec![mass; n], cell, 0.0)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    pub fn species(&self) -> &[u32] {
        &self.species
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn cell(&self) -> &SimulationCell {
        &self.cell
    }

    pub fn time_ps(&self) -> f64 {
        self.time_ps
    }

    pub fn set_time_ps(&mut self, t: f64) {
        self.time_ps = t;
    }

    /// Replaces positions; they are rewrapped into the cell.
    pub fn set_positions(&mut self, positions: Vec<Vec3>) -> Result<(), SystemError> {
        if positions.len() != self.len() {
            return Err(SystemError::LengthMismatch { field: "positions", got: positions.len(), expected: self.len() });
        }
        self.positions = positions.into_iter().map(|p| self.cell.wrap(p)).collect();
        Ok(())
    }

    pub fn set_position(&mut self, index: usize, p: Vec3) {
        self.positions[index] = self.cell.wrap(p);
    }

    pub fn set_velocities(&mut self, velocities: Vec<Vec3>) -> Result<(), SystemError> {
        if velocities.len() != self.len() {
            return Err(SystemError::LengthMismatch { field: "velocities", got: velocities.len(), expected: self.len() });
        }
        self.velocities = velocities;
        Ok(())
    }

    pub fn velocities_mut(&mut self) -> &mut [Vec3] {
        &mut self.velocities
    }

    /// Rigid translation of every atom, rewrapped.
    pub fn translate(&mut self, shift: Vec3) {
        for p in self.positions.iter_mut() {
            *p = self.cell.wrap(add(*p, shift));
        }
    }

    /// Applies a permutation: new atom k is old atom `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let pick = |v: &[Vec3]| order.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            positions: pick(&self.positions),
            velocities: pick(&self.velocities),
            species: order.iter().map(|&i| self.species[i]).collect::<Vec<_>>().into(),
            masses: order.iter().map(|&i| self.masses[i]).collect::<Vec<_>>().into(),
            cell: self.cell,
            time_ps: self.time_ps,
        }
    }

    /// Kinetic energy in eV.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * MVV_TO_EV
            * self.velocities.iter().zip(self.masses.iter()).map(|(v, m)| m * norm2(*v)).sum::<f64>()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Total momentum in amu·Å/fs.
    pub fn momentum(&self) -> Vec3 {
        self.velocities.iter().zip(self.masses.iter()).fold([0.0; 3], |acc, (v, m)| add(acc, scale(*v, *m)))
    }

    /// Mass density in amu/Å³.
    pub fn mass_density(&self) -> f64 {
        self.total_mass() / self.cell.volume()
    }

    /// Stable hash of the geometry, used for provenance fields.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for l in self.cell.lengths {
            h.update(l.to_le_bytes());
        }
        for (p, s) in self.positions.iter().zip(self.species.iter()) {
            for x in p {
                h.update(x.to_le_bytes());
            }
            h.update(s.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Kinetic temperature with the center-of-mass motion removed:
/// T = 2 KE / ((3N - 3) k_B).
pub fn instantaneous_temperature(config: &Configuration) -> Result<f64, SystemError> {
    let n = config.len();
    if n < 2 {
        return Err(SystemError::TooFewAtoms(n));
    }
    let p = config.momentum();
    let vcom = scale(p, 1.0 / config.total_mass());
    let twice_ke = MVV_TO_EV
        * config
            .velocities
            .iter()
            .zip(config.masses.iter())
            .map(|(v, m)| m * norm2(sub(*v, vcom)))
            .sum::<f64>();
    Ok(twice_ke / ((3 * n - 3) as f64 * BOLTZMANN))
}

/// Ordered, uniformly spaced frames with a constant atom count.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    frames: Vec<Configuration>,
    frame_interval_fs: f64,
}

impl Trajectory {
    pub fn new(frames: Vec<Configuration>, frame_interval_fs: f64) -> Result<Self, SystemError> {
        if frames.is_empty() {
            return Err(SystemError::EmptyTrajectory);
        }
        if !(frame_interval_fs > 0.0 && frame_interval_fs.is_finite()) {
            return Err(SystemError::BadInterval(frame_interval_fs));
        }
        let n = frames[0].len();
        let t0 = frames[0].time_ps;
        let dt_ps = frame_interval_fs * 1e-3;
        for (k, f) in frames.iter().enumerate() {
            if f.len() != n {
                return Err(SystemError::AtomCountChanged { frame: k, got: f.len(), expected: n });
            }
            let expected = t0 + k as f64 * dt_ps;
            if (f.time_ps - expected).abs() > 1e-9 * dt_ps * (k.max(1) as f64) {
                return Err(SystemError::NonUniformTimes { frame: k, time_ps: f.time_ps, interval_fs: frame_interval_fs });
            }
        }
        Ok(Self { frames, frame_interval_fs })
    }

    /// Trajectory holding a single configuration.
    pub fn single(frame: Configuration, frame_interval_fs: f64) -> Self {
        Self { frames: vec![frame], frame_interval_fs }
    }

    pub fn frames(&self) -> &[Configuration] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Configuration> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn atom_count(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frame_interval_fs(&self) -> f64 {
        self.frame_interval_fs
    }

    pub fn frame_interval_ps(&self) -> f64 {
        self.frame_interval_fs * 1e-3
    }

    /// Time covered from first to last frame, in ps.
    pub fn span_ps(&self) -> f64 {
        (self.frames.len() - 1) as f64 * self.frame_interval_ps()
    }

    /// Checks the fixed-volume contract required by the NVT analyses.
    pub fn require_fixed_cell(&self) -> Result<(), SystemError> {
        let v0 = self.frames[0].cell.volume();
        for (k, f) in self.frames.iter().enumerate() {
            let v = f.cell.volume();
            if (v - v0).abs() > 1e-9 * v0 {
                return Err(SystemError::VolumeChanged { frame: k, volume: v, expected: v0 });
            }
        }
        Ok(())
    }

    /// Every `stride`-th frame, starting at `start`.
    pub fn subsample(&self, start: usize, stride: usize) -> Result<Self, SystemError> {
        let stride = stride.max(1);
        let frames: Vec<_> = self.frames.iter().skip(start).step_by(stride).cloned().collect();
        Self::new(frames, self.frame_interval_fs * stride as f64)
    }
}
