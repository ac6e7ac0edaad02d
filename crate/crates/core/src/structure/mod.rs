//! Static structure: pair distribution function and structure factors.

mod form_factor;

pub use form_factor::{FormFactorError, FormFactorTable, GaussianFormFactor};

use crate::system::{norm2, sub, Configuration, SimulationCell, SystemError, Trajectory, Vec3};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum StructureError {
    #[error("r_max {r_max} Å exceeds half the smallest periodic edge ({limit} Å)")]
    RMaxTooLarge { r_max: f64, limit: f64 },
    #[error("bin count must be positive")]
    NoBins,
    #[error("q vector {index} {q:?} is not commensurate with the cell")]
    Incommensurate { index: usize, q: Vec3 },
    #[error("structure factors need a fully periodic cell")]
    NotPeriodic,
    #[error("atom {atom} has species {species} but only {available} form factors were given")]
    MissingSpecies { atom: usize, species: u32, available: usize },
    #[error(transparent)]
    System(#[from] SystemError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSidecar {
    pub frames_used: usize,
    pub stride: usize,
    pub bins: usize,
    pub provenance: String,
}

/// g(r) on uniform bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialHistogram {
    pub edges: Vec<f64>,
    pub g: Vec<f64>,
    pub frames: usize,
    pub stride: usize,
}

impl RadialHistogram {
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    /// (center, g) of the highest bin.
    pub fn first_peak(&self) -> (f64, f64) {
        let (k, g) = self.g.iter().enumerate().fold((0, f64::MIN), |acc, (k, &g)| if g > acc.1 { (k, g) } else { acc });
        (self.centers()[k], g)
    }

    /// Mean g over the outer `fraction` of bins.
    pub fn tail_mean(&self, fraction: f64) -> f64 {
        let n = self.g.len();
        let start = n - ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        self.g[start..].iter().sum::<f64>() / (n - start) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("r_A,g\n");
        for (r, g) in self.centers().iter().zip(&self.g) {
            let _ = writeln!(s, "{r},{g}");
        }
        s
    }

    pub fn sidecar(&self, provenance: &str) -> CurveSidecar {
        CurveSidecar { frames_used: self.frames, stride: self.stride, bins: self.g.len(), provenance: provenance.to_string() }
    }
}

/// Largest r_max the minimum-image convention supports.
pub fn max_rdf_radius(cell: &SimulationCell) -> f64 {
    0.5 * cell.min_periodic_edge()
}

/// Frame-averaged g(r) from minimum-image pair distances, i = j excluded.
/// Normalized by N(N−1)/V so uncorrelated positions give exactly 1 in expectation.
pub fn pair_distribution(traj: &Trajectory, r_max: f64, bins: usize, stride: usize) -> Result<RadialHistogram, StructureError> {
    if bins == 0 {
        return Err(StructureError::NoBins);
    }
    let stride = stride.max(1);
    let frames: Vec<&Configuration> = traj.frames().iter().step_by(stride).collect();
    for f in &frames {
        let limit = max_rdf_radius(f.cell());
        if !(r_max > 0.0 && r_max <= limit * (1.0 + 1e-12)) {
            return Err(StructureError::RMaxTooLarge { r_max, limit });
        }
    }
    let width = r_max / bins as f64;
    let per_frame: Vec<(Vec<u64>, f64)> = crate::par::map_slice(&frames, |c| {
        let mut h = vec![0u64; bins];
        let p = c.positions();
        let r2max = r_max * r_max;
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                let r2 = norm2(c.cell().minimum_image(sub(p[j], p[i])));
                if r2 < r2max {
                    let k = ((r2.sqrt() / width) as usize).min(bins - 1);
                    h[k] += 1;
                }
            }
        }
        let n = p.len() as f64;
        (h, n * (n - 1.0) / c.cell().volume())
    });
    let mut g = vec![0.0; bins];
    for (h, pair_density) in &per_frame {
        for k in 0..bins {
            let (r0, r1) = (k as f64 * width, (k + 1) as f64 * width);
            let shell = 4.0 / 3.0 * PI * (r1.powi(3) - r0.powi(3));
            g[k] += 2.0 * h[k] as f64 / (pair_density * shell);
        }
    }
    let nf = per_frame.len() as f64;
    g.iter_mut().for_each(|x| *x /= nf);
    Ok(RadialHistogram { edges: (0..=bins).map(|k| k as f64 * width).collect(), g, frames: per_frame.len(), stride })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureFactorCurve {
    pub q_vectors: Vec<Vec3>,
    /// |q|, Å⁻¹.
    pub q: Vec<f64>,
    pub s: Vec<f64>,
}

impl StructureFactorCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("q_invA,S\n");
        for (q, v) in self.q.iter().zip(&self.s) {
            let _ = writeln!(s, "{q},{v}");
        }
        s
    }
}

/// Integer reciprocal-lattice indices of q vectors, or an error for any
/// vector off the grid 2π/L·(h, k, l).
pub fn commensurate_indices(cell: &SimulationCell, q_vectors: &[Vec3]) -> Result<Vec<[i32; 3]>, StructureError> {
    if (0..3).any(|a| !cell.is_periodic(a)) {
        return Err(StructureError::NotPeriodic);
    }
    let l = cell.lengths();
    q_vectors
        .iter()
        .enumerate()
        .map(|(index, q)| {
            let mut hkl = [0i32; 3];
            for a in 0..3 {
                let x = q[a] * l[a] / (2.0 * PI);
                let r = x.round();
                if (x - r).abs() > 1e-6 * r.abs().max(1.0) {
                    return Err(StructureError::Incommensurate { index, q: *q });
                }
                hkl[a] = r as i32;
            }
            Ok(hkl)
        })
        .collect()
}

pub fn q_from_indices(cell: &SimulationCell, hkl: [i32; 3]) -> Vec3 {
    let l = cell.lengths();
    [2.0 * PI * hkl[0] as f64 / l[0], 2.0 * PI * hkl[1] as f64 / l[1], 2.0 * PI * hkl[2] as f64 / l[2]]
}

/// All nonzero commensurate vectors with |q| ≤ q_max.
pub fn commensurate_vectors(cell: &SimulationCell, q_max: f64) -> Vec<Vec3> {
    let l = cell.lengths();
    let lim = |a: usize| (q_max * l[a] / (2.0 * PI)).floor() as i32;
    let mut out = Vec::new();
    for h in -lim(0)..=lim(0) {
        for k in -lim(1)..=lim(1) {
            for m in -lim(2)..=lim(2) {
                if (h, k, m) == (0, 0, 0) {
                    continue;
                }
                let q = q_from_indices(cell, [h, k, m]);
                if norm2(q) <= q_max * q_max {
                    out.push(q);
                }
            }
        }
    }
    out
}

/// Per-atom phase factors exp(−i·2π·n·x/L) for |n| ≤ max index on each axis.
pub(crate) struct PhaseTable {
    span: [usize; 3],
    max: [i32; 3],
    // [atom][axis] blocks of length 2·max+1.
    data: Vec<Complex64>,
    stride: usize,
}

impl PhaseTable {
    pub(crate) fn new(config: &Configuration, max: [i32; 3]) -> Self {
        let span = [2 * max[0] as usize + 1, 2 * max[1] as usize + 1, 2 * max[2] as usize + 1];
        let stride = span[0] + span[1] + span[2];
        let l = config.cell().lengths();
        let mut data = Vec::with_capacity(config.len() * stride);
        for p in config.positions() {
            for a in 0..3 {
                let theta = -2.0 * PI * p[a] / l[a];
                for n in -max[a]..=max[a] {
                    data.push(Complex64::from_polar(1.0, theta * n as f64));
                }
            }
        }
        Self { span, max, data, stride }
    }

    pub(crate) fn max_index(indices: &[[i32; 3]]) -> [i32; 3] {
        let mut m = [0; 3];
        for hkl in indices {
            for a in 0..3 {
                m[a] = m[a].max(hkl[a].abs());
            }
        }
        m
    }

    #[inline]
    fn phase(&self, atom: usize, hkl: [i32; 3]) -> Complex64 {
        let base = atom * self.stride;
        let x = self.data[base + (hkl[0] + self.max[0]) as usize];
        let y = self.data[base + self.span[0] + (hkl[1] + self.max[1]) as usize];
        let z = self.data[base + self.span[0] + self.span[1] + (hkl[2] + self.max[2]) as usize];
        x * y * z
    }
}

fn check_species(config: &Configuration, factors: usize) -> Result<(), StructureError> {
    for (atom, &s) in config.species().iter().enumerate() {
        if s as usize >= factors {
            return Err(StructureError::MissingSpecies { atom, species: s, available: factors });
        }
    }
    Ok(())
}

/// |Σ_j f_j e^{−iq·r_j}|² / Σ_j f_j² for each (indices, |q|) pair. `factors` is indexed by species id.
pub(crate) fn weighted_intensities(config: &Configuration, indices: &[[i32; 3]], qmag: &[f64], factors: &[GaussianFormFactor]) -> Vec<f64> {
    let table = PhaseTable::new(config, PhaseTable::max_index(indices));
    let species = config.species();
    let mut out = vec![0.0; indices.len()];
    let mut w = vec![0.0; factors.len()];
    for (k, (&hkl, &q)) in indices.iter().zip(qmag).enumerate() {
        for (s, f) in factors.iter().enumerate() {
            w[s] = f.eval(q);
        }
        let mut amp = Complex64::new(0.0, 0.0);
        let mut norm = 0.0;
        for (j, &s) in species.iter().enumerate() {
            let f = w[s as usize];
            amp += table.phase(j, hkl) * f;
            norm += f * f;
        }
        out[k] = amp.norm_sqr() / norm;
    }
    out
}

/// S̃(q) = |Σ_j exp(−i q·r_j)|² / N, self term included.
pub fn structure_factor_direct(config: &Configuration, q_vectors: &[Vec3]) -> Result<StructureFactorCurve, StructureError> {
    let unit = vec![GaussianFormFactor::constant(1.0); config.species().iter().map(|s| *s as usize + 1).max().unwrap_or(1)];
    structure_factor_weighted(config, q_vectors, &unit)
}

/// Form-factor weighted S(q), normalized by Σ_j f_j(q)². `factors[s]` is the form factor of species id `s`.
pub fn structure_factor_weighted(
    config: &Configuration,
    q_vectors: &[Vec3],
    factors: &[GaussianFormFactor],
) -> Result<StructureFactorCurve, StructureError> {
    check_species(config, factors.len())?;
    let idx = commensurate_indices(config.cell(), q_vectors)?;
    let qmag: Vec<f64> = q_vectors.iter().map(|q| norm2(*q).sqrt()).collect();
    // Chunks of q vectors run in parallel; each chunk shares one phase table.
    let chunk = idx.len().div_ceil(crate::par::thread_count().max(1)).max(1);
    let pieces: Vec<(Vec<[i32; 3]>, Vec<f64>)> = idx.chunks(chunk).zip(qmag.chunks(chunk)).map(|(a, b)| (a.to_vec(), b.to_vec())).collect();
    let s: Vec<f64> = crate::par::map_slice(&pieces, |(i, q)| weighted_intensities(config, i, q, factors)).into_iter().flatten().collect();
    Ok(StructureFactorCurve { q_vectors: q_vectors.to_vec(), q: qmag, s })
}

/// Shell-averaged S(q) over frames, shells of width `dq` up to `q_max`.
pub fn structure_factor_isotropic(traj: &Trajectory, q_max: f64, dq: f64, stride: usize) -> Result<StructureFactorCurve, StructureError> {
    let cell = *traj.frames()[0].cell();
    traj.require_fixed_cell()?;
    let qs = commensurate_vectors(&cell, q_max);
    let nshell = (q_max / dq).ceil() as usize;
    let mut sum = vec![0.0; nshell];
    let mut count = vec![0usize; nshell];
    let frames: Vec<&Configuration> = traj.frames().iter().step_by(stride.max(1)).collect();
    for f in &frames {
        let c = structure_factor_direct(f, &qs)?;
        for (q, s) in c.q.iter().zip(&c.s) {
            let k = ((q / dq) as usize).min(nshell - 1);
            sum[k] += s;
            count[k] += 1;
        }
    }
    let mut out = StructureFactorCurve { q_vectors: Vec::new(), q: Vec::new(), s: Vec::new() };
    for k in 0..nshell {
        if count[k] > 0 {
            out.q.push((k as f64 + 0.5) * dq);
            out.s.push(sum[k] / count[k] as f64);
        }
    }
    Ok(out)
}
