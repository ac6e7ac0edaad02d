//! LAMMPS text dumps (`dump custom ... id type x y z [vx vy vz]`), metal units:
//! Å, ps, velocities Å/ps (converted to Å/fs on read).

use super::{io_err, IoError};
use crate::system::{Configuration, SimulationCell, Trajectory};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct DumpOptions {
    /// Integration timestep the TIMESTEP counter refers to, fs.
    pub timestep_fs: f64,
    /// Mass per LAMMPS atom type; types not listed get `default_mass`.
    pub masses: BTreeMap<u32, f64>,
    pub default_mass: f64,
}

impl Default for DumpOptions {
    /// Metal-unit default timestep of 1 fs, argon masses.
    fn default() -> Self {
        Self { timestep_fs: 1.0, masses: BTreeMap::new(), default_mass: crate::units::ARGON_MASS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LammpsDump {
    pub trajectory: Trajectory,
    /// No vx/vy/vz columns; velocities were set to zero.
    pub velocities_missing: bool,
}

pub fn read_lammps_dump(path: &Path, opts: &DumpOptions) -> Result<LammpsDump, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_lammps_dump(&text, &path.display().to_string(), opts)
}

pub fn parse_lammps_dump(text: &str, source: &str, opts: &DumpOptions) -> Result<LammpsDump, IoError> {
    let err = |line: usize, reason: String| IoError::Parse { path: source.to_string(), line, reason };
    let lines: Vec<&str> = text.lines().collect();
    let mut k = 0;
    let mut frames = Vec::new();
    let mut steps = Vec::new();
    let mut velocities_missing = false;
    let expect = |k: usize, tag: &str| -> Result<&str, IoError> {
        let l = lines.get(k).ok_or_else(|| err(k + 1, format!("unexpected end of file, expected `ITEM: {tag}`")))?;
        l.trim().strip_prefix("ITEM:").map(str::trim).filter(|r| r.starts_with(tag)).ok_or_else(|| err(k + 1, format!("expected `ITEM: {tag}`, got `{l}`")))
    };
    while k < lines.len() {
        if lines[k].trim().is_empty() {
            k += 1;
            continue;
        }
        expect(k, "TIMESTEP")?;
        let step: u64 = lines.get(k + 1).and_then(|l| l.trim().parse().ok()).ok_or_else(|| err(k + 2, "bad TIMESTEP value".into()))?;
        expect(k + 2, "NUMBER OF ATOMS")?;
        let n: usize = lines.get(k + 3).and_then(|l| l.trim().parse().ok()).ok_or_else(|| err(k + 4, "bad atom count".into()))?;
        let bounds = expect(k + 4, "BOX BOUNDS")?;
        let flags: Vec<&str> = bounds["BOX BOUNDS".len()..].split_whitespace().collect();
        if flags.iter().any(|f| ["xy", "xz", "yz"].contains(f)) {
            return Err(IoError::Unsupported(format!("{source}:{}: triclinic box", k + 5)));
        }
        let periodic: Vec<bool> = if flags.len() == 3 { flags.iter().map(|f| *f == "pp").collect() } else { vec![true; 3] };
        let mut lo = [0.0; 3];
        let mut len = [0.0; 3];
        for ax in 0..3 {
            let ln = k + 5 + ax;
            let v: Vec<f64> = lines
                .get(ln)
                .map(|l| l.split_whitespace().filter_map(|x| x.parse().ok()).collect())
                .unwrap_or_default();
            if v.len() != 2 {
                return Err(err(ln + 1, "box bounds need `lo hi`".into()));
            }
            lo[ax] = v[0];
            len[ax] = v[1] - v[0];
        }
        let cell = SimulationCell::new(len, [periodic[0], periodic[1], periodic[2]]).map_err(|e| err(k + 5, e.to_string()))?;
        let atoms = expect(k + 8, "ATOMS")?;
        let cols: Vec<&str> = atoms["ATOMS".len()..].split_whitespace().collect();
        let col = |name: &str| cols.iter().position(|c| *c == name);
        if ["xs", "ys", "zs", "xsu", "xu"].iter().any(|c| col(c).is_some()) && col("x").is_none() {
            return Err(IoError::Unsupported(format!("{source}:{}: scaled or unwrapped coordinates; dump x y z", k + 9)));
        }
        let need = |name: &str| col(name).ok_or_else(|| err(k + 9, format!("ATOMS lacks column `{name}`")));
        let (ci, ct, cx, cy, cz) = (need("id")?, need("type")?, need("x")?, need("y")?, need("z")?);
        let cv = match (col("vx"), col("vy"), col("vz")) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => {
                velocities_missing = true;
                None
            }
        };
        let mut rows: Vec<(u64, u32, [f64; 3], [f64; 3])> = Vec::with_capacity(n);
        for a in 0..n {
            let ln = k + 9 + a;
            let tok: Vec<&str> = lines
                .get(ln)
                .ok_or_else(|| err(ln + 1, format!("frame at step {step}: {n} atoms declared, found {a}")))?
                .split_whitespace()
                .collect();
            if tok.len() != cols.len() {
                return Err(err(ln + 1, format!("expected {} columns, got {}", cols.len(), tok.len())));
            }
            let f = |c: usize| tok[c].parse::<f64>().map_err(|_| err(ln + 1, format!("bad number `{}`", tok[c])));
            let id = tok[ci].parse::<u64>().map_err(|_| err(ln + 1, format!("bad id `{}`", tok[ci])))?;
            let ty = tok[ct].parse::<u32>().map_err(|_| err(ln + 1, format!("bad type `{}`", tok[ct])))?;
            let p = [f(cx)? - lo[0], f(cy)? - lo[1], f(cz)? - lo[2]];
            let v = match cv {
                Some([a, b, c]) => [f(a)? * 1e-3, f(b)? * 1e-3, f(c)? * 1e-3],
                None => [0.0; 3],
            };
            rows.push((id, ty, p, v));
        }
        rows.sort_by_key(|r| r.0);
        let species = rows.iter().map(|r| r.1.saturating_sub(1)).collect();
        let masses = rows.iter().map(|r| *opts.masses.get(&r.1).unwrap_or(&opts.default_mass)).collect();
        let time = step as f64 * opts.timestep_fs * 1e-3;
        let c = Configuration::new(rows.iter().map(|r| r.2).collect(), rows.iter().map(|r| r.3).collect(), species, masses, cell, time)
            .map_err(|e| err(k + 1, e.to_string()))?;
        frames.push(c);
        steps.push(step);
        k += 9 + n;
    }
    if frames.is_empty() {
        return Err(err(1, "no frames".into()));
    }
    let trajectory = if frames.len() == 1 {
        Trajectory::single(frames.pop().unwrap(), opts.timestep_fs)
    } else {
        let interval = (steps[1] as f64 - steps[0] as f64) * opts.timestep_fs;
        Trajectory::new(frames, interval)?
    };
    Ok(LammpsDump { trajectory, velocities_missing })
}
