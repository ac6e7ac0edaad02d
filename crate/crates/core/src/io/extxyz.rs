//! Extended XYZ.
//!
//! Per-frame comment line:
//! `Lattice="Lx 0 0 0 Ly 0 0 0 Lz" Properties=species:S:1:type:I:1:pos:R:3:velo:R:3:masses:R:1 Time=<ps> frame_interval_fs=<fs> pbc="T T T"`.
//! Floats use the shortest representation that parses back to the same bits.
//! Velocities are Å/fs.

use super::{io_err, IoError};
use crate::system::{Configuration, SimulationCell, Trajectory};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

const PROPERTIES: &str = "species:S:1:type:I:1:pos:R:3:velo:R:3:masses:R:1";

fn symbol(symbols: &[&str], species: u32) -> String {
    symbols.get(species as usize).map(|s| s.to_string()).unwrap_or_else(|| format!("X{species}"))
}

fn frame_text(out: &mut String, c: &Configuration, interval_fs: f64, symbols: &[&str]) {
    let l = c.cell().lengths();
    let pbc: Vec<&str> = c.cell().periodicity().iter().map(|p| if *p { "T" } else { "F" }).collect();
    let _ = writeln!(out, "{}", c.len());
    let _ = writeln!(
        out,
        "Lattice=\"{:?} 0 0 0 {:?} 0 0 0 {:?}\" Properties={PROPERTIES} Time={:?} frame_interval_fs={:?} pbc=\"{}\"",
        l[0],
        l[1],
        l[2],
        c.time_ps(),
        interval_fs,
        pbc.join(" ")
    );
    for i in 0..c.len() {
        let (p, v) = (c.positions()[i], c.velocities()[i]);
        let s = c.species()[i];
        let _ = writeln!(
            out,
            "{} {} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
            symbol(symbols, s),
            s,
            p[0],
            p[1],
            p[2],
            v[0],
            v[1],
            v[2],
            c.masses()[i]
        );
    }
}

/// Appends frames to a file as they are produced.
pub struct ExtxyzWriter {
    file: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
    interval_fs: f64,
    symbols: Vec<String>,
    buf: String,
}

impl ExtxyzWriter {
    pub fn create(path: &Path, interval_fs: f64, symbols: &[&str]) -> Result<Self, IoError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        Ok(Self {
            file: std::io::BufWriter::new(file),
            path: path.to_path_buf(),
            interval_fs,
            symbols: symbols.iter().map(|s| s.to_string()).collect(),
            buf: String::new(),
        })
    }

    pub fn write_frame(&mut self, c: &Configuration) -> Result<(), IoError> {
        self.buf.clear();
        let symbols: Vec<&str> = self.symbols.iter().map(String::as_str).collect();
        frame_text(&mut self.buf, c, self.interval_fs, &symbols);
        self.file.write_all(self.buf.as_bytes()).map_err(io_err(&self.path))
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.file.flush().map_err(io_err(&self.path))
    }
}

/// Species 0 is written as Ar.
pub fn write_extxyz(traj: &Trajectory, path: &Path) -> Result<(), IoError> {
    write_extxyz_with(traj, path, &["Ar"])
}

pub fn write_extxyz_with(traj: &Trajectory, path: &Path, symbols: &[&str]) -> Result<(), IoError> {
    let mut w = ExtxyzWriter::create(path, traj.frame_interval_fs(), symbols)?;
    for f in traj.frames() {
        w.write_frame(f)?;
    }
    w.finish()
}

pub fn read_extxyz(path: &Path) -> Result<Trajectory, IoError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_extxyz(&text, &path.display().to_string())
}

/// `key=value` pairs of a comment line; values may be double-quoted.
fn header_fields(line: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    let mut chars = line.trim().chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            return Ok(out);
        }
        let key: String = std::iter::from_fn(|| chars.next_if(|c| *c != '=' && !c.is_whitespace())).collect();
        if chars.next_if_eq(&'=').is_none() {
            // Bare flag.
            out.insert(key.to_lowercase(), "T".into());
            continue;
        }
        let value: String = if chars.next_if_eq(&'"').is_some() {
            let v: String = std::iter::from_fn(|| chars.next_if(|c| *c != '"')).collect();
            if chars.next_if_eq(&'"').is_none() {
                return Err(format!("unterminated quote in value of `{key}`"));
            }
            v
        } else {
            std::iter::from_fn(|| chars.next_if(|c| !c.is_whitespace())).collect()
        };
        out.insert(key.to_lowercase(), value);
    }
}

struct Column {
    name: String,
    kind: char,
    start: usize,
    width: usize,
}

fn properties(spec: &str) -> Result<Vec<Column>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() % 3 != 0 {
        return Err(format!("malformed Properties `{spec}`"));
    }
    let mut cols = Vec::new();
    let mut start = 0;
    for c in parts.chunks(3) {
        let width: usize = c[2].parse().map_err(|_| format!("bad column count in Properties `{spec}`"))?;
        let kind = c[1].chars().next().unwrap_or('?').to_ascii_uppercase();
        cols.push(Column { name: c[0].to_lowercase(), kind, start, width });
        start += width;
    }
    Ok(cols)
}

fn standard_mass(symbol: &str) -> Option<f64> {
    match symbol {
        "Ar" => Some(crate::units::ARGON_MASS),
        "Ne" => Some(20.1797),
        "Kr" => Some(83.798),
        "Xe" => Some(131.293),
        _ => None,
    }
}

pub fn parse_extxyz(text: &str, source: &str) -> Result<Trajectory, IoError> {
    let err = |line: usize, reason: String| IoError::Parse { path: source.to_string(), line, reason };
    let lines: Vec<&str> = text.lines().collect();
    let mut k = 0;
    let mut frames = Vec::new();
    let mut interval = None;
    let mut symbol_ids: BTreeMap<String, u32> = BTreeMap::new();
    while k < lines.len() {
        if lines[k].trim().is_empty() {
            k += 1;
            continue;
        }
        let frame_no = frames.len();
        let n: usize = lines[k].trim().parse().map_err(|_| err(k + 1, format!("frame {frame_no}: expected atom count, got `{}`", lines[k].trim())))?;
        let head_line = k + 2;
        let header = lines.get(k + 1).ok_or_else(|| err(k + 2, format!("frame {frame_no}: missing comment line")))?;
        let fields = header_fields(header).map_err(|e| err(head_line, e))?;
        let lattice = fields.get("lattice").ok_or_else(|| err(head_line, "missing Lattice".into()))?;
        let lv: Vec<f64> = lattice
            .split_whitespace()
            .map(|x| x.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(head_line, format!("non-numeric Lattice `{lattice}`")))?;
        if lv.len() != 9 {
            return Err(err(head_line, format!("Lattice needs 9 numbers, got {}", lv.len())));
        }
        if [1, 2, 3, 5, 6, 7].iter().any(|&i| lv[i] != 0.0) {
            return Err(IoError::Unsupported(format!("{source}:{head_line}: non-orthorhombic Lattice")));
        }
        let pbc = match fields.get("pbc") {
            None => [true; 3],
            Some(s) => {
                let v: Vec<bool> = s.split_whitespace().map(|t| matches!(t, "T" | "t" | "True" | "true" | "1")).collect();
                if v.len() != 3 {
                    return Err(err(head_line, format!("pbc needs 3 flags, got `{s}`")));
                }
                [v[0], v[1], v[2]]
            }
        };
        let cell = SimulationCell::new([lv[0], lv[4], lv[8]], pbc).map_err(|e| err(head_line, e.to_string()))?;
        let props = properties(fields.get("properties").map(String::as_str).unwrap_or("species:S:1:pos:R:3")).map_err(|e| err(head_line, e))?;
        let find = |names: &[&str]| props.iter().find(|c| names.contains(&c.name.as_str()));
        let pos_col = find(&["pos", "positions"]).ok_or_else(|| err(head_line, "Properties lacks pos".into()))?;
        if pos_col.kind != 'R' || pos_col.width != 3 {
            return Err(err(head_line, "pos must be R:3".into()));
        }
        let vel_col = find(&["velo", "vel", "velocities"]);
        let mass_col = find(&["masses", "mass"]);
        let type_col = find(&["type"]);
        let sp_col = find(&["species"]);
        let width = props.iter().map(|c| c.start + c.width).max().unwrap_or(0);
        let time: f64 = match fields.get("time") {
            Some(t) => t.parse().map_err(|_| err(head_line, format!("bad Time `{t}`")))?,
            None => 0.0,
        };
        if let Some(i) = fields.get("frame_interval_fs") {
            interval = Some(i.parse::<f64>().map_err(|_| err(head_line, format!("bad frame_interval_fs `{i}`")))?);
        }

        let (mut pos, mut vel, mut species, mut masses) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for a in 0..n {
            let ln = k + 2 + a;
            let row = lines
                .get(ln)
                .filter(|l| !l.trim().is_empty())
                .ok_or_else(|| err(ln + 1, format!("frame {frame_no}: header declares {n} atoms, found {a}")))?;
            let tok: Vec<&str> = row.split_whitespace().collect();
            if tok.len() != width {
                return Err(err(ln + 1, format!("frame {frame_no}: expected {width} columns, got {}", tok.len())));
            }
            let real = |c: &Column, j: usize| -> Result<f64, IoError> {
                tok[c.start + j].parse::<f64>().map_err(|_| err(ln + 1, format!("bad number `{}` in column {}", tok[c.start + j], c.name)))
            };
            pos.push([real(pos_col, 0)?, real(pos_col, 1)?, real(pos_col, 2)?]);
            vel.push(match vel_col {
                Some(c) => [real(c, 0)?, real(c, 1)?, real(c, 2)?],
                None => [0.0; 3],
            });
            let sym = sp_col.map(|c| tok[c.start]);
            let id = match (type_col, sym) {
                (Some(c), _) => tok[c.start].parse::<u32>().map_err(|_| err(ln + 1, format!("bad type `{}`", tok[c.start])))?,
                (None, Some(s)) => {
                    let next = symbol_ids.len() as u32;
                    *symbol_ids.entry(s.to_string()).or_insert(next)
                }
                (None, None) => 0,
            };
            species.push(id);
            masses.push(match mass_col {
                Some(c) => real(c, 0)?,
                None => sym
                    .and_then(standard_mass)
                    .ok_or_else(|| err(ln + 1, format!("no mass column and no standard mass for `{}`", sym.unwrap_or("?"))))?,
            });
        }
        frames.push(Configuration::new(pos, vel, species, masses, cell, time).map_err(|e| err(head_line, e.to_string()))?);
        k += 2 + n;
    }
    if frames.is_empty() {
        return Err(err(1, "no frames".into()));
    }
    let interval = match interval {
        Some(i) => i,
        None if frames.len() > 1 => (frames[1].time_ps() - frames[0].time_ps()) * 1e3,
        None => 1.0,
    };
    if frames.len() == 1 {
        return Ok(Trajectory::single(frames.pop().unwrap(), interval));
    }
    Ok(Trajectory::new(frames, interval)?)
}
