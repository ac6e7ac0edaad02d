//! Neighbor-averaged q6 bond-orientational order and solid/liquid labels.

use crate::md::{build_neighbor_list, NeighborError};
use crate::system::{sub, Configuration};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const L: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Solid,
    Liquid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labels {
    pub phases: Vec<Phase>,
    pub q6: Vec<f64>,
    /// Atoms with fewer than 4 neighbors, labeled by neighbor majority.
    pub flagged: Vec<usize>,
}

impl Labels {
    pub fn solid_fraction(&self) -> f64 {
        self.phases.iter().filter(|p| **p == Phase::Solid).count() as f64 / self.phases.len() as f64
    }
}

/// Threshold on neighbor-averaged q6 separating solid from liquid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseClassifier {
    /// Neighbor cutoff, Å.
    pub cutoff: f64,
    pub threshold: f64,
}

/// Y_6^m for m = 0..=6 (negative m follow by symmetry).
fn y6(d: [f64; 3], out: &mut [Complex64; L + 1]) {
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let x = d[2] / r;
    let phi = d[1].atan2(d[0]);
    let s = (1.0 - x * x).max(0.0).sqrt();
    for m in 0..=L {
        // P_m^m, then upward in l to P_6^m.
        let mut pmm = 1.0;
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * s;
            fact += 2.0;
        }
        let plm = if m == L {
            pmm
        } else {
            let mut p_prev = pmm;
            let mut p = x * (2 * m + 1) as f64 * pmm;
            for l in m + 2..=L {
                let next = ((2 * l - 1) as f64 * x * p - (l + m - 1) as f64 * p_prev) / (l - m) as f64;
                p_prev = p;
                p = next;
            }
            p
        };
        let ratio: f64 = ((L - m + 1)..=(L + m)).map(|k| k as f64).product();
        let norm = ((2 * L + 1) as f64 / (4.0 * PI) / ratio).sqrt();
        out[m] = Complex64::from_polar(norm * plm, m as f64 * phi);
    }
}

fn full_adjacency(config: &Configuration, cutoff: f64) -> Result<Vec<Vec<usize>>, NeighborError> {
    let list = build_neighbor_list(config, cutoff, 0.0)?;
    let mut adj = vec![Vec::new(); config.len()];
    let c2 = cutoff * cutoff;
    for (i, j) in list.pairs() {
        let d = config.cell().minimum_image(sub(config.positions()[j], config.positions()[i]));
        if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < c2 {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    Ok(adj)
}

/// Per-atom q̄6: q6m averaged over the atom and its neighbors, then rotationally invariant norm.
pub fn averaged_q6(config: &Configuration, cutoff: f64) -> Result<(Vec<f64>, Vec<Vec<usize>>), NeighborError> {
    let adj = full_adjacency(config, cutoff)?;
    let pos = config.positions();
    let qlm: Vec<[Complex64; L + 1]> = crate::par::map_indices(config.len(), |i| {
        let mut acc = [Complex64::new(0.0, 0.0); L + 1];
        let mut y = [Complex64::new(0.0, 0.0); L + 1];
        for &j in &adj[i] {
            y6(config.cell().minimum_image(sub(pos[j], pos[i])), &mut y);
            for m in 0..=L {
                acc[m] += y[m];
            }
        }
        let n = adj[i].len().max(1) as f64;
        acc.map(|c| c / n)
    });
    let q6 = crate::par::map_indices(config.len(), |i| {
        let mut avg = qlm[i];
        for &j in &adj[i] {
            for m in 0..=L {
                avg[m] += qlm[j][m];
            }
        }
        let n = (adj[i].len() + 1) as f64;
        let mut s = (avg[0] / n).norm_sqr();
        for c in &avg[1..] {
            s += 2.0 * (c / n).norm_sqr();
        }
        (4.0 * PI / (2 * L + 1) as f64 * s).sqrt()
    });
    Ok((q6, adj))
}

impl PhaseClassifier {
    /// Midpoint between the median q̄6 of pure-solid and pure-liquid samples.
    pub fn calibrate(solid: &[Configuration], liquid: &[Configuration], cutoff: f64) -> Result<Self, NeighborError> {
        let median = |frames: &[Configuration]| -> Result<f64, NeighborError> {
            let mut v = Vec::new();
            for f in frames {
                v.extend(averaged_q6(f, cutoff)?.0);
            }
            v.sort_by(f64::total_cmp);
            Ok(v[v.len() / 2])
        };
        Ok(Self { cutoff, threshold: 0.5 * (median(solid)? + median(liquid)?) })
    }

    pub fn classify(&self, config: &Configuration) -> Result<Labels, NeighborError> {
        let (q6, adj) = averaged_q6(config, self.cutoff)?;
        let mut phases: Vec<Phase> = q6.iter().map(|q| if *q > self.threshold { Phase::Solid } else { Phase::Liquid }).collect();
        let flagged: Vec<usize> = (0..config.len()).filter(|&i| adj[i].len() < 4).collect();
        let snapshot = phases.clone();
        for &i in &flagged {
            let solid = adj[i].iter().filter(|&&j| snapshot[j] == Phase::Solid).count();
            // Ties and isolated atoms go to liquid.
            phases[i] = if 2 * solid > adj[i].len() { Phase::Solid } else { Phase::Liquid };
        }
        Ok(Labels { phases, q6, flagged })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solid::{build_fcc, fcc_lattice_constant};
    use crate::units::ARGON_MASS;

    #[test]
    fn harmonics_are_normalized() {
        // ∫|Y_6^m|² dΩ = 1 by midpoint quadrature.
        let n = 400;
        let mut acc = [0.0; L + 1];
        let mut y = [Complex64::new(0.0, 0.0); L + 1];
        for a in 0..n {
            let theta = PI * (a as f64 + 0.5) / n as f64;
            for b in 0..2 * n {
                let phi = PI * (b as f64 + 0.5) / n as f64;
                y6([theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()], &mut y);
                let w = theta.sin() * (PI / n as f64) * (PI / n as f64);
                for m in 0..=L {
                    acc[m] += y[m].norm_sqr() * w;
                }
            }
        }
        for (m, v) in acc.iter().enumerate() {
            assert!((v - 1.0).abs() < 1e-4, "m={m}: {v}");
        }
    }

    #[test]
    fn fcc_q6_value() {
        // Twelve nearest neighbors of an FCC site give q6 = 0.57452.
        let c = build_fcc(4, 0.858, ARGON_MASS).unwrap();
        let cut = 0.85 * fcc_lattice_constant(0.858, ARGON_MASS);
        let (q6, adj) = averaged_q6(&c, cut).unwrap();
        assert!(adj.iter().all(|a| a.len() == 12));
        assert!(q6.iter().all(|q| (q - 0.57452).abs() < 1e-4), "{}", q6[0]);
    }

    #[test]
    fn isolated_atoms_are_flagged() {
        let cell = crate::system::SimulationCell::cubic(30.0).unwrap();
        let c = Configuration::at_rest(vec![[1.0; 3], [10.0; 3], [20.0; 3]], ARGON_MASS, cell).unwrap();
        let l = PhaseClassifier { cutoff: 4.9, threshold: 0.3 }.classify(&c).unwrap();
        assert_eq!(l.flagged, vec![0, 1, 2]);
        assert!(l.phases.iter().all(|p| *p == Phase::Liquid));
    }
}
