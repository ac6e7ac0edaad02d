//! Phonon density of states from Hessian eigenvalues.

use super::hessian::{HessianError, HessianMatrix};
use crate::units::MVV_TO_EV;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Modes with |λ| below this fraction of max λ count as zero modes.
pub const ZERO_MODE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum PdosError {
    #[error("PDOS needs a symmetrized Hessian")]
    NotSymmetrized,
    #[error("mass must be positive, got {0}")]
    BadMass(f64),
    #[error("bin count must be positive")]
    NoBins,
    #[error("no positive eigenvalues")]
    NoModes,
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error(transparent)]
    Hessian(#[from] HessianError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StabilityWarning {
    /// More than the three translational zero modes.
    ExtraZeroModes { count: usize },
    /// Eigenvalues below −tolerance (imaginary frequencies).
    ImaginaryModes { count: usize, most_negative: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdosHistogram {
    /// THz, `counts.len() + 1` entries.
    pub bin_edges: Vec<f64>,
    /// Normalized so that Σ counts·width = 1.
    pub counts: Vec<f64>,
    pub zero_modes: usize,
    pub imaginary_modes: usize,
    /// Real mode frequencies, THz, ascending.
    pub frequencies: Vec<f64>,
    pub warnings: Vec<StabilityWarning>,
}

impl PdosHistogram {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("nu_THz,density\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{}", 0.5 * (self.bin_edges[i] + self.bin_edges[i + 1]), c);
        }
        s
    }

    pub fn max_frequency(&self) -> f64 {
        self.frequencies.last().copied().unwrap_or(0.0)
    }

    /// Σ |Δcount|·width against a histogram on the same edges.
    pub fn l1_distance(&self, other: &PdosHistogram) -> f64 {
        self.counts
            .iter()
            .zip(&other.counts)
            .enumerate()
            .map(|(i, (a, b))| (a - b).abs() * (self.bin_edges[i + 1] - self.bin_edges[i]))
            .sum()
    }
}

/// ν = (1/2π)·√(λ/m) in THz for λ in eV/Å² and m in amu.
pub fn eigenvalue_to_thz(lambda: f64, mass: f64) -> f64 {
    // λ/(m·MVV_TO_EV) is ω² in fs⁻²; 1 fs⁻¹ = 1000 THz.
    (lambda / (mass * MVV_TO_EV)).sqrt() / (2.0 * std::f64::consts::PI) * 1000.0
}

/// All eigenvalues of a symmetrized Hessian, ascending.
pub fn hessian_eigenvalues(h: &HessianMatrix) -> Result<Vec<f64>, PdosError> {
    if !h.is_symmetrized() {
        return Err(PdosError::NotSymmetrized);
    }
    let mut ev = h
        .to_faer()
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| PdosError::Eigen(format!("{e:?}")))?;
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

/// Histogram over [0, ν_max] with `bins` bins.
pub fn pdos(h: &HessianMatrix, mass: f64, bins: usize) -> Result<PdosHistogram, PdosError> {
    pdos_with_range(h, mass, bins, None)
}

/// As `pdos` with an explicit upper frequency edge (THz) so histograms can be compared bin by bin.
pub fn pdos_with_range(h: &HessianMatrix, mass: f64, bins: usize, nu_max: Option<f64>) -> Result<PdosHistogram, PdosError> {
    if !(mass > 0.0) {
        return Err(PdosError::BadMass(mass));
    }
    if bins == 0 {
        return Err(PdosError::NoBins);
    }
    let ev = hessian_eigenvalues(h)?;
    pdos_from_eigenvalues(&ev, mass, bins, nu_max)
}

pub fn pdos_from_eigenvalues(ev: &[f64], mass: f64, bins: usize, nu_max: Option<f64>) -> Result<PdosHistogram, PdosError> {
    let lmax = ev.iter().cloned().fold(0.0, f64::max);
    if lmax <= 0.0 {
        return Err(PdosError::NoModes);
    }
    let tol = ZERO_MODE_TOLERANCE * lmax;
    let zero_modes = ev.iter().filter(|l| l.abs() < tol).count();
    let negative: Vec<f64> = ev.iter().cloned().filter(|l| *l <= -tol).collect();
    let mut frequencies: Vec<f64> = ev.iter().filter(|l| **l >= tol).map(|l| eigenvalue_to_thz(*l, mass)).collect();
    frequencies.sort_by(f64::total_cmp);
    let mut warnings = Vec::new();
    if zero_modes > 3 {
        warnings.push(StabilityWarning::ExtraZeroModes { count: zero_modes });
    }
    if !negative.is_empty() {
        warnings.push(StabilityWarning::ImaginaryModes {
            count: negative.len(),
            most_negative: negative.iter().cloned().fold(0.0, f64::min),
        });
    }
    let top = nu_max.unwrap_or_else(|| frequencies.last().copied().unwrap_or(1.0)).max(f64::MIN_POSITIVE);
    let width = top / bins as f64;
    let mut counts = vec![0.0; bins];
    for &nu in &frequencies {
        // The top frequency lands in the last bin.
        let b = ((nu / width) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let total = frequencies.len() as f64;
    for c in &mut counts {
        *c /= total * width;
    }
    Ok(PdosHistogram {
        bin_edges: (0..=bins).map(|i| i as f64 * width).collect(),
        counts,
        zero_modes,
        imaginary_modes: negative.len(),
        frequencies,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcefield::{lj_pair, LennardJonesModel};
    use crate::solid::{build_fcc, numeric_hessian, symmetrize, DEFAULT_DISPLACEMENT};
    use crate::system::{Configuration, SimulationCell};
    use crate::units::ARGON_MASS;

    #[test]
    fn diagonal_single_bin() {
        let k = 0.5;
        let h = symmetrize(&HessianMatrix::from_row_major(6, (0..36).map(|i| if i % 7 == 0 { k } else { 0.0 }).collect()).unwrap());
        let p = pdos(&h, ARGON_MASS, 4).unwrap();
        let nu = eigenvalue_to_thz(k, ARGON_MASS);
        assert_eq!(p.frequencies.len(), 6);
        assert!(p.frequencies.iter().all(|f| (f - nu).abs() < 1e-12 * nu));
        assert_eq!(p.counts.iter().filter(|c| **c > 0.0).count(), 1);
        let integral: f64 = p.counts.iter().map(|c| c * (p.bin_edges[1] - p.bin_edges[0])).sum();
        assert!((integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unsymmetrized_rejected() {
        let h = HessianMatrix::from_row_major(1, vec![1.0]).unwrap();
        assert!(matches!(pdos(&h, 1.0, 1), Err(PdosError::NotSymmetrized)));
    }

    #[test]
    fn dimer_reduced_mass_frequency() {
        let m = LennardJonesModel::argon();
        let r0 = 2f64.powf(1.0 / 6.0) * m.sigma;
        let cell = SimulationCell::cubic(40.0).unwrap();
        let c = Configuration::at_rest(vec![[10.0, 10.0, 10.0], [10.0 + r0, 10.0, 10.0]], ARGON_MASS, cell).unwrap();
        let h = symmetrize(&numeric_hessian(&c, &m, DEFAULT_DISPLACEMENT).unwrap());
        let p = pdos(&h, ARGON_MASS, 10).unwrap();
        assert_eq!(p.frequencies.len(), 1);
        let want = eigenvalue_to_thz(2.0 * m.curvature(r0), ARGON_MASS);
        assert!((p.frequencies[0] / want - 1.0).abs() < 1e-6, "{} vs {want}", p.frequencies[0]);
    }

    /// Hessian assembled from V'' and V'/r over all periodic images.
    fn analytic_hessian(c: &Configuration, m: &LennardJonesModel) -> HessianMatrix {
        let n = c.len();
        let d = 3 * n;
        let l = c.cell().lengths();
        let mut data = vec![0.0; d * d];
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                for sx in -1..=1 {
                    for sy in -1..=1 {
                        for sz in -1..=1 {
                            let pa = c.positions()[a];
                            let pb = c.positions()[b];
                            let r = [
                                pb[0] - pa[0] + sx as f64 * l[0],
                                pb[1] - pa[1] + sy as f64 * l[1],
                                pb[2] - pa[2] + sz as f64 * l[2],
                            ];
                            let rr = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                            if rr >= m.cutoff {
                                continue;
                            }
                            let (_, f) = lj_pair(rr, m).unwrap();
                            let dv_over_r = -f / rr;
                            let v2 = m.curvature(rr);
                            for i in 0..3 {
                                for j in 0..3 {
                                    let delta = if i == j { 1.0 } else { 0.0 };
                                    let u = r[i] * r[j] / (rr * rr);
                                    let k = v2 * u + dv_over_r * (delta - u);
                                    data[(3 * a + i) * d + 3 * b + j] -= k;
                                    data[(3 * a + i) * d + 3 * a + j] += k;
                                }
                            }
                        }
                    }
                }
            }
        }
        symmetrize(&HessianMatrix::from_row_major(d, data).unwrap())
    }

    #[test]
    fn fcc_numeric_matches_analytic_32_atoms() {
        // Edge 11.4 Å is too small for the 8.5 Å cutoff; shorten it for this oracle.
        let m = LennardJonesModel::new(0.0103, 3.40, 5.5, false).unwrap();
        let c = build_fcc(2, 0.858, ARGON_MASS).unwrap();
        let num = symmetrize(&numeric_hessian(&c, &m, DEFAULT_DISPLACEMENT).unwrap());
        let ana = analytic_hessian(&c, &m);
        let ev_n = hessian_eigenvalues(&num).unwrap();
        let ev_a = hessian_eigenvalues(&ana).unwrap();
        let top = ev_a.last().unwrap();
        assert!((ev_n.last().unwrap() / top - 1.0).abs() < 1e-6);
        for (x, y) in ev_n.iter().zip(&ev_a) {
            assert!((x - y).abs() < 1e-6 * top);
        }
        let p = pdos(&num, ARGON_MASS, 20).unwrap();
        assert_eq!(p.zero_modes, 3);
        assert_eq!(p.imaginary_modes, 0);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn relabeling_invariant() {
        let m = LennardJonesModel::new(0.0103, 3.40, 5.5, false).unwrap();
        let c = build_fcc(2, 0.858, ARGON_MASS).unwrap();
        let order: Vec<usize> = (0..c.len()).rev().collect();
        let a = pdos_with_range(&symmetrize(&numeric_hessian(&c, &m, DEFAULT_DISPLACEMENT).unwrap()), ARGON_MASS, 20, Some(3.0)).unwrap();
        let b = pdos_with_range(&symmetrize(&numeric_hessian(&c.permuted(&order), &m, DEFAULT_DISPLACEMENT).unwrap()), ARGON_MASS, 20, Some(3.0))
            .unwrap();
        assert!(a.l1_distance(&b) < 1e-9);
    }
}
