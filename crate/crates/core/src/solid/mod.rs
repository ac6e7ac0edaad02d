//! Crystal construction and harmonic (Hessian) analysis.

mod hessian;
mod pdos;

pub use hessian::{
    numeric_hessian, symmetricity, symmetricity_dense, symmetrize, HessianError, HessianMatrix, HessianProvenance, MatrixNorm,
    SymmetricityScore, DEFAULT_DISPLACEMENT,
};
pub use pdos::{
    eigenvalue_to_thz, hessian_eigenvalues, pdos, pdos_from_eigenvalues, pdos_with_range, PdosError, PdosHistogram, StabilityWarning,
    ZERO_MODE_TOLERANCE,
};

use crate::system::{Configuration, SimulationCell, SystemError};

/// Perfect FCC crystal of `n`³ conventional cells at mass density `density` (amu/Å³).
pub fn build_fcc(n: usize, density: f64, mass: f64) -> Result<Configuration, SystemError> {
    build_fcc_cells([n, n, n], density, mass)
}

/// FCC crystal of nx×ny×nz conventional cells, zero velocities.
pub fn build_fcc_cells(cells: [usize; 3], density: f64, mass: f64) -> Result<Configuration, SystemError> {
    if cells.contains(&0) || !(density > 0.0) || !(mass > 0.0) {
        return Err(SystemError::Invalid(format!(
            "fcc needs at least one cell per axis and positive density/mass (cells={cells:?}, density={density}, mass={mass})"
        )));
    }
    let a = fcc_lattice_constant(density, mass);
    let basis = [[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]];
    let mut positions = Vec::with_capacity(4 * cells[0] * cells[1] * cells[2]);
    for i in 0..cells[0] {
        for j in 0..cells[1] {
            for k in 0..cells[2] {
                for b in &basis {
                    positions.push([(i as f64 + b[0]) * a, (j as f64 + b[1]) * a, (k as f64 + b[2]) * a]);
                }
            }
        }
    }
    let cell = SimulationCell::periodic([a * cells[0] as f64, a * cells[1] as f64, a * cells[2] as f64])?;
    Configuration::at_rest(positions, mass, cell)
}

/// FCC lattice constant for a mass density.
pub fn fcc_lattice_constant(density: f64, mass: f64) -> f64 {
    (4.0 * mass / density).cbrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::ARGON_MASS;

    #[test]
    fn atom_counts() {
        assert_eq!(build_fcc(4, 0.858, ARGON_MASS).unwrap().len(), 256);
        assert_eq!(build_fcc(8, 0.858, ARGON_MASS).unwrap().len(), 2048);
        assert!(build_fcc(0, 0.858, ARGON_MASS).is_err());
        assert!(build_fcc(2, -1.0, ARGON_MASS).is_err());
    }

    #[test]
    fn nearest_neighbors_at_a_over_sqrt2() {
        let c = build_fcc(2, 0.858, ARGON_MASS).unwrap();
        let a = fcc_lattice_constant(0.858, ARGON_MASS);
        let nn = a / 2f64.sqrt();
        for i in 0..c.len() {
            let mut dmin = f64::INFINITY;
            let mut count = 0;
            for j in 0..c.len() {
                if i == j {
                    continue;
                }
                let d = crate::system::norm2(c.cell().minimum_image(crate::system::sub(c.positions()[j], c.positions()[i]))).sqrt();
                if (d - nn).abs() < 1e-9 {
                    count += 1;
                }
                dmin = dmin.min(d);
            }
            assert!((dmin - nn).abs() < 1e-9);
            // A 2x2x2 cell sees each of the 12 neighbors through a distinct image.
            assert_eq!(count, 12);
        }
        assert!((c.mass_density() - 0.858).abs() < 1e-12);
        assert!(c.velocities().iter().all(|v| *v == [0.0; 3]));
    }
}
