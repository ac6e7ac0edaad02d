//! Physical constants and conversions between real (metal-style) units and
//! Lennard-Jones reduced units.
//!
//! Real units used throughout the crate: length Å, time fs, energy eV,
//! mass amu, temperature K. Reduced units only appear at I/O boundaries.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Boltzmann constant in eV/K.
pub const BOLTZMANN: f64 = 8.617333262e-5;

const AMU_KG: f64 = 1.660_539_066_60e-27;
const EV_J: f64 = 1.602_176_634e-19;

/// One amu·Å²/fs² expressed in eV (≈ 103.64).
pub const MVV_TO_EV: f64 = AMU_KG * 1e-20 / 1e-30 / EV_J;

/// Argon mass in amu.
pub const ARGON_MASS: f64 = 39.948;
/// Argon LJ well depth in eV.
pub const ARGON_EPSILON: f64 = 0.0103;
/// Argon LJ diameter in Å.
pub const ARGON_SIGMA: f64 = 3.40;

/// 1 Å²/ps in μm²/s.
pub const A2_PER_PS_TO_UM2_PER_S: f64 = 1.0e4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum UnitError {
    #[error("unsupported quantity kind `{0}` (expected one of length, energy, time, density, temperature, force, pressure)")]
    UnsupportedQuantity(String),
    #[error("unit systems use different reference constants; convert through real units explicitly")]
    MismatchedReference,
    #[error("reference constants must be strictly positive (sigma={sigma}, epsilon={epsilon}, mass={mass})")]
    NonPositiveReference { sigma: f64, epsilon: f64, mass: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Reduced,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    Length,
    Energy,
    Time,
    /// Mass density (amu/Å³) in real units, number density ρσ³ in reduced units.
    Density,
    Temperature,
    Force,
    Pressure,
}

impl FromStr for Quantity {
    type Err = UnitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "length" => Quantity::Length,
            "energy" => Quantity::Energy,
            "time" => Quantity::Time,
            "density" => Quantity::Density,
            "temperature" => Quantity::Temperature,
            "force" => Quantity::Force,
            "pressure" => Quantity::Pressure,
            other => return Err(UnitError::UnsupportedQuantity(other.to_string())),
        })
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Quantity::Length => "length",
            Quantity::Energy => "energy",
            Quantity::Time => "time",
            Quantity::Density => "density",
            Quantity::Temperature => "temperature",
            Quantity::Force => "force",
            Quantity::Pressure => "pressure",
        };
        f.write_str(s)
    }
}

/// A unit system anchored on LJ reference constants (σ in Å, ε in eV, m in amu).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSystem {
    pub kind: UnitKind,
    pub sigma: f64,
    pub epsilon: f64,
    pub mass: f64,
}

impl UnitSystem {
    pub fn new(kind: UnitKind, sigma: f64, epsilon: f64, mass: f64) -> Result<Self, UnitError> {
        if !(sigma > 0.0 && epsilon > 0.0 && mass > 0.0) {
            return Err(UnitError::NonPositiveReference { sigma, epsilon, mass });
        }
        Ok(Self { kind, sigma, epsilon, mass })
    }

    pub fn argon_real() -> Self {
        Self { kind: UnitKind::Real, sigma: ARGON_SIGMA, epsilon: ARGON_EPSILON, mass: ARGON_MASS }
    }

    pub fn argon_reduced() -> Self {
        Self { kind: UnitKind::Reduced, ..Self::argon_real() }
    }

    /// τ = σ·sqrt(m/ε) in fs.
    pub fn time_unit_fs(&self) -> f64 {
        self.sigma * (self.mass * MVV_TO_EV / self.epsilon).sqrt()
    }

    /// Size of one reduced unit of `quantity`, expressed in real units.
    fn reduced_scale(&self, quantity: Quantity) -> f64 {
        let s3 = self.sigma.powi(3);
        match quantity {
            Quantity::Length => self.sigma,
            Quantity::Energy => self.epsilon,
            Quantity::Time => self.time_unit_fs(),
            Quantity::Density => self.mass / s3,
            Quantity::Temperature => self.epsilon / BOLTZMANN,
            Quantity::Force => self.epsilon / self.sigma,
            Quantity::Pressure => self.epsilon / s3,
        }
    }

    fn same_reference(&self, other: &UnitSystem) -> bool {
        self.sigma == other.sigma && self.epsilon == other.epsilon && self.mass == other.mass
    }
}

/// Convert `value` of the given quantity between unit systems sharing reference constants.
pub fn convert(value: f64, quantity: Quantity, from: &UnitSystem, to: &UnitSystem) -> Result<f64, UnitError> {
    if !from.same_reference(to) {
        return Err(UnitError::MismatchedReference);
    }
    if from.kind == to.kind {
        return Ok(value);
    }
    let scale = from.reduced_scale(quantity);
    Ok(match from.kind {
        UnitKind::Reduced => value * scale,
        UnitKind::Real => value / scale,
    })
}

/// Convert a string-named quantity; unknown names produce a descriptive error.
pub fn convert_named(value: f64, quantity: &str, from: &UnitSystem, to: &UnitSystem) -> Result<f64, UnitError> {
    convert(value, quantity.parse()?, from, to)
}

/// Number density (1/Å³) of a mass density (amu/Å³) for atoms of `mass` amu.
pub fn number_density(mass_density: f64, mass: f64) -> f64 {
    mass_density / mass
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reduced_cutoff_is_8_5_angstrom() {
        let l = convert(2.5, Quantity::Length, &UnitSystem::argon_reduced(), &UnitSystem::argon_real()).unwrap();
        assert!((l - 8.5).abs() < 1e-12);
    }

    #[test]
    fn reduced_density_matches_mass_density() {
        let rho = convert(0.844, Quantity::Density, &UnitSystem::argon_reduced(), &UnitSystem::argon_real()).unwrap();
        assert!((rho - 0.858).abs() < 5e-4, "rho = {rho}");
    }

    #[test]
    fn timestep_is_five_thousandths_of_tau() {
        // 10.78 fs is the rounded value of 0.005 τ for argon.
        let tau = UnitSystem::argon_real().time_unit_fs();
        assert!((0.005 * tau - 10.78).abs() < 5e-3, "tau = {tau}");
    }

    #[test]
    fn identity_conversion() {
        let u = UnitSystem::argon_real();
        assert_eq!(convert(1.2345, Quantity::Force, &u, &u).unwrap(), 1.2345);
    }

    #[test]
    fn unknown_quantity_is_reported() {
        let u = UnitSystem::argon_real();
        let err = convert_named(1.0, "viscosity", &u, &UnitSystem::argon_reduced()).unwrap_err();
        assert_eq!(err, UnitError::UnsupportedQuantity("viscosity".into()));
        assert!(err.to_string().contains("viscosity"));
    }

    #[test]
    fn mismatched_references_rejected() {
        let a = UnitSystem::argon_real();
        let b = UnitSystem::new(UnitKind::Reduced, 3.0, 0.01, 40.0).unwrap();
        assert_eq!(convert(1.0, Quantity::Length, &a, &b), Err(UnitError::MismatchedReference));
        assert!(UnitSystem::new(UnitKind::Real, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn mvv_constant() {
        assert!((MVV_TO_EV - 103.642_696_5).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn round_trip_every_quantity(x in -1e6f64..1e6, q in 0usize..7) {
            let q = [Quantity::Length, Quantity::Energy, Quantity::Time, Quantity::Density,
                     Quantity::Temperature, Quantity::Force, Quantity::Pressure][q];
            let real = UnitSystem::argon_real();
            let red = UnitSystem::argon_reduced();
            let back = convert(convert(x, q, &real, &red).unwrap(), q, &red, &real).unwrap();
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }
}
