//! Gaussian-sum X-ray form factors.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const BUILTIN: &str = include_str!("../../data/form_factors.toml");

#[derive(Debug, thiserror::Error)]
pub enum FormFactorError {
    #[error("form factor table: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("species `{0}` missing from form factor table")]
    Missing(String),
    #[error("species `{species}`: a and b have {a} and {b} entries")]
    Shape { species: String, a: usize, b: usize },
}

/// f(q) = Σ a_i exp(−b_i (q/4π)²) + c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFormFactor {
    #[serde(default)]
    pub electrons: Option<u32>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl GaussianFormFactor {
    pub fn eval(&self, q: f64) -> f64 {
        let s2 = (q / (4.0 * std::f64::consts::PI)).powi(2);
        self.a.iter().zip(&self.b).map(|(a, b)| a * (-b * s2).exp()).sum::<f64>() + self.c
    }

    /// f ≡ value at every q.
    pub fn constant(value: f64) -> Self {
        Self { electrons: None, a: Vec::new(), b: Vec::new(), c: value }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FormFactorTable {
    entries: BTreeMap<String, GaussianFormFactor>,
}

impl FormFactorTable {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN).expect("bundled table parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, FormFactorError> {
        let t: FormFactorTable = toml::from_str(text)?;
        for (k, v) in &t.entries {
            if v.a.len() != v.b.len() {
                return Err(FormFactorError::Shape { species: k.clone(), a: v.a.len(), b: v.b.len() });
            }
        }
        Ok(t)
    }

    pub fn get(&self, symbol: &str) -> Result<&GaussianFormFactor, FormFactorError> {
        self.entries.get(symbol).ok_or_else(|| FormFactorError::Missing(symbol.to_string()))
    }

    /// Factors indexed by species id, one symbol per id.
    pub fn for_species(&self, symbols: &[&str]) -> Result<Vec<GaussianFormFactor>, FormFactorError> {
        symbols.iter().map(|s| self.get(s).cloned()).collect()
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_scattering_counts_electrons() {
        let t = FormFactorTable::builtin();
        for s in t.symbols() {
            let f = t.get(s).unwrap();
            assert!((f.eval(0.0) - f.electrons.unwrap() as f64).abs() < 2e-3, "{s}: {}", f.eval(0.0));
        }
        assert!(t.get("Xe").is_err());
    }

    #[test]
    fn decreasing_in_q() {
        let f = FormFactorTable::builtin().get("Ar").unwrap().clone();
        assert!(f.eval(2.0) < f.eval(1.0) && f.eval(1.0) < f.eval(0.0));
    }
}
