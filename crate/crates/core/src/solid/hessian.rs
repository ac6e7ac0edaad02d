//! Central-difference Hessian from forces, symmetrization and the symmetricity score.

use crate::forcefield::{evaluate, ForceError, PairPotential};
use crate::md::{build_neighbor_list, NeighborError};
use crate::system::Configuration;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Default finite-difference displacement, Å.
pub const DEFAULT_DISPLACEMENT: f64 = 3.405e-6;

#[derive(Debug, thiserror::Error)]
pub enum HessianError {
    #[error("displacement must be positive and finite, got {0}")]
    BadDisplacement(f64),
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Neighbor(#[from] NeighborError),
    #[error("non-finite Hessian entry ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not square: {0} entries")]
    NotSquare(usize),
    #[error("symmetricity is undefined for the zero matrix")]
    ZeroMatrix,
    #[error("hessian file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianProvenance {
    pub model: String,
    pub displacement: f64,
    pub config_hash: String,
}

/// Dense 3N×3N matrix in eV/Å², row-major. Row index is the force component,
/// column index the displaced coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    dim: usize,
    data: Vec<f64>,
    provenance: Option<HessianProvenance>,
    symmetrized: bool,
}

impl HessianMatrix {
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self, HessianError> {
        if data.len() != dim * dim {
            return Err(HessianError::NotSquare(data.len()));
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(HessianError::NonFinite { row: k / dim.max(1), col: k % dim.max(1) });
        }
        Ok(Self { dim, data, provenance: None, symmetrized: false })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.dim).map(|r| self.get(r, col)).collect()
    }

    pub fn provenance(&self) -> Option<&HessianProvenance> {
        self.provenance.as_ref()
    }

    pub fn is_symmetrized(&self) -> bool {
        self.symmetrized
    }

    pub(crate) fn to_faer(&self) -> faer::Mat<f64> {
        faer::Mat::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// Writes `<stem>.bin` (little-endian f64, row-major) and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<(), HessianError> {
        let io = |e: std::io::Error| HessianError::Io(e.to_string());
        let mut bytes = Vec::with_capacity(self.data.len() * 8);
        for x in &self.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        std::fs::write(stem.with_extension("bin"), bytes).map_err(io)?;
        let header = HessianHeader {
            format: "f64-le-row-major".into(),
            dim: self.dim,
            units: "eV/A^2".into(),
            symmetrized: self.symmetrized,
            provenance: self.provenance.clone(),
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&header).expect("header serializes")).map_err(io)
    }

    pub fn load(stem: &Path) -> Result<Self, HessianError> {
        let io = |e: std::io::Error| HessianError::Io(e.to_string());
        let header: HessianHeader = serde_json::from_slice(&std::fs::read(stem.with_extension("json")).map_err(io)?)
            .map_err(|e| HessianError::Io(e.to_string()))?;
        if header.format != "f64-le-row-major" {
            return Err(HessianError::Io(format!("unsupported format {}", header.format)));
        }
        let bytes = std::fs::read(stem.with_extension("bin")).map_err(io)?;
        if bytes.len() != header.dim * header.dim * 8 {
            return Err(HessianError::Io(format!("expected {} bytes, found {}", header.dim * header.dim * 8, bytes.len())));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let mut h = Self::from_row_major(header.dim, data)?;
        h.provenance = header.provenance;
        h.symmetrized = header.symmetrized;
        Ok(h)
    }
}

#[derive(Serialize, Deserialize)]
struct HessianHeader {
    format: String,
    dim: usize,
    units: String,
    symmetrized: bool,
    provenance: Option<HessianProvenance>,
}

/// H_ij = [f_i(x_j − Δx) − f_i(x_j + Δx)] / (2Δx), one column per displaced
/// coordinate, columns computed in parallel.
pub fn numeric_hessian<M: PairPotential + ?Sized>(config: &Configuration, model: &M, dx: f64) -> Result<HessianMatrix, HessianError> {
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(HessianError::BadDisplacement(dx));
    }
    let n = config.len();
    let dim = 3 * n;
    // One list serves every probe: the skin covers the largest displacement.
    let skin = (4.0 * dx).max(1e-3);
    let list = build_neighbor_list(config, model.cutoff(), skin)?;
    let columns: Vec<Result<Vec<f64>, HessianError>> = crate::par::map_indices(dim, |col| {
        let (atom, axis) = (col / 3, col % 3);
        let mut probe = config.clone();
        let mut p = config.positions()[atom];
        p[axis] -= dx;
        probe.set_position(atom, p);
        let minus = evaluate(model, &probe, &list)?.forces;
        p[axis] += 2.0 * dx;
        probe.set_position(atom, p);
        let plus = evaluate(model, &probe, &list)?.forces;
        let mut out = Vec::with_capacity(dim);
        for (i, (fm, fp)) in minus.iter().zip(&plus).enumerate() {
            for k in 0..3 {
                let v = (fm[k] - fp[k]) / (2.0 * dx);
                if !v.is_finite() {
                    return Err(HessianError::NonFinite { row: 3 * i + k, col });
                }
                out.push(v);
            }
        }
        Ok(out)
    });
    let mut data = vec![0.0; dim * dim];
    for (col, c) in columns.into_iter().enumerate() {
        for (row, v) in c?.into_iter().enumerate() {
            data[row * dim + col] = v;
        }
    }
    Ok(HessianMatrix {
        dim,
        data,
        provenance: Some(HessianProvenance { model: model.label(), displacement: dx, config_hash: config.content_hash() }),
        symmetrized: false,
    })
}

/// (H + Hᵀ)/2.
pub fn symmetrize(h: &HessianMatrix) -> HessianMatrix {
    let d = h.dim;
    let mut data = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            data[i * d + j] = 0.5 * (h.get(i, j) + h.get(j, i));
        }
    }
    HessianMatrix { dim: d, data, provenance: h.provenance.clone(), symmetrized: true }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixNorm {
    /// Largest singular value.
    #[default]
    Spectral,
    Frobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetricityScore {
    pub value: f64,
    pub norm: MatrixNorm,
    pub symmetric_norm: f64,
    pub antisymmetric_norm: f64,
}

/// Dense SVD up to this size; power iteration above it.
const DENSE_NORM_LIMIT: usize = 1024;

fn spectral_norm(a: &faer::Mat<f64>) -> f64 {
    let n = a.nrows();
    if a.norm_max() == 0.0 {
        return 0.0;
    }
    if n <= DENSE_NORM_LIMIT {
        let sv = a.singular_values().expect("svd converges");
        return sv.iter().cloned().fold(0.0, f64::max);
    }
    // Power iteration on AᵀA with a fixed start vector for reproducibility.
    let mut v = faer::Mat::<f64>::from_fn(n, 1, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
    let nv = v.norm_l2();
    v = v * faer::Scale(1.0 / nv);
    let mut sigma = 0.0;
    for _ in 0..5000 {
        let w = a * &v;
        let z = a.transpose() * &w;
        let nz = z.norm_l2();
        if nz == 0.0 {
            return 0.0;
        }
        let next = nz.sqrt();
        v = z * faer::Scale(1.0 / nz);
        if (next - sigma).abs() <= 1e-13 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// (‖A_s‖ − ‖A_a‖)/(‖A_s‖ + ‖A_a‖) for the symmetric and antisymmetric parts.
pub fn symmetricity(h: &HessianMatrix, norm: MatrixNorm) -> Result<SymmetricityScore, HessianError> {
    symmetricity_dense(h.dim, &h.data, norm)
}

/// Same score for any row-major square matrix.
pub fn symmetricity_dense(dim: usize, data: &[f64], norm: MatrixNorm) -> Result<SymmetricityScore, HessianError> {
    if data.len() != dim * dim {
        return Err(HessianError::NotSquare(data.len()));
    }
    let at = |i: usize, j: usize| data[i * dim + j];
    let s = faer::Mat::from_fn(dim, dim, |i, j| 0.5 * (at(i, j) + at(j, i)));
    let a = faer::Mat::from_fn(dim, dim, |i, j| 0.5 * (at(i, j) - at(j, i)));
    let (ns, na) = match norm {
        MatrixNorm::Spectral => (spectral_norm(&s), spectral_norm(&a)),
        MatrixNorm::Frobenius => (s.norm_l2(), a.norm_l2()),
    };
    if ns + na == 0.0 {
        return Err(HessianError::ZeroMatrix);
    }
    Ok(SymmetricityScore { value: (ns - na) / (ns + na), norm, symmetric_norm: ns, antisymmetric_norm: na })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcefield::LennardJonesModel;
    use crate::system::SimulationCell;
    use crate::units::ARGON_MASS;
    use proptest::prelude::*;

    #[test]
    fn dimer_block_matches_curvature() {
        let m = LennardJonesModel::argon();
        let r0 = 2f64.powf(1.0 / 6.0) * m.sigma + 0.1;
        let cell = SimulationCell::cubic(40.0).unwrap();
        let c = Configuration::at_rest(vec![[10.0, 10.0, 10.0], [10.0 + r0, 10.0, 10.0]], ARGON_MASS, cell).unwrap();
        let h = numeric_hessian(&c, &m, DEFAULT_DISPLACEMENT).unwrap();
        let k = m.curvature(r0);
        for (row, col, want) in [(0, 0, k), (0, 3, -k), (3, 0, -k), (3, 3, k)] {
            assert!((h.get(row, col) - want).abs() < 1e-6 * k.abs(), "({row},{col}) {} vs {want}", h.get(row, col));
        }
    }

    #[test]
    fn column_recompute_is_bitwise() {
        let m = LennardJonesModel::argon();
        let c = crate::solid::build_fcc(3, 0.858, ARGON_MASS).unwrap();
        let a = numeric_hessian(&c, &m, DEFAULT_DISPLACEMENT).unwrap();
        let b = numeric_hessian(&c, &m, DEFAULT_DISPLACEMENT).unwrap();
        assert_eq!(a.column(37), b.column(37));
    }

    #[test]
    fn symmetrize_examples() {
        let h = HessianMatrix::from_row_major(2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(symmetrize(&h).data(), &[0.0, 0.5, 0.5, 0.0]);
        assert!(symmetrize(&h).is_symmetrized());
    }

    #[test]
    fn symmetricity_endpoints_and_mixture() {
        let s = HessianMatrix::from_row_major(2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(symmetricity(&s, MatrixNorm::Spectral).unwrap().value, 1.0);
        let k = HessianMatrix::from_row_major(2, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(symmetricity(&k, MatrixNorm::Spectral).unwrap().value, -1.0);
        // ‖S‖₂ = 1, ‖K‖₂ = 1, ε = 0.1.
        let mix = HessianMatrix::from_row_major(2, vec![1.0, 0.1, -0.1, 0.0]).unwrap();
        let v = symmetricity(&mix, MatrixNorm::Spectral).unwrap().value;
        assert!((v - 9.0 / 11.0).abs() < 1e-14, "{v}");
        let zero = HessianMatrix::from_row_major(2, vec![0.0; 4]).unwrap();
        assert!(matches!(symmetricity(&zero, MatrixNorm::Spectral), Err(HessianError::ZeroMatrix)));
    }

    #[test]
    fn power_iteration_matches_svd() {
        let n = DENSE_NORM_LIMIT + 8;
        let a = faer::Mat::from_fn(n, n, |i, j| (((i * 31 + j * 17) % 23) as f64 - 11.0) / 11.0);
        let sv = a.singular_values().unwrap().iter().cloned().fold(0.0, f64::max);
        assert!((spectral_norm(&a) - sv).abs() < 1e-8 * sv);
    }

    #[test]
    fn save_load_round_trip() {
        let m = LennardJonesModel::new(0.0103, 3.40, 5.5, false).unwrap();
        let c = crate::solid::build_fcc(2, 0.858, ARGON_MASS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let h = numeric_hessian(&c, &m, DEFAULT_DISPLACEMENT).unwrap();
        h.save(&dir.path().join("h")).unwrap();
        assert_eq!(HessianMatrix::load(&dir.path().join("h")).unwrap(), h);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn symmetrized_is_exactly_symmetric(v in proptest::collection::vec(-5.0f64..5.0, 36), c in 0.01f64..100.0) {
            let h = HessianMatrix::from_row_major(6, v.clone()).unwrap();
            let s = symmetrize(&h);
            for i in 0..6 { for j in 0..6 { prop_assert_eq!(s.get(i, j), s.get(j, i)); } }
            prop_assert_eq!(symmetricity(&s, MatrixNorm::Spectral).unwrap().value, 1.0);
            let scaled = HessianMatrix::from_row_major(6, v.iter().map(|x| x * c).collect()).unwrap();
            let a = symmetricity(&h, MatrixNorm::Spectral).unwrap().value;
            let b = symmetricity(&scaled, MatrixNorm::Spectral).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
