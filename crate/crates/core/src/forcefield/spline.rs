//! C¹ cubic Hermite spline on the scalar radial force f(r) = -dV/dr.

use super::PairPotential;
use serde::{Deserialize, Serialize};

pub const SPLINE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SplineError {
    #[error("need at least 4 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knots must be strictly ascending and positive")]
    KnotsNotAscending,
    #[error("fit window [{lo}, {hi}] must satisfy 0 < lo < hi <= cutoff = {cutoff}")]
    BadWindow { lo: f64, hi: f64, cutoff: f64 },
    #[error("expected {expected} coefficient rows, got {got}")]
    CoefficientCount { expected: usize, got: usize },
    #[error("unsupported spline format version {0} (this build reads version {SPLINE_FORMAT_VERSION})")]
    Version(u32),
    #[error("non-finite spline parameter")]
    NonFinite,
}

/// Behaviour below the first knot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    ClampToZero,
    #[default]
    Linear,
}

/// Knot placement inside the fit window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnotSpacing {
    Uniform,
    /// Uniform in r^(-power): knots crowd toward the steep short-range wall.
    InversePower { power: f64 },
}

impl Default for KnotSpacing {
    fn default() -> Self {
        KnotSpacing::InversePower { power: 1.5 }
    }
}

impl KnotSpacing {
    pub fn knots(&self, lo: f64, hi: f64, count: usize) -> Vec<f64> {
        let last = (count - 1) as f64;
        let mut k: Vec<f64> = match *self {
            KnotSpacing::Uniform => (0..count).map(|i| lo + (hi - lo) * i as f64 / last).collect(),
            KnotSpacing::InversePower { power } => {
                let (ulo, uhi) = (lo.powf(-power), hi.powf(-power));
                (0..count).map(|i| (ulo + (uhi - ulo) * i as f64 / last).powf(-1.0 / power)).collect()
            }
        };
        k[0] = lo;
        k[count - 1] = hi;
        k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineProvenance {
    pub dataset_hash: String,
    pub lambda: f64,
    pub loss: f64,
}

#[derive(Serialize, Deserialize)]
struct SplineDocument {
    version: u32,
    knots: Vec<f64>,
    /// Per interval, coefficients of f in powers of (r - r_k).
    coefficients: Vec<[f64; 4]>,
    fit_window: [f64; 2],
    cutoff: f64,
    extrapolation: Extrapolation,
    provenance: Option<SplineProvenance>,
}

/// Pair force model defined by a cubic spline on f(r); energies come from
/// integrating the force inward from the top of the fit window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineDocument", into = "SplineDocument")]
pub struct SplinePairModel {
    knots: Vec<f64>,
    coefficients: Vec<[f64; 4]>,
    cutoff: f64,
    extrapolation: Extrapolation,
    provenance: Option<SplineProvenance>,
    /// tail[k] = ∫ f from knot k to the last knot.
    tail: Vec<f64>,
}

impl TryFrom<SplineDocument> for SplinePairModel {
    type Error = SplineError;

    fn try_from(d: SplineDocument) -> Result<Self, SplineError> {
        if d.version != SPLINE_FORMAT_VERSION {
            return Err(SplineError::Version(d.version));
        }
        let mut m = Self::from_coefficients(d.knots, d.coefficients, d.cutoff, d.extrapolation)?;
        if m.fit_window() != d.fit_window {
            return Err(SplineError::BadWindow { lo: d.fit_window[0], hi: d.fit_window[1], cutoff: d.cutoff });
        }
        m.provenance = d.provenance;
        Ok(m)
    }
}

impl From<SplinePairModel> for SplineDocument {
    fn from(m: SplinePairModel) -> Self {
        SplineDocument {
            version: SPLINE_FORMAT_VERSION,
            fit_window: m.fit_window(),
            knots: m.knots,
            coefficients: m.coefficients,
            cutoff: m.cutoff,
            extrapolation: m.extrapolation,
            provenance: m.provenance,
        }
    }
}

#[inline]
fn antiderivative(c: &[f64; 4], x: f64) -> f64 {
    x * (c[0] + x * (c[1] / 2.0 + x * (c[2] / 3.0 + x * c[3] / 4.0)))
}

impl SplinePairModel {
    pub fn from_coefficients(
        knots: Vec<f64>,
        coefficients: Vec<[f64; 4]>,
        cutoff: f64,
        extrapolation: Extrapolation,
    ) -> Result<Self, SplineError> {
        if knots.len() < 4 {
            return Err(SplineError::TooFewKnots(knots.len()));
        }
        if !(knots[0] > 0.0) || knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SplineError::KnotsNotAscending);
        }
        let (lo, hi) = (knots[0], knots[knots.len() - 1]);
        if !(hi <= cutoff) {
            return Err(SplineError::BadWindow { lo, hi, cutoff });
        }
        if coefficients.len() != knots.len() - 1 {
            return Err(SplineError::CoefficientCount { expected: knots.len() - 1, got: coefficients.len() });
        }
        if coefficients.iter().flatten().any(|c| !c.is_finite()) {
            return Err(SplineError::NonFinite);
        }
        let mut tail = vec![0.0; knots.len()];
        for k in (0..coefficients.len()).rev() {
            tail[k] = tail[k + 1] + antiderivative(&coefficients[k], knots[k + 1] - knots[k]);
        }
        Ok(Self { knots, coefficients, cutoff, extrapolation, provenance: None, tail })
    }

    /// Builds the spline from knot values f_k and slopes f'_k.
    pub fn from_hermite(
        knots: Vec<f64>,
        values: &[f64],
        slopes: &[f64],
        cutoff: f64,
        extrapolation: Extrapolation,
    ) -> Result<Self, SplineError> {
        let k = knots.len();
        if values.len() != k || slopes.len() != k {
            return Err(SplineError::CoefficientCount { expected: k, got: values.len().min(slopes.len()) });
        }
        let coefficients = (0..k.saturating_sub(1))
            .map(|i| {
                let h = knots[i + 1] - knots[i];
                let (f0, f1, d0, d1) = (values[i], values[i + 1], slopes[i], slopes[i + 1]);
                [f0, d0, (3.0 * (f1 - f0) / h - 2.0 * d0 - d1) / h, (2.0 * (f0 - f1) / h + d0 + d1) / (h * h)]
            })
            .collect();
        Self::from_coefficients(knots, coefficients, cutoff, extrapolation)
    }

    /// Hermite basis weights of f(r) with respect to the parameter vector
    /// [f_0, f'_0, f_1, f'_1, ...]. Empty outside the support.
    pub(crate) fn basis(knots: &[f64], extrapolation: Extrapolation, r: f64, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let (lo, hi) = (knots[0], knots[knots.len() - 1]);
        if r >= hi {
            return;
        }
        if r < lo {
            if extrapolation == Extrapolation::Linear {
                out.push((0, 1.0));
                out.push((1, r - lo));
            }
            return;
        }
        let k = interval_of(knots, r);
        let h = knots[k + 1] - knots[k];
        let t = (r - knots[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        out.push((2 * k, 2.0 * t3 - 3.0 * t2 + 1.0));
        out.push((2 * k + 1, h * (t3 - 2.0 * t2 + t)));
        out.push((2 * k + 2, -2.0 * t3 + 3.0 * t2));
        out.push((2 * k + 3, h * (t3 - t2)));
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn coefficients(&self) -> &[[f64; 4]] {
        &self.coefficients
    }

    pub fn fit_window(&self) -> [f64; 2] {
        [self.knots[0], self.knots[self.knots.len() - 1]]
    }

    pub fn extrapolation(&self) -> Extrapolation {
        self.extrapolation
    }

    pub fn provenance(&self) -> Option<&SplineProvenance> {
        self.provenance.as_ref()
    }

    pub fn set_provenance(&mut self, p: SplineProvenance) {
        self.provenance = Some(p);
    }

    /// Scalar radial force at r (positive = repulsive).
    pub fn force(&self, r: f64) -> f64 {
        let [lo, hi] = self.fit_window();
        if r >= hi || r >= self.cutoff {
            return 0.0;
        }
        if r < lo {
            return match self.extrapolation {
                Extrapolation::ClampToZero => 0.0,
                Extrapolation::Linear => self.coefficients[0][0] + self.coefficients[0][1] * (r - lo),
            };
        }
        let k = interval_of(&self.knots, r);
        let c = &self.coefficients[k];
        let x = r - self.knots[k];
        c[0] + x * (c[1] + x * (c[2] + x * c[3]))
    }

    /// V(r) = ∫_r^cutoff f(s) ds.
    pub fn energy(&self, r: f64) -> f64 {
        let [lo, hi] = self.fit_window();
        if r >= hi {
            return 0.0;
        }
        if r < lo {
            let c = &self.coefficients[0];
            let u = r - lo;
            return match self.extrapolation {
                Extrapolation::ClampToZero => self.tail[0],
                Extrapolation::Linear => self.tail[0] - c[0] * u - c[1] * u * u / 2.0,
            };
        }
        let k = interval_of(&self.knots, r);
        let c = &self.coefficients[k];
        let h = self.knots[k + 1] - self.knots[k];
        antiderivative(c, h) - antiderivative(c, r - self.knots[k]) + self.tail[k + 1]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spline serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[inline]
fn interval_of(knots: &[f64], r: f64) -> usize {
    (knots.partition_point(|&k| k <= r).max(1) - 1).min(knots.len() - 2)
}

impl PairPotential for SplinePairModel {
    fn cutoff(&self) -> f64 {
        self.cutoff
    }

    #[inline]
    fn pair_r2(&self, r2: f64) -> (f64, f64) {
        let r = r2.sqrt();
        if r >= self.fit_window()[1] {
            return (0.0, 0.0);
        }
        (self.energy(r), self.force(r) / r)
    }

    fn label(&self) -> String {
        let [lo, hi] = self.fit_window();
        format!("spline({} knots, window [{lo:.3}, {hi:.3}])", self.knots.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forcefield::{lj_pair, LennardJonesModel};

    fn lj_spline(k: usize, spacing: KnotSpacing) -> SplinePairModel {
        let lj = LennardJonesModel::argon();
        let knots = spacing.knots(3.0, 8.5, k);
        // Untruncated force so the top knot sees the smooth curve.
        let force = |r: f64| {
            let s6 = (lj.sigma / r).powi(6);
            24.0 * lj.epsilon * (2.0 * s6 * s6 - s6) / r
        };
        let vals: Vec<f64> = knots.iter().map(|&r| force(r)).collect();
        let slopes: Vec<f64> = knots.iter().map(|&r| -lj.curvature(r)).collect();
        SplinePairModel::from_hermite(knots, &vals, &slopes, 8.5, Extrapolation::Linear).unwrap()
    }

    #[test]
    fn reproduces_cubic_exactly() {
        let f = |r: f64| 0.3 - 0.2 * r + 0.05 * r * r - 0.002 * r * r * r;
        let df = |r: f64| -0.2 + 0.1 * r - 0.006 * r * r;
        let knots = KnotSpacing::Uniform.knots(2.0, 8.0, 7);
        let v: Vec<f64> = knots.iter().map(|&r| f(r)).collect();
        let d: Vec<f64> = knots.iter().map(|&r| df(r)).collect();
        let s = SplinePairModel::from_hermite(knots, &v, &d, 8.0, Extrapolation::Linear).unwrap();
        for i in 0..100 {
            let r = 2.0 + 5.99 * i as f64 / 99.0;
            assert!((s.force(r) - f(r)).abs() < 1e-12);
        }
        assert_eq!(s.force(8.0), 0.0);
        // Linear continuation below the window.
        assert!((s.force(1.5) - (f(2.0) - 0.5 * df(2.0))).abs() < 1e-12);
    }

    #[test]
    fn continuity_at_interior_knots() {
        let s = lj_spline(16, KnotSpacing::Uniform);
        for &k in &s.knots()[1..s.knots().len() - 1] {
            let e = 1e-9;
            assert!((s.force(k - e) - s.force(k + e)).abs() < 1e-6);
            let dl = (s.force(k - e) - s.force(k - 2.0 * e)) / e;
            let dr = (s.force(k + 2.0 * e) - s.force(k + e)) / e;
            assert!((dl - dr).abs() < 1e-3 * dl.abs().max(1.0), "slope jump at {k}");
        }
    }

    #[test]
    fn energy_is_integral_of_force() {
        let s = lj_spline(20, KnotSpacing::default());
        for r in [2.5, 3.1, 3.7, 4.4, 6.0, 8.0] {
            let h = 1e-6;
            let fd = -(s.energy(r + h) - s.energy(r - h)) / (2.0 * h);
            assert!((fd - s.force(r)).abs() < 1e-6, "r={r}");
        }
        assert_eq!(s.energy(8.6), 0.0);
    }

    #[test]
    fn crowded_knots_track_lj_closely() {
        let lj = LennardJonesModel::argon();
        let s = lj_spline(24, KnotSpacing::default());
        let worst = (0..=460)
            .map(|i| 3.4 + 4.6 * i as f64 / 460.0)
            .map(|r| (s.force(r) - lj_pair(r, &lj).unwrap().1).abs())
            .fold(0.0, f64::max);
        assert!(worst < 2e-4, "interpolation error {worst}");
    }

    #[test]
    fn json_round_trip() {
        let mut s = lj_spline(10, KnotSpacing::Uniform);
        s.set_provenance(SplineProvenance { dataset_hash: "abc".into(), lambda: 0.01, loss: 1e-4 });
        let back = SplinePairModel::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
        let bad = s.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(SplinePairModel::from_json(&bad).unwrap_err().to_string().contains("version 9"));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(
            SplinePairModel::from_hermite(vec![1.0, 2.0, 3.0], &[0.0; 3], &[0.0; 3], 5.0, Extrapolation::Linear),
            Err(SplineError::TooFewKnots(3))
        );
        assert_eq!(
            SplinePairModel::from_hermite(vec![1.0, 2.0, 2.0, 3.0], &[0.0; 4], &[0.0; 4], 5.0, Extrapolation::Linear),
            Err(SplineError::KnotsNotAscending)
        );
        assert!(matches!(
            SplinePairModel::from_hermite(vec![1.0, 2.0, 3.0, 6.0], &[0.0; 4], &[0.0; 4], 5.0, Extrapolation::Linear),
            Err(SplineError::BadWindow { .. })
        ));
    }

    #[test]
    fn clamp_policy_zero_below_window() {
        let knots = KnotSpacing::Uniform.knots(3.0, 8.0, 6);
        let s = SplinePairModel::from_hermite(knots, &[1.0; 6], &[0.0; 6], 8.0, Extrapolation::ClampToZero).unwrap();
        assert_eq!(s.force(2.0), 0.0);
        assert_eq!(s.energy(2.0), s.energy(3.0));
    }
}
