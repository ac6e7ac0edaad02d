//! Computational XPCS/XSVS: speckle series, g2, finite-pulse contrast and decay rates.

use crate::dynamics::{autocorrelation, linear_fit};
use crate::structure::{q_from_indices, weighted_intensities, GaussianFormFactor, StructureError};
use crate::system::{norm2, SimulationCell, Trajectory, Vec3};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Smallest q-bin center and bin spacing, Å⁻¹.
pub const DEFAULT_BIN_SPACING: f64 = 0.461;
pub const DEFAULT_BIN_HALF_WIDTH: f64 = 0.029;
/// Incident wavevector magnitude 2π/λ for λ = 1 Å.
pub const DEFAULT_K_IN: f64 = 2.0 * std::f64::consts::PI;
pub const DEFAULT_Q_COVERAGE: f64 = 2.0;
pub const DEFAULT_EARLY_EXCLUSION_PS: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum XpcsError {
    #[error("detector needs at least one pixel per side")]
    EmptyDetector,
    #[error("coverage {q} Å⁻¹ is unreachable with |k_in| = {k_in} Å⁻¹")]
    Coverage { q: f64, k_in: f64 },
    #[error("q bin [{lo:.4}, {hi:.4}] Å⁻¹ holds {found} pixels, need 2; nearest populated |q|: {nearest:?}")]
    EmptyBin { lo: f64, hi: f64, found: usize, nearest: Vec<f64> },
    #[error("series needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("pulse width {width} ps must lie between the frame interval {dt} ps and the span {span} ps")]
    BadPulse { width: f64, dt: f64, span: f64 },
    #[error("max lag {max_lag} ps exceeds series span {span} ps")]
    LagTooLong { max_lag: f64, span: f64 },
    #[error("decay fit has {0} usable points beyond the early exclusion, need 5")]
    TooFewPoints(usize),
    #[error("contrast never falls to half its initial value within {max} ps")]
    NoCrossing { max: f64 },
    #[error("trajectory cell changes; speckles need a fixed cell")]
    CellChanged,
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("speckle file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QBin {
    pub center: f64,
    pub half_width: f64,
}

impl QBin {
    pub fn new(center: f64, half_width: f64) -> Self {
        Self { center, half_width }
    }

    pub fn contains(&self, q: f64) -> bool {
        (q - self.center).abs() <= self.half_width
    }
}

/// Centers at k·0.461 Å⁻¹ (k = 1..=4) with half-width 0.029 Å⁻¹.
pub fn default_bins() -> Vec<QBin> {
    (1..=4).map(|k| QBin::new(k as f64 * DEFAULT_BIN_SPACING, DEFAULT_BIN_HALF_WIDTH)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub ix: usize,
    pub iy: usize,
    /// Ideal Ewald-sphere q before snapping.
    pub q_nominal: Vec3,
    pub hkl: [i32; 3],
    /// Snapped q used for scattering.
    pub q: Vec3,
    pub q_mag: f64,
}

/// Square angular patch of the Ewald sphere, pixels snapped to the cell's reciprocal grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSlice {
    pub nx: usize,
    pub ny: usize,
    /// Zero for slices built from explicit q vectors.
    pub k_in: f64,
    pub half_angle: f64,
    pub pixels: Vec<Pixel>,
}

impl DetectorSlice {
    /// Incident beam along +z; the patch spans ±half_angle in two angles so that
    /// its corners scatter at |q| = `q_coverage`.
    pub fn new(cell: &SimulationCell, nx: usize, ny: usize, k_in: f64, q_coverage: f64) -> Result<Self, XpcsError> {
        if nx == 0 || ny == 0 {
            return Err(XpcsError::EmptyDetector);
        }
        if !(q_coverage > 0.0 && q_coverage < 2.0 * k_in) {
            return Err(XpcsError::Coverage { q: q_coverage, k_in });
        }
        // Corner scattering angle θ satisfies cos θ = cos²A.
        let theta = 2.0 * (q_coverage / (2.0 * k_in)).asin();
        let half_angle = theta.cos().sqrt().acos();
        let l = cell.lengths();
        let ang = |i: usize, n: usize| if n == 1 { 0.0 } else { -half_angle + 2.0 * half_angle * i as f64 / (n - 1) as f64 };
        let mut pixels = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let (a, b) = (ang(ix, nx), ang(iy, ny));
                let k_out = [k_in * a.sin() * b.cos(), k_in * b.sin(), k_in * a.cos() * b.cos()];
                let q_nominal = [k_out[0], k_out[1], k_out[2] - k_in];
                let mut hkl = [0i32; 3];
                for d in 0..3 {
                    hkl[d] = (q_nominal[d] * l[d] / (2.0 * std::f64::consts::PI)).round() as i32;
                }
                let q = q_from_indices(cell, hkl);
                pixels.push(Pixel { ix, iy, q_nominal, hkl, q, q_mag: norm2(q).sqrt() });
            }
        }
        Ok(Self { nx, ny, k_in, half_angle, pixels })
    }

    /// 81×81 pixels, λ = 1 Å, corners at 2.0 Å⁻¹.
    pub fn standard(cell: &SimulationCell) -> Result<Self, XpcsError> {
        Self::new(cell, 81, 81, DEFAULT_K_IN, DEFAULT_Q_COVERAGE)
    }

    /// Keeps only pixels that fall in one of `bins`.
    pub fn restricted_to(&self, bins: &[QBin]) -> Self {
        let pixels = self.pixels.iter().filter(|p| bins.iter().any(|b| b.contains(p.q_mag))).cloned().collect();
        Self { pixels, ..self.clone() }
    }

    /// Pixels with exactly these q vectors, for tests and custom geometries.
    pub fn from_q_vectors(cell: &SimulationCell, q: &[Vec3]) -> Result<Self, XpcsError> {
        let idx = crate::structure::commensurate_indices(cell, q)?;
        let pixels = idx
            .iter()
            .zip(q)
            .enumerate()
            .map(|(i, (hkl, q))| Pixel { ix: i, iy: 0, q_nominal: *q, hkl: *hkl, q: *q, q_mag: norm2(*q).sqrt() })
            .collect();
        Ok(Self { nx: q.len(), ny: 1, k_in: 0.0, half_angle: 0.0, pixels })
    }
}

/// I(pixel, frame), frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeckleSeries {
    intensities: Vec<f64>,
    frames: usize,
    frame_interval_fs: f64,
    slice: DetectorSlice,
}

#[derive(Serialize, Deserialize)]
struct SpeckleHeader {
    format: String,
    frames: usize,
    pixels: usize,
    frame_interval_fs: f64,
    slice: DetectorSlice,
}

impl SpeckleSeries {
    pub fn new(intensities: Vec<f64>, frames: usize, frame_interval_fs: f64, slice: DetectorSlice) -> Result<Self, XpcsError> {
        if frames < 2 {
            return Err(XpcsError::TooFewFrames(frames));
        }
        assert_eq!(intensities.len(), frames * slice.pixels.len(), "intensity array shape");
        Ok(Self { intensities, frames, frame_interval_fs, slice })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn pixels(&self) -> usize {
        self.slice.pixels.len()
    }

    pub fn slice(&self) -> &DetectorSlice {
        &self.slice
    }

    pub fn frame_interval_ps(&self) -> f64 {
        self.frame_interval_fs * 1e-3
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let p = self.pixels();
        &self.intensities[t * p..(t + 1) * p]
    }

    pub fn pixel_series(&self, pixel: usize) -> Vec<f64> {
        (0..self.frames).map(|t| self.intensities[t * self.pixels() + pixel]).collect()
    }

    pub fn span_ps(&self) -> f64 {
        (self.frames - 1) as f64 * self.frame_interval_ps()
    }

    /// Frames in reverse order.
    pub fn reversed(&self) -> Self {
        let mut out = Vec::with_capacity(self.intensities.len());
        for t in (0..self.frames).rev() {
            out.extend_from_slice(self.frame(t));
        }
        Self { intensities: out, ..self.clone() }
    }

    /// Indices of pixels whose |q| lies in `bin`.
    pub fn pixels_in(&self, bin: QBin) -> Result<Vec<usize>, XpcsError> {
        let idx: Vec<usize> = (0..self.pixels()).filter(|&i| bin.contains(self.slice.pixels[i].q_mag)).collect();
        if idx.len() < 2 {
            let mut qs: Vec<f64> = self.slice.pixels.iter().map(|p| p.q_mag).collect();
            qs.sort_by(|a, b| (a - bin.center).abs().total_cmp(&(b - bin.center).abs()));
            qs.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            qs.truncate(3);
            return Err(XpcsError::EmptyBin { lo: bin.center - bin.half_width, hi: bin.center + bin.half_width, found: idx.len(), nearest: qs });
        }
        Ok(idx)
    }

    /// Writes `<stem>.bin` (little-endian f64, frame-major) and a JSON header.
    pub fn save(&self, stem: &Path) -> Result<(), XpcsError> {
        let io = |e: std::io::Error| XpcsError::Io(e.to_string());
        let bytes: Vec<u8> = self.intensities.iter().flat_map(|x| x.to_le_bytes()).collect();
        std::fs::write(stem.with_extension("bin"), bytes).map_err(io)?;
        let header = SpeckleHeader {
            format: "f64-le-frame-major".into(),
            frames: self.frames,
            pixels: self.pixels(),
            frame_interval_fs: self.frame_interval_fs,
            slice: self.slice.clone(),
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_vec(&header).expect("header serializes")).map_err(io)
    }

    pub fn load(stem: &Path) -> Result<Self, XpcsError> {
        let io = |e: std::io::Error| XpcsError::Io(e.to_string());
        let h: SpeckleHeader =
            serde_json::from_slice(&std::fs::read(stem.with_extension("json")).map_err(io)?).map_err(|e| XpcsError::Io(e.to_string()))?;
        let bytes = std::fs::read(stem.with_extension("bin")).map_err(io)?;
        if bytes.len() != h.frames * h.pixels * 8 || h.slice.pixels.len() != h.pixels {
            return Err(XpcsError::Io("payload size does not match header".into()));
        }
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Self::new(data, h.frames, h.frame_interval_fs, h.slice)
    }
}

/// Per frame and pixel, the form-factor weighted S(q).
pub fn compute_speckles(traj: &Trajectory, slice: &DetectorSlice, factors: &[GaussianFormFactor]) -> Result<SpeckleSeries, XpcsError> {
    traj.require_fixed_cell().map_err(|_| XpcsError::CellChanged)?;
    // Validates commensurability and species coverage once.
    let qv: Vec<Vec3> = slice.pixels.iter().map(|p| p.q).collect();
    crate::structure::structure_factor_weighted(&traj.frames()[0], &qv[..qv.len().min(1)], factors)?;
    let hkl: Vec<[i32; 3]> = slice.pixels.iter().map(|p| p.hkl).collect();
    let qmag: Vec<f64> = slice.pixels.iter().map(|p| p.q_mag).collect();
    let per_frame: Vec<Vec<f64>> = crate::par::map_slice(traj.frames(), |f| weighted_intensities(f, &hkl, &qmag, factors));
    SpeckleSeries::new(per_frame.concat(), traj.len(), traj.frame_interval_fs(), slice.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Curve {
    pub bin: QBin,
    pub lags_ps: Vec<f64>,
    pub g2: Vec<f64>,
    pub pixels: usize,
}

impl G2Curve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_ps,g2\n");
        for (t, g) in self.lags_ps.iter().zip(&self.g2) {
            let _ = writeln!(s, "{t},{g}");
        }
        s
    }
}

/// ⟨I(t)I(t+τ)⟩_t / ⟨I⟩_t² per pixel, averaged over the pixels in `bin`.
/// Assumes a stationary series.
pub fn g2(series: &SpeckleSeries, bin: QBin, max_lag_ps: f64) -> Result<G2Curve, XpcsError> {
    let span = series.span_ps();
    if max_lag_ps < 0.0 || max_lag_ps > span * (1.0 + 1e-12) {
        return Err(XpcsError::LagTooLong { max_lag: max_lag_ps, span });
    }
    let idx = series.pixels_in(bin)?;
    let nf = series.frames();
    let max_lag = ((max_lag_ps / series.frame_interval_ps()) + 1e-9).floor() as usize;
    let size = (2 * nf).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let per_pixel: Vec<Vec<f64>> = crate::par::map_slice(&idx, |&p| {
        let x = series.pixel_series(p);
        let mean = x.iter().sum::<f64>() / nf as f64;
        let mut buf = Vec::with_capacity(size);
        let ac = autocorrelation(&x, fft.as_ref(), ifft.as_ref(), &mut buf);
        (0..=max_lag)
            .map(|m| if mean == 0.0 { 1.0 } else { ac[m] / (nf - m) as f64 / (mean * mean) })
            .collect()
    });
    let mut g = vec![0.0; max_lag + 1];
    for p in &per_pixel {
        for (a, b) in g.iter_mut().zip(p) {
            *a += b;
        }
    }
    g.iter_mut().for_each(|v| *v /= idx.len() as f64);
    Ok(G2Curve { bin, lags_ps: (0..=max_lag).map(|m| m as f64 * series.frame_interval_ps()).collect(), g2: g, pixels: idx.len() })
}

/// Non-overlapping window sums of `width_ps`/frame-interval frames (snapped to an integer).
pub fn pulse_integrate(series: &SpeckleSeries, width_ps: f64) -> Result<SpeckleSeries, XpcsError> {
    let dt = series.frame_interval_ps();
    let w = (width_ps / dt).round() as usize;
    if w == 0 || width_ps > series.frames() as f64 * dt * (1.0 + 1e-12) {
        return Err(XpcsError::BadPulse { width: width_ps, dt, span: series.frames() as f64 * dt });
    }
    let windows = series.frames() / w;
    let np = series.pixels();
    let mut out = vec![0.0; windows * np];
    for k in 0..windows {
        for t in k * w..(k + 1) * w {
            for (o, v) in out[k * np..(k + 1) * np].iter_mut().zip(series.frame(t)) {
                *o += v;
            }
        }
    }
    Ok(SpeckleSeries {
        intensities: out,
        frames: windows,
        frame_interval_fs: series.frame_interval_fs * w as f64,
        slice: series.slice.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastCurve {
    pub bin: QBin,
    pub widths_ps: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ContrastCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("delta_tau_ps,beta\n");
        for (t, b) in self.widths_ps.iter().zip(&self.beta) {
            let _ = writeln!(s, "{t},{b}");
        }
        s
    }
}

/// Spatial speckle contrast var/mean² over the bin's pixels, per integration window,
/// averaged over windows. Widths are snapped to whole frames.
pub fn beta_delta(series: &SpeckleSeries, bin: QBin, widths_ps: &[f64]) -> Result<ContrastCurve, XpcsError> {
    let idx = series.pixels_in(bin)?;
    let mut widths = Vec::with_capacity(widths_ps.len());
    let mut beta = Vec::with_capacity(widths_ps.len());
    for &w in widths_ps {
        let s = pulse_integrate(series, w)?;
        let per_window: Vec<f64> = (0..s.frames())
            .map(|t| {
                let f = s.frame(t);
                let n = idx.len() as f64;
                let mean = idx.iter().map(|&p| f[p]).sum::<f64>() / n;
                let var = idx.iter().map(|&p| (f[p] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                if mean == 0.0 {
                    0.0
                } else {
                    var / (mean * mean)
                }
            })
            .collect();
        widths.push(s.frame_interval_ps());
        beta.push(per_window.iter().sum::<f64>() / per_window.len() as f64);
    }
    Ok(ContrastCurve { bin, widths_ps: widths, beta })
}

/// g2(q, 0) − 1 averaged over the bin's pixels.
pub fn beta_zero(series: &SpeckleSeries, bin: QBin) -> Result<f64, XpcsError> {
    Ok(g2(series, bin, 0.0)?.g2[0] - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// 1/ps.
    pub gamma_per_ps: f64,
    pub gamma_stderr: f64,
    pub q: f64,
    pub window_ps: [f64; 2],
    pub points: usize,
    /// R² of the log-linear fit.
    pub goodness: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFitOptions {
    pub early_exclusion_ps: f64,
    /// Window ends where g2 − 1 falls below this fraction of g2(0) − 1.
    pub noise_floor: f64,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        Self { early_exclusion_ps: DEFAULT_EARLY_EXCLUSION_PS, noise_floor: 0.1 }
    }
}

/// Fits log(g2 − 1) = c − 2Γτ beyond the early exclusion.
pub fn fit_decay(curve: &G2Curve, opts: DecayFitOptions) -> Result<DecayFit, XpcsError> {
    let floor = opts.noise_floor * (curve.g2[0] - 1.0);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (&t, &g) in curve.lags_ps.iter().zip(&curve.g2) {
        if t < opts.early_exclusion_ps - 1e-12 {
            continue;
        }
        let v = g - 1.0;
        if v < floor {
            break;
        }
        if v > 0.0 {
            x.push(t);
            y.push(v.ln());
        }
    }
    if x.len() < 5 {
        return Err(XpcsError::TooFewPoints(x.len()));
    }
    let (a, b, se) = linear_fit(&x, &y);
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&y).map(|(t, v)| (v - a - b * t).powi(2)).sum();
    Ok(DecayFit {
        gamma_per_ps: -b / 2.0,
        gamma_stderr: se / 2.0,
        q: curve.bin.center,
        window_ps: [x[0], *x.last().unwrap()],
        points: x.len(),
        goodness: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTime {
    pub tau_ps: f64,
    /// Spacing of the Δτ grid around the crossing.
    pub resolution_ps: f64,
}

/// Pulse width at which β_Δ/β_Δ(first width) crosses 0.5, by linear interpolation.
pub fn correlation_time(curve: &ContrastCurve) -> Result<CorrelationTime, XpcsError> {
    let b0 = curve.beta[0];
    let norm: Vec<f64> = curve.beta.iter().map(|b| b / b0).collect();
    for k in 1..norm.len() {
        if norm[k] <= 0.5 {
            let (t0, t1) = (curve.widths_ps[k - 1], curve.widths_ps[k]);
            let (y0, y1) = (norm[k - 1], norm[k]);
            let tau = t0 + (0.5 - y0) * (t1 - t0) / (y1 - y0);
            return Ok(CorrelationTime { tau_ps: tau, resolution_ps: t1 - t0 });
        }
    }
    Err(XpcsError::NoCrossing { max: *curve.widths_ps.last().unwrap_or(&0.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{commensurate_vectors, FormFactorTable};
    use crate::system::Configuration;
    use crate::units::ARGON_MASS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    fn toy_slice(pixels: usize) -> DetectorSlice {
        let cell = SimulationCell::cubic(10.0).unwrap();
        let q: Vec<Vec3> = (0..pixels).map(|i| q_from_indices(&cell, [3, i as i32 % 3, 0])).collect();
        DetectorSlice::from_q_vectors(&cell, &q).unwrap()
    }

    fn synthetic(frames: usize, pixels: usize, dt_fs: f64, f: impl Fn(usize, usize) -> f64) -> SpeckleSeries {
        let mut v = Vec::new();
        for t in 0..frames {
            for p in 0..pixels {
                v.push(f(t, p));
            }
        }
        SpeckleSeries::new(v, frames, dt_fs, toy_slice(pixels)).unwrap()
    }

    fn bin() -> QBin {
        QBin::new(2.0 * std::f64::consts::PI * 3.0 / 10.0, 0.2)
    }

    fn random_traj(n: usize, frames: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = SimulationCell::cubic(12.0).unwrap();
        let fr = (0..frames)
            .map(|k| {
                let pos = (0..n).map(|_| [rng.gen::<f64>() * 12.0, rng.gen::<f64>() * 12.0, rng.gen::<f64>() * 12.0]).collect();
                let mut c = Configuration::at_rest(pos, ARGON_MASS, cell).unwrap();
                c.set_time_ps(k as f64 * 0.1);
                c
            })
            .collect();
        Trajectory::new(fr, 100.0).unwrap()
    }

    #[test]
    fn slice_geometry() {
        let cell = SimulationCell::cubic(57.1).unwrap();
        let s = DetectorSlice::standard(&cell).unwrap();
        assert_eq!(s.pixels.len(), 81 * 81);
        let corner = s.pixels.iter().map(|p| norm2(p.q_nominal).sqrt()).fold(0.0, f64::max);
        assert!((corner - 2.0).abs() < 1e-9);
        let r = s.restricted_to(&[QBin::new(1.844, 0.029)]);
        assert!(!r.pixels.is_empty() && r.pixels.iter().all(|p| (p.q_mag - 1.844).abs() <= 0.029));
        let center = &s.pixels[40 * 81 + 40];
        assert_eq!(center.hkl, [0, 0, 0]);
    }

    #[test]
    fn speckles_match_double_sum() {
        let t = random_traj(32, 5, 1);
        let cell = *t.frames()[0].cell();
        let qs: Vec<Vec3> = commensurate_vectors(&cell, 1.3).into_iter().take(9).collect();
        let slice = DetectorSlice::from_q_vectors(&cell, &qs).unwrap();
        let f = FormFactorTable::builtin().for_species(&["Ar"]).unwrap();
        let s = compute_speckles(&t, &slice, &f).unwrap();
        for (k, frame) in t.frames().iter().enumerate() {
            let p = frame.positions();
            for (i, q) in qs.iter().enumerate() {
                let mut re = 0.0;
                let mut im = 0.0;
                for r in p {
                    let ph = q[0] * r[0] + q[1] * r[1] + q[2] * r[2];
                    re += ph.cos();
                    im -= ph.sin();
                }
                let want = (re * re + im * im) / p.len() as f64;
                assert!((s.frame(k)[i] - want).abs() < 1e-10);
            }
            let direct = crate::structure::structure_factor_weighted(frame, &qs, &f).unwrap();
            for (a, b) in direct.s.iter().zip(s.frame(k)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn static_and_single_atom() {
        let t = random_traj(20, 1, 2);
        let c = t.frames()[0].clone();
        let frames: Vec<Configuration> = (0..4)
            .map(|k| {
                let mut f = c.clone();
                f.set_time_ps(k as f64 * 0.1);
                f
            })
            .collect();
        let t = Trajectory::new(frames, 100.0).unwrap();
        let qs = commensurate_vectors(c.cell(), 1.0);
        let slice = DetectorSlice::from_q_vectors(c.cell(), &qs).unwrap();
        let one = [GaussianFormFactor::constant(1.0)];
        let s = compute_speckles(&t, &slice, &one).unwrap();
        for k in 1..4 {
            assert_eq!(s.frame(k), s.frame(0));
        }
        let lone = Configuration::at_rest(vec![[1.0, 2.0, 3.0]], ARGON_MASS, *c.cell()).unwrap();
        let mut l2 = lone.clone();
        l2.set_time_ps(0.1);
        let s = compute_speckles(&Trajectory::new(vec![lone, l2], 100.0).unwrap(), &slice, &one).unwrap();
        assert!(s.intensities.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn g2_constant_and_cosine() {
        let s = synthetic(100, 4, 100.0, |_, _| 3.0);
        assert!(g2(&s, bin(), 5.0).unwrap().g2.iter().all(|g| (g - 1.0).abs() < 1e-12));
        // I = 1 + a·cos(ωt), period of 20 frames so every lag averages whole periods exactly.
        let a = 0.6;
        let n = 2000;
        let w = 2.0 * std::f64::consts::PI / 20.0;
        let s = synthetic(n, 3, 100.0, |t, _| 1.0 + a * (w * t as f64).cos());
        let g = g2(&s, bin(), 3.0).unwrap();
        for (m, v) in g.g2.iter().enumerate() {
            // Closed form over the finite window of n − m origins.
            let mut acc = 0.0;
            for t in 0..n - m {
                acc += (1.0 + a * (w * t as f64).cos()) * (1.0 + a * (w * (t + m) as f64).cos());
            }
            let mean: f64 = (0..n).map(|t| 1.0 + a * (w * t as f64).cos()).sum::<f64>() / n as f64;
            let want = acc / (n - m) as f64 / (mean * mean);
            assert!((v - want).abs() < 1e-10, "lag {m}");
            let asymptotic = 1.0 + a * a / 2.0 * (w * m as f64).cos();
            assert!((v - asymptotic).abs() < 5e-3);
        }
    }

    #[test]
    fn g2_time_reversal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals: Vec<f64> = (0..400).map(|_| rng.gen::<f64>()).collect();
        let s = synthetic(100, 4, 100.0, |t, p| vals[t * 4 + p]);
        let a = g2(&s, bin(), 5.0).unwrap();
        let b = g2(&s.reversed(), bin(), 5.0).unwrap();
        for (x, y) in a.g2.iter().zip(&b.g2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_bin_lists_neighbors() {
        let s = synthetic(10, 4, 100.0, |_, _| 1.0);
        match g2(&s, QBin::new(5.0, 0.01), 0.1) {
            Err(XpcsError::EmptyBin { nearest, .. }) => assert!(!nearest.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pulse_integration() {
        let s = synthetic(10, 2, 100.0, |t, p| (t * 2 + p) as f64);
        let same = pulse_integrate(&s, 0.1).unwrap();
        assert_eq!(same, s);
        let two = pulse_integrate(&s, 0.2).unwrap();
        assert_eq!(two.frames(), 5);
        for k in 0..5 {
            for p in 0..2 {
                assert_eq!(two.frame(k)[p], s.frame(2 * k)[p] + s.frame(2 * k + 1)[p]);
            }
        }
        assert!((two.frame_interval_ps() - 0.2).abs() < 1e-15);
        assert!(pulse_integrate(&s, 2.0).is_err());
        let c = synthetic(10, 2, 100.0, |_, _| 1.5);
        assert!(pulse_integrate(&c, 0.3).unwrap().intensities.iter().all(|v| (*v - 4.5).abs() < 1e-12));
    }

    #[test]
    fn contrast_of_exponential_speckle() {
        // Independent exponential intensities: β₀ → 1 and the spatial contrast agrees.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e = Exp::new(1.0).unwrap();
        let vals: Vec<f64> = (0..4000 * 64).map(|_| e.sample(&mut rng)).collect();
        let s = synthetic(4000, 64, 100.0, |t, p| vals[t * 64 + p]);
        let b0 = beta_zero(&s, bin()).unwrap();
        assert!((b0 - 1.0).abs() < 0.05, "{b0}");
        let bd = beta_delta(&s, bin(), &[0.1]).unwrap();
        assert!((bd.beta[0] / b0 - 1.0).abs() < 0.05);
        let flat = synthetic(10, 4, 100.0, |t, _| t as f64 + 1.0);
        assert_eq!(beta_delta(&flat, bin(), &[0.1, 0.2]).unwrap().beta, vec![0.0, 0.0]);
    }

    #[test]
    fn decay_fit_exact() {
        let gamma = 0.5;
        let lags: Vec<f64> = (0..200).map(|k| k as f64 * 0.05).collect();
        let curve = G2Curve { bin: bin(), g2: lags.iter().map(|t| 1.0 + 0.9 * (-2.0 * gamma * t).exp()).collect(), lags_ps: lags, pixels: 2 };
        let fit = fit_decay(&curve, DecayFitOptions::default()).unwrap();
        assert!((fit.gamma_per_ps / gamma - 1.0).abs() < 1e-6);
        let short = G2Curve { lags_ps: curve.lags_ps[..12].to_vec(), g2: curve.g2[..12].to_vec(), ..curve };
        assert!(matches!(fit_decay(&short, DecayFitOptions::default()), Err(XpcsError::TooFewPoints(_))));
    }

    #[test]
    fn correlation_time_closed_form() {
        let widths: Vec<f64> = (1..200).map(|k| k as f64 * 0.01).collect();
        let curve = ContrastCurve { bin: bin(), beta: widths.iter().map(|t| (-(t - 0.01) / 2.0).exp()).collect(), widths_ps: widths };
        let c = correlation_time(&curve).unwrap();
        assert!((c.tau_ps - (0.01 + 2.0 * 2f64.ln())).abs() < c.resolution_ps);
        let flat = ContrastCurve { bin: bin(), widths_ps: vec![0.1, 0.2], beta: vec![1.0, 0.9] };
        assert!(matches!(correlation_time(&flat), Err(XpcsError::NoCrossing { .. })));
    }

    #[test]
    fn speckle_file_round_trip() {
        let s = synthetic(6, 3, 100.0, |t, p| (t + p) as f64 * 0.5);
        let dir = tempfile::tempdir().unwrap();
        s.save(&dir.path().join("sp")).unwrap();
        assert_eq!(SpeckleSeries::load(&dir.path().join("sp")).unwrap(), s);
    }
}
