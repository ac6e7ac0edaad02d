//! Mean-squared displacement and self-diffusivity.

use crate::system::{SystemError, Trajectory, Vec3};
use crate::units::A2_PER_PS_TO_UM2_PER_S;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// A frame-to-frame minimum-image step longer than this fraction of the
/// edge is treated as ambiguous (a true step of L/2 cannot be told apart
/// from one of −L/2).
pub const UNWRAP_GUARD: f64 = 0.45;

/// Lower bound on the fit window that excludes the caging regime, ps.
pub const MIN_FIT_START_PS: f64 = 1.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DynamicsError {
    #[error("atom {atom} moves {step:.3} Å along axis {axis} between frames {frame} and {next}; edge is {edge:.3} Å, frame interval too coarse", next = frame + 1)]
    AmbiguousStep { atom: usize, axis: usize, frame: usize, step: f64, edge: f64 },
    #[error("max lag {max_lag} ps exceeds trajectory span {span} ps")]
    LagTooLong { max_lag: f64, span: f64 },
    #[error("fit window [{0}, {1}] ps invalid: must start at or after 1 ps and be non-empty")]
    BadWindow(f64, f64),
    #[error("fit window holds {0} points, need at least 3")]
    TooFewPoints(usize),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Continuous coordinates reconstructed from a wrapped trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct UnwrappedTrajectory {
    /// [frame][atom].
    positions: Vec<Vec<Vec3>>,
    frame_interval_fs: f64,
}

impl UnwrappedTrajectory {
    pub fn new(positions: Vec<Vec<Vec3>>, frame_interval_fs: f64) -> Result<Self, SystemError> {
        if positions.is_empty() {
            return Err(SystemError::EmptyTrajectory);
        }
        if !(frame_interval_fs > 0.0) {
            return Err(SystemError::BadInterval(frame_interval_fs));
        }
        let n = positions[0].len();
        if let Some((frame, f)) = positions.iter().enumerate().find(|(_, f)| f.len() != n) {
            return Err(SystemError::AtomCountChanged { frame, got: f.len(), expected: n });
        }
        Ok(Self { positions, frame_interval_fs })
    }

    pub fn positions(&self) -> &[Vec<Vec3>] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn atom_count(&self) -> usize {
        self.positions[0].len()
    }

    pub fn frame_interval_ps(&self) -> f64 {
        self.frame_interval_fs * 1e-3
    }

    pub fn span_ps(&self) -> f64 {
        (self.len() - 1) as f64 * self.frame_interval_ps()
    }

    pub fn translated(&self, shift: Vec3) -> Self {
        let positions =
            self.positions.iter().map(|f| f.iter().map(|p| [p[0] + shift[0], p[1] + shift[1], p[2] + shift[2]]).collect()).collect();
        Self { positions, frame_interval_fs: self.frame_interval_fs }
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        let positions = self.positions.iter().map(|f| order.iter().map(|&i| f[i]).collect()).collect();
        Self { positions, frame_interval_fs: self.frame_interval_fs }
    }
}

/// Accumulates minimum-image displacements between consecutive frames.
pub fn unwrap(traj: &Trajectory) -> Result<UnwrappedTrajectory, DynamicsError> {
    traj.require_fixed_cell()?;
    let frames = traj.frames();
    let cell = *frames[0].cell();
    let l = cell.lengths();
    let mut current: Vec<Vec3> = frames[0].positions().to_vec();
    let mut out = Vec::with_capacity(frames.len());
    out.push(current.clone());
    for (k, pair) in frames.windows(2).enumerate() {
        let (a, b) = (pair[0].positions(), pair[1].positions());
        for (atom, cur) in current.iter_mut().enumerate() {
            let d = cell.minimum_image(crate::system::sub(b[atom], a[atom]));
            for axis in 0..3 {
                if cell.is_periodic(axis) && d[axis].abs() >= UNWRAP_GUARD * l[axis] {
                    return Err(DynamicsError::AmbiguousStep { atom, axis, frame: k, step: d[axis], edge: l[axis] });
                }
                cur[axis] += d[axis];
            }
        }
        out.push(current.clone());
    }
    Ok(UnwrappedTrajectory { positions: out, frame_interval_fs: traj.frame_interval_fs() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdCurve {
    pub lags_ps: Vec<f64>,
    /// Å².
    pub msd: Vec<f64>,
    /// Time origins averaged at each lag.
    pub origins: Vec<usize>,
}

impl MsdCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau_ps,msd_A2\n");
        for (t, m) in self.lags_ps.iter().zip(&self.msd) {
            let _ = writeln!(s, "{t},{m}");
        }
        s
    }
}

/// Σ_k x_k·x_{k+m} for m < n via zero-padded FFT.
pub(crate) fn autocorrelation(x: &[f64], fft: &dyn rustfft::Fft<f64>, ifft: &dyn rustfft::Fft<f64>, buf: &mut Vec<Complex64>) -> Vec<f64> {
    let n = x.len();
    let size = fft.len();
    buf.clear();
    buf.extend(x.iter().map(|&v| Complex64::new(v, 0.0)));
    buf.resize(size, Complex64::new(0.0, 0.0));
    fft.process(buf);
    for c in buf.iter_mut() {
        *c = Complex64::new(c.norm_sqr(), 0.0);
    }
    ifft.process(buf);
    buf[..n].iter().map(|c| c.re / size as f64).collect()
}

/// Multi-origin MSD over all atoms and time origins, lags 0..=max_lag.
pub fn msd(traj: &UnwrappedTrajectory, max_lag_ps: f64) -> Result<MsdCurve, DynamicsError> {
    let span = traj.span_ps();
    if max_lag_ps > span * (1.0 + 1e-12) || max_lag_ps < 0.0 {
        return Err(DynamicsError::LagTooLong { max_lag: max_lag_ps, span });
    }
    let nf = traj.len();
    let max_lag = ((max_lag_ps / traj.frame_interval_ps()) + 1e-9).floor() as usize;
    let size = (2 * nf).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let natoms = traj.atom_count();
    let pos = traj.positions();
    let chunk = natoms.div_ceil(crate::par::thread_count().max(1) * 4).max(1);
    let starts: Vec<usize> = (0..natoms).step_by(chunk).collect();
    let partials: Vec<Vec<f64>> = crate::par::map_slice(&starts, |&s| {
        let mut acc = vec![0.0; max_lag + 1];
        let mut buf = Vec::with_capacity(size);
        let mut x = vec![0.0; nf];
        for atom in s..(s + chunk).min(natoms) {
            for axis in 0..3 {
                // Relative to the first frame so absolute offsets do not cost precision.
                let x0 = pos[0][atom][axis];
                for (k, f) in pos.iter().enumerate() {
                    x[k] = f[atom][axis] - x0;
                }
                let s2 = autocorrelation(&x, fft.as_ref(), ifft.as_ref(), &mut buf);
                // Σ_{k=0}^{n−m−1} (x_{k+m}² + x_k²), updated from the ends inward.
                let mut q: f64 = 2.0 * x.iter().map(|v| v * v).sum::<f64>();
                for m in 0..=max_lag {
                    if m > 0 {
                        q -= x[m - 1] * x[m - 1] + x[nf - m] * x[nf - m];
                    }
                    acc[m] += (q - 2.0 * s2[m]) / (nf - m) as f64;
                }
            }
        }
        acc
    });
    let mut total = vec![0.0; max_lag + 1];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let mut msd: Vec<f64> = total.iter().map(|v| (v / natoms as f64).max(0.0)).collect();
    // Zero by definition; the FFT route leaves rounding residue.
    msd[0] = 0.0;
    Ok(MsdCurve {
        lags_ps: (0..=max_lag).map(|m| m as f64 * traj.frame_interval_ps()).collect(),
        msd,
        origins: (0..=max_lag).map(|m| nf - m).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusivityFit {
    /// μm²/s.
    pub d_um2_per_s: f64,
    pub d_stderr_um2_per_s: f64,
    pub window_ps: [f64; 2],
    /// Å²/ps.
    pub slope: f64,
    pub slope_stderr: f64,
    /// Å².
    pub intercept: f64,
    pub points: usize,
}

/// Ordinary least squares y = a + b·x; returns (a, b, stderr of b).
pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let se = if n > 2.0 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (a, b, se)
}

/// Least-squares slope of MSD over `window_ps`, D = slope/6.
pub fn fit_diffusivity(curve: &MsdCurve, window_ps: [f64; 2]) -> Result<DiffusivityFit, DynamicsError> {
    let [t0, t1] = window_ps;
    if !(t0 >= MIN_FIT_START_PS - 1e-12 && t1 > t0) {
        return Err(DynamicsError::BadWindow(t0, t1));
    }
    let tol = 1e-9 * t1.abs().max(1.0);
    let (x, y): (Vec<f64>, Vec<f64>) =
        curve.lags_ps.iter().zip(&curve.msd).filter(|(t, _)| **t >= t0 - tol && **t <= t1 + tol).map(|(t, m)| (*t, *m)).unzip();
    if x.len() < 3 {
        return Err(DynamicsError::TooFewPoints(x.len()));
    }
    let (a, b, se) = linear_fit(&x, &y);
    Ok(DiffusivityFit {
        d_um2_per_s: b / 6.0 * A2_PER_PS_TO_UM2_PER_S,
        d_stderr_um2_per_s: se / 6.0 * A2_PER_PS_TO_UM2_PER_S,
        window_ps,
        slope: b,
        slope_stderr: se,
        intercept: a,
        points: x.len(),
    })
}

/// Window [1 ps, last lag].
pub fn fit_diffusivity_default(curve: &MsdCurve) -> Result<DiffusivityFit, DynamicsError> {
    fit_diffusivity(curve, [MIN_FIT_START_PS, *curve.lags_ps.last().unwrap_or(&0.0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{Configuration, SimulationCell};
    use crate::units::ARGON_MASS;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn wrapped(paths: &[Vec<Vec3>], edge: f64, dt_fs: f64) -> Trajectory {
        let cell = SimulationCell::cubic(edge).unwrap();
        let frames = paths
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let mut c = Configuration::at_rest(p.clone(), ARGON_MASS, cell).unwrap();
                c.set_time_ps(k as f64 * dt_fs * 1e-3);
                c
            })
            .collect();
        Trajectory::new(frames, dt_fs).unwrap()
    }

    fn brownian(natoms: usize, nframes: usize, d: f64, dt_ps: f64, seed: u64) -> Vec<Vec<Vec3>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let step = Normal::new(0.0, (2.0 * d * dt_ps).sqrt()).unwrap();
        let mut cur: Vec<Vec3> = (0..natoms).map(|i| [i as f64 * 0.37 % 10.0, 5.0, 5.0]).collect();
        let mut out = vec![cur.clone()];
        for _ in 1..nframes {
            for p in &mut cur {
                for v in p.iter_mut() {
                    *v += step.sample(&mut rng);
                }
            }
            out.push(cur.clone());
        }
        out
    }

    #[test]
    fn static_and_ballistic() {
        let still = vec![vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]; 6];
        let u = unwrap(&wrapped(&still, 10.0, 100.0)).unwrap();
        assert_eq!(u.positions(), &still[..]);
        assert!(msd(&u, 0.5).unwrap().msd.iter().all(|m| m.abs() < 1e-20));
        // Crosses the boundary several times at 0.3 Å per frame.
        let v = [0.3, -0.2, 0.1];
        let path: Vec<Vec<Vec3>> = (0..100).map(|k| vec![[9.0 + v[0] * k as f64, 1.0 + v[1] * k as f64, 5.0 + v[2] * k as f64]]).collect();
        let u = unwrap(&wrapped(&path, 10.0, 100.0)).unwrap();
        for (a, b) in u.positions().iter().zip(&path) {
            for k in 0..3 {
                assert!((a[0][k] - b[0][k]).abs() < 1e-9);
            }
        }
        let c = msd(&u, 5.0).unwrap();
        let speed2 = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / (0.1 * 0.1);
        for (t, m) in c.lags_ps.iter().zip(&c.msd) {
            assert!((m - speed2 * t * t).abs() < 1e-8 * (1.0 + m), "{t}: {m}");
        }
        assert_eq!(c.msd[0], 0.0);
    }

    #[test]
    fn random_walk_recovered_exactly() {
        let path = brownian(3, 10, 0.5, 0.1, 3);
        let u = unwrap(&wrapped(&path, 10.0, 100.0)).unwrap();
        for (a, b) in u.positions().iter().zip(&path) {
            for (p, q) in a.iter().zip(b) {
                let shift = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
                // Same path up to the initial wrap of the first frame.
                for s in shift {
                    assert!((s / 10.0 - (s / 10.0).round()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn coarse_frames_rejected() {
        let path = vec![vec![[1.0, 1.0, 1.0]], vec![[5.8, 1.0, 1.0]]];
        assert!(matches!(unwrap(&wrapped(&path, 10.0, 100.0)), Err(DynamicsError::AmbiguousStep { atom: 0, axis: 0, .. })));
    }

    #[test]
    fn brownian_diffusivity() {
        // D = 0.3 Å²/ps = 3000 μm²/s.
        let path = brownian(400, 2000, 0.3, 0.1, 11);
        let u = UnwrappedTrajectory::new(path, 100.0).unwrap();
        let c = msd(&u, 20.0).unwrap();
        let fit = fit_diffusivity(&c, [1.0, 20.0]).unwrap();
        assert!((fit.d_um2_per_s / 3000.0 - 1.0).abs() < 0.03, "{}", fit.d_um2_per_s);
    }

    #[test]
    fn fft_matches_direct_average() {
        let path = brownian(5, 64, 0.3, 0.1, 2);
        let u = UnwrappedTrajectory::new(path.clone(), 100.0).unwrap();
        let c = msd(&u, 6.3).unwrap();
        for m in 0..64 {
            let mut s = 0.0;
            for a in 0..5 {
                for k in 0..64 - m {
                    let d = crate::system::sub(path[k + m][a], path[k][a]);
                    s += crate::system::norm2(d);
                }
            }
            let direct = s / (5.0 * (64 - m) as f64);
            assert!((c.msd[m] - direct).abs() < 1e-9 * (1.0 + direct), "lag {m}");
        }
    }

    #[test]
    fn exact_line_fit() {
        let d = 1000.0;
        let slope = 6.0 * d / A2_PER_PS_TO_UM2_PER_S;
        let lags: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let curve = MsdCurve { msd: lags.iter().map(|t| slope * t).collect(), origins: vec![1; 100], lags_ps: lags };
        let fit = fit_diffusivity_default(&curve).unwrap();
        assert!((fit.d_um2_per_s / d - 1.0).abs() < 1e-9);
        assert!(matches!(fit_diffusivity(&curve, [0.5, 5.0]), Err(DynamicsError::BadWindow(..))));
        assert!(matches!(fit_diffusivity(&curve, [1.0, 1.15]), Err(DynamicsError::TooFewPoints(2))));
    }

    #[test]
    fn lag_beyond_span() {
        let u = UnwrappedTrajectory::new(vec![vec![[0.0; 3]]; 5], 100.0).unwrap();
        assert!(matches!(msd(&u, 1.0), Err(DynamicsError::LagTooLong { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn translation_and_permutation_invariant(seed in 0u64..500, s in -1e3f64..1e3) {
            let u = UnwrappedTrajectory::new(brownian(6, 40, 0.3, 0.1, seed), 100.0).unwrap();
            let base = msd(&u, 3.0).unwrap();
            let moved = msd(&u.translated([s, -s, 0.5 * s]), 3.0).unwrap();
            let perm = msd(&u.permuted(&[5, 3, 1, 0, 2, 4]), 3.0).unwrap();
            for ((a, b), c) in base.msd.iter().zip(&moved.msd).zip(&perm.msd) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 + a));
                prop_assert!((a - c).abs() < 1e-9 * (1.0 + a));
            }
        }
    }
}
