//! Pair force fields: the reference Lennard-Jones model, the fitted spline
//! surrogate, and force evaluation over a neighbor list.

mod fit;
mod spline;
mod stats;

pub use fit::{fit_surrogate, fit_surrogate_with, FitError, FitOptions, FitReport, ForceDataset};
pub use spline::{Extrapolation, KnotSpacing, SplineError, SplinePairModel, SPLINE_FORMAT_VERSION};
pub use stats::{force_error_stats, ForceErrorStats, StatsError};

use crate::md::neighbor::NeighborList;
use crate::par;
use crate::system::{Configuration, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ForceError {
    #[error("pair distance must be positive, got r = {0}")]
    Domain(f64),
    #[error("neighbor list is stale: an atom moved {moved:.4} Å > skin/2 = {half_skin:.4} Å since the build (or the cell changed); rebuild it")]
    StaleNeighborList { moved: f64, half_skin: f64 },
    #[error("neighbor list cutoff {list:.4} Å is shorter than the model cutoff {model:.4} Å")]
    ListTooShort { list: f64, model: f64 },
    #[error("non-finite pair force between atoms {i} and {j} at r = {r:.6} Å")]
    NonFinite { i: usize, j: usize, r: f64 },
    #[error("periodic edge {edge:.4} Å is not larger than twice the model cutoff {cutoff:.4} Å")]
    CellTooSmall { edge: f64, cutoff: f64 },
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

/// A central pair interaction. Forces are radial; `pair_r2` returns the pair
/// energy and the scalar force divided by r, so that the force on atom i from
/// j is `f_over_r * (r_i - r_j)`.
pub trait PairPotential: Send + Sync {
    fn cutoff(&self) -> f64;

    fn pair_r2(&self, r2: f64) -> (f64, f64);

    /// Whether `pair_r2` energies are meaningful.
    fn has_energy(&self) -> bool {
        true
    }

    fn label(&self) -> String;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LennardJonesModel {
    pub epsilon: f64,
    pub sigma: f64,
    pub cutoff: f64,
    #[serde(default)]
    pub shift_energy: bool,
}

impl LennardJonesModel {
    pub fn new(epsilon: f64, sigma: f64, cutoff: f64, shift_energy: bool) -> Result<Self, ForceError> {
        if !(epsilon > 0.0 && sigma > 0.0 && cutoff > sigma) {
            return Err(ForceError::InvalidParameter(format!(
                "need epsilon > 0, sigma > 0, cutoff > sigma (got {epsilon}, {sigma}, {cutoff})"
            )));
        }
        Ok(Self { epsilon, sigma, cutoff, shift_energy })
    }

    /// Argon: ε = 0.0103 eV, σ = 3.40 Å, cutoff 8.5 Å, unshifted.
    pub fn argon() -> Self {
        Self {
            epsilon: crate::units::ARGON_EPSILON,
            sigma: crate::units::ARGON_SIGMA,
            cutoff: 2.5 * crate::units::ARGON_SIGMA,
            shift_energy: false,
        }
    }

    #[inline]
    fn raw(&self, r2: f64) -> (f64, f64) {
        let s2 = self.sigma * self.sigma / r2;
        let s6 = s2 * s2 * s2;
        let s12 = s6 * s6;
        (4.0 * self.epsilon * (s12 - s6), 24.0 * self.epsilon * (2.0 * s12 - s6) / r2)
    }

    fn shift(&self) -> f64 {
        if self.shift_energy {
            self.raw(self.cutoff * self.cutoff).0
        } else {
            0.0
        }
    }

    /// Second derivative V''(r) of the untruncated potential.
    pub fn curvature(&self, r: f64) -> f64 {
        let sr6 = (self.sigma / r).powi(6);
        4.0 * self.epsilon * (156.0 * sr6 * sr6 - 42.0 * sr6) / (r * r)
    }
}

impl PairPotential for LennardJonesModel {
    fn cutoff(&self) -> f64 {
        self.cutoff
    }

    #[inline]
    fn pair_r2(&self, r2: f64) -> (f64, f64) {
        if r2 >= self.cutoff * self.cutoff {
            return (0.0, 0.0);
        }
        let (e, f) = self.raw(r2);
        (e - self.shift(), f)
    }

    fn label(&self) -> String {
        format!("lj(eps={}, sigma={}, rc={})", self.epsilon, self.sigma, self.cutoff)
    }
}

/// Pair energy and scalar force -dV/dr at separation r.
pub fn lj_pair(r: f64, model: &LennardJonesModel) -> Result<(f64, f64), ForceError> {
    if !(r > 0.0) {
        return Err(ForceError::Domain(r));
    }
    let (e, f_over_r) = model.pair_r2(r * r);
    Ok((e, f_over_r * r))
}

/// A model with no interactions (ideal gas, and a degenerate benchmark candidate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroForceModel {
    pub cutoff: f64,
}

impl PairPotential for ZeroForceModel {
    fn cutoff(&self) -> f64 {
        self.cutoff
    }

    fn pair_r2(&self, _r2: f64) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn label(&self) -> String {
        "zero".into()
    }
}

/// Any of the built-in models, for configuration files and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForceModel {
    LennardJones(LennardJonesModel),
    Spline(Box<SplinePairModel>),
    Zero(ZeroForceModel),
}

impl PairPotential for ForceModel {
    fn cutoff(&self) -> f64 {
        match self {
            ForceModel::LennardJones(m) => m.cutoff(),
            ForceModel::Spline(m) => m.cutoff(),
            ForceModel::Zero(m) => m.cutoff(),
        }
    }

    #[inline]
    fn pair_r2(&self, r2: f64) -> (f64, f64) {
        match self {
            ForceModel::LennardJones(m) => m.pair_r2(r2),
            ForceModel::Spline(m) => m.pair_r2(r2),
            ForceModel::Zero(m) => m.pair_r2(r2),
        }
    }

    fn has_energy(&self) -> bool {
        match self {
            ForceModel::LennardJones(m) => m.has_energy(),
            ForceModel::Spline(m) => m.has_energy(),
            ForceModel::Zero(m) => m.has_energy(),
        }
    }

    fn label(&self) -> String {
        match self {
            ForceModel::LennardJones(m) => m.label(),
            ForceModel::Spline(m) => m.label(),
            ForceModel::Zero(m) => m.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForceEvaluation {
    /// Per-atom forces, eV/Å.
    pub forces: Vec<Vec3>,
    /// None when the model does not provide energies.
    pub potential_energy: Option<f64>,
    /// Pair virial Σ r_ij · F_ij in eV.
    pub virial: f64,
}

impl ForceEvaluation {
    /// Column sum of the forces.
    pub fn net_force(&self) -> Vec3 {
        let mut s = [0.0; 3];
        for f in &self.forces {
            for a in 0..3 {
                s[a] += f[a];
            }
        }
        s
    }
}

struct Partial {
    forces: Vec<Vec3>,
    energy: f64,
    virial: f64,
    bad: Option<(usize, usize, f64)>,
}

/// Pair forces over a half neighbor list. Work is split into contiguous
/// atom ranges, one per worker, whose partial sums are added in range order,
/// so the result depends only on the thread count.
pub fn evaluate<M: PairPotential + ?Sized>(
    model: &M,
    config: &Configuration,
    neighbors: &NeighborList,
) -> Result<ForceEvaluation, ForceError> {
    if neighbors.cutoff() < model.cutoff() {
        return Err(ForceError::ListTooShort { list: neighbors.cutoff(), model: model.cutoff() });
    }
    let edge = config.cell().min_periodic_edge();
    if edge <= 2.0 * model.cutoff() {
        return Err(ForceError::CellTooSmall { edge, cutoff: model.cutoff() });
    }
    if !neighbors.is_valid_for(config) {
        return Err(ForceError::StaleNeighborList {
            moved: neighbors.max_displacement(config),
            half_skin: 0.5 * neighbors.skin(),
        });
    }

    let n = config.len();
    let pos = config.positions();
    let cell = config.cell();
    let lengths = cell.lengths();
    // Listed pairs are closer than L/2 up to skin drift, so one shift suffices.
    let period: Vec3 = std::array::from_fn(|a| if cell.is_periodic(a) { lengths[a] } else { 0.0 });
    let half: Vec3 = std::array::from_fn(|a| if cell.is_periodic(a) { 0.5 * lengths[a] } else { f64::INFINITY });
    let rc2 = model.cutoff() * model.cutoff();

    let ranges = par::balanced_ranges(&neighbors.counts(), par::thread_count());
    let partials = par::map_slice(&ranges, |range| {
        let mut p = Partial { forces: vec![[0.0; 3]; n], energy: 0.0, virial: 0.0, bad: None };
        for i in range.clone() {
            let pi = pos[i];
            let mut fi = [0.0; 3];
            for &j in neighbors.neighbors_of(i) {
                let j = j as usize;
                let mut d = [0.0; 3];
                for a in 0..3 {
                    let mut x = pi[a] - pos[j][a];
                    if x >= half[a] {
                        x -= period[a];
                    } else if x < -half[a] {
                        x += period[a];
                    }
                    d[a] = x;
                }
                let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                if r2 >= rc2 {
                    continue;
                }
                let (e, f_over_r) = model.pair_r2(r2);
                if !f_over_r.is_finite() {
                    if p.bad.is_none() {
                        p.bad = Some((i, j, r2.sqrt()));
                    }
                    continue;
                }
                p.energy += e;
                p.virial += f_over_r * r2;
                for a in 0..3 {
                    let c = f_over_r * d[a];
                    fi[a] += c;
                    p.forces[j][a] -= c;
                }
            }
            for a in 0..3 {
                p.forces[i][a] += fi[a];
            }
        }
        p
    });

    let mut iter = partials.into_iter();
    let mut acc = iter.next().expect("at least one range");
    for p in iter {
        if acc.bad.is_none() {
            acc.bad = p.bad;
        }
        acc.energy += p.energy;
        acc.virial += p.virial;
        for (f, g) in acc.forces.iter_mut().zip(p.forces.iter()) {
            for a in 0..3 {
                f[a] += g[a];
            }
        }
    }
    if let Some((i, j, r)) = acc.bad {
        return Err(ForceError::NonFinite { i, j, r });
    }
    Ok(ForceEvaluation {
        forces: acc.forces,
        potential_energy: model.has_energy().then_some(acc.energy),
        virial: acc.virial,
    })
}

/// Builds a fresh neighbor list (zero skin) and evaluates. Convenient for
/// one-off evaluations such as datasets and Hessian probes.
pub fn evaluate_fresh<M: PairPotential + ?Sized>(model: &M, config: &Configuration) -> Result<ForceEvaluation, ForceError> {
    let nl = crate::md::neighbor::build_neighbor_list(config, model.cutoff(), 0.0).map_err(|e| match e {
        crate::md::neighbor::NeighborError::CellTooSmall { edge, .. } => ForceError::CellTooSmall { edge, cutoff: model.cutoff() },
        other => ForceError::InvalidParameter(other.to_string()),
    })?;
    evaluate(model, config, &nl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::md::neighbor::build_neighbor_list;
    use crate::system::SimulationCell;
    use crate::units::ARGON_MASS;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lj() -> LennardJonesModel {
        LennardJonesModel::argon()
    }

    #[test]
    fn pair_at_sigma_and_minimum() {
        let m = lj();
        let (e, f) = lj_pair(m.sigma, &m).unwrap();
        assert!(e.abs() < 1e-15);
        assert!((f - 24.0 * m.epsilon / m.sigma).abs() < 1e-14);
        let rmin = 2f64.powf(1.0 / 6.0) * m.sigma;
        let (e, f) = lj_pair(rmin, &m).unwrap();
        assert!((e + m.epsilon).abs() < 1e-15);
        assert!(f.abs() < 1e-15);
        assert_eq!(lj_pair(8.6, &m).unwrap(), (0.0, 0.0));
        assert_eq!(lj_pair(0.0, &m), Err(ForceError::Domain(0.0)));
        assert!(lj_pair(-1.0, &m).is_err());
    }

    #[test]
    fn shifted_energy_vanishes_at_cutoff() {
        let m = LennardJonesModel::new(0.0103, 3.4, 8.5, true).unwrap();
        let (e, _) = lj_pair(8.5 - 1e-12, &m).unwrap();
        assert!(e.abs() < 1e-14);
        let (_, f_unshifted) = lj_pair(5.0, &lj()).unwrap();
        assert_eq!(lj_pair(5.0, &m).unwrap().1, f_unshifted);
    }

    #[test]
    fn curvature_matches_finite_difference() {
        let m = lj();
        for r in [3.5, 3.816, 4.5, 6.0] {
            let h = 1e-5;
            let fd = -(lj_pair(r + h, &m).unwrap().1 - lj_pair(r - h, &m).unwrap().1) / (2.0 * h);
            assert!((fd - m.curvature(r)).abs() < 1e-7 * m.curvature(3.5).abs(), "r={r}");
        }
    }

    #[test]
    fn dimer_at_minimum() {
        let rmin = 2f64.powf(1.0 / 6.0) * 3.4;
        let cell = SimulationCell::cubic(30.0).unwrap();
        let cfg = Configuration::at_rest(vec![[5.0, 5.0, 5.0], [5.0 + rmin, 5.0, 5.0]], ARGON_MASS, cell).unwrap();
        let ev = evaluate_fresh(&lj(), &cfg).unwrap();
        assert!(ev.forces.iter().flatten().all(|x| x.abs() < 1e-15));
        assert!((ev.potential_energy.unwrap() + 0.0103).abs() < 1e-15);
    }

    fn random_liquid(n: usize, seed: u64) -> Configuration {
        // Rejection sampling keeps pairs above 2.8 Å so forces stay moderate.
        let edge = (n as f64 * ARGON_MASS / 0.858).cbrt().max(18.5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = SimulationCell::cubic(edge).unwrap();
        let mut pos: Vec<Vec3> = Vec::new();
        while pos.len() < n {
            let p = [rng.gen::<f64>() * edge, rng.gen::<f64>() * edge, rng.gen::<f64>() * edge];
            if pos.iter().all(|q| crate::system::norm2(cell.minimum_image(crate::system::sub(p, *q))) > 2.8 * 2.8) {
                pos.push(p);
            }
        }
        Configuration::at_rest(pos, ARGON_MASS, cell).unwrap()
    }

    /// All pairs over all periodic images within the cutoff.
    fn brute_force(model: &LennardJonesModel, cfg: &Configuration) -> (Vec<Vec3>, f64) {
        let l = cfg.cell().lengths();
        let n = cfg.len();
        let mut f = vec![[0.0; 3]; n];
        let mut e = 0.0;
        let reach: Vec<i64> = (0..3).map(|a| (model.cutoff / l[a]).ceil() as i64).collect();
        for i in 0..n {
            for j in 0..n {
                for nx in -reach[0]..=reach[0] {
                    for ny in -reach[1]..=reach[1] {
                        for nz in -reach[2]..=reach[2] {
                            if i == j && nx == 0 && ny == 0 && nz == 0 {
                                continue;
                            }
                            let d = [
                                cfg.positions()[i][0] - cfg.positions()[j][0] + nx as f64 * l[0],
                                cfg.positions()[i][1] - cfg.positions()[j][1] + ny as f64 * l[1],
                                cfg.positions()[i][2] - cfg.positions()[j][2] + nz as f64 * l[2],
                            ];
                            let r = crate::system::norm2(d).sqrt();
                            if r >= model.cutoff {
                                continue;
                            }
                            let s6 = (model.sigma / r).powi(6);
                            e += 0.5 * 4.0 * model.epsilon * (s6 * s6 - s6);
                            let fr = 24.0 * model.epsilon * (2.0 * s6 * s6 - s6) / r;
                            for a in 0..3 {
                                f[i][a] += fr * d[a] / r;
                            }
                        }
                    }
                }
            }
        }
        (f, e)
    }

    #[test]
    fn matches_all_image_oracle_on_random_32_atoms() {
        let cfg = random_liquid(32, 11);
        let ev = evaluate_fresh(&lj(), &cfg).unwrap();
        let (f, e) = brute_force(&lj(), &cfg);
        let dev = ev.forces.iter().flatten().zip(f.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-10, "max deviation {dev}");
        assert!((ev.potential_energy.unwrap() - e).abs() < 1e-10);
    }

    #[test]
    fn fcc_net_force_vanishes() {
        let cfg = crate::solid::build_fcc(4, 0.858, ARGON_MASS).unwrap();
        let ev = evaluate_fresh(&lj(), &cfg).unwrap();
        assert!(ev.net_force().iter().all(|x| x.abs() < 1e-10));
        assert!(ev.forces.iter().flatten().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn stale_list_rejected() {
        let mut cfg = random_liquid(64, 4);
        let nl = build_neighbor_list(&cfg, 8.5, 0.4).unwrap();
        let p = cfg.positions()[0];
        cfg.set_position(0, [p[0] + 0.3, p[1], p[2]]);
        assert!(matches!(evaluate(&lj(), &cfg, &nl), Err(ForceError::StaleNeighborList { .. })));
        let short = build_neighbor_list(&cfg, 6.0, 0.4).unwrap();
        assert!(matches!(evaluate(&lj(), &cfg, &short), Err(ForceError::ListTooShort { .. })));
    }

    #[test]
    fn finite_difference_consistency() {
        let cfg = random_liquid(32, 9);
        let m = lj();
        let ev = evaluate_fresh(&m, &cfg).unwrap();
        let h = 1e-5;
        for (i, a) in [(0, 0), (5, 1), (17, 2), (31, 0)] {
            let mut plus = cfg.clone();
            let mut minus = cfg.clone();
            let mut p = cfg.positions()[i];
            p[a] += h;
            plus.set_position(i, p);
            p[a] -= 2.0 * h;
            minus.set_position(i, p);
            let ep = evaluate_fresh(&m, &plus).unwrap().potential_energy.unwrap();
            let em = evaluate_fresh(&m, &minus).unwrap().potential_energy.unwrap();
            let fd = -(ep - em) / (2.0 * h);
            assert!((fd - ev.forces[i][a]).abs() < 1e-6, "atom {i} axis {a}: {fd} vs {}", ev.forces[i][a]);
        }
    }

    #[test]
    fn closed_loop_work_vanishes() {
        // Trapezoid line integral of F·dl around a square loop of one atom.
        let cfg = random_liquid(32, 21);
        let m = lj();
        let start = cfg.positions()[3];
        let corners: [[f64; 2]; 5] = [[0.0, 0.0], [0.3, 0.0], [0.3, 0.3], [0.0, 0.3], [0.0, 0.0]];
        let step = 1e-4;
        let mut work = 0.0;
        for w in corners.windows(2) {
            let n = ((w[1][0] - w[0][0]).abs().max((w[1][1] - w[0][1]).abs()) / step).round() as usize;
            let force_at = |t: f64| {
                let mut c = cfg.clone();
                let x = w[0][0] + t * (w[1][0] - w[0][0]);
                let y = w[0][1] + t * (w[1][1] - w[0][1]);
                c.set_position(3, [start[0] + x, start[1] + y, start[2]]);
                evaluate_fresh(&m, &c).unwrap().forces[3]
            };
            let dl = [(w[1][0] - w[0][0]) / n as f64, (w[1][1] - w[0][1]) / n as f64];
            let mut prev = force_at(0.0);
            for k in 1..=n {
                let f = force_at(k as f64 / n as f64);
                work += 0.5 * ((prev[0] + f[0]) * dl[0] + (prev[1] + f[1]) * dl[1]);
                prev = f;
            }
        }
        // Trapezoid error at this step is ~1e-8 eV.
        assert!(work.abs() < 1e-6, "loop work {work}");
    }

    #[test]
    fn permutation_equivariance() {
        let cfg = random_liquid(40, 5);
        let mut order: Vec<usize> = (0..40).collect();
        order.reverse();
        order.swap(3, 17);
        let a = evaluate_fresh(&lj(), &cfg).unwrap();
        let b = evaluate_fresh(&lj(), &cfg.permuted(&order)).unwrap();
        for (k, &i) in order.iter().enumerate() {
            for ax in 0..3 {
                assert!((b.forces[k][ax] - a.forces[i][ax]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn thread_count_one_is_reproducible() {
        let cfg = random_liquid(200, 8);
        let a = par::with_threads(1, || evaluate_fresh(&lj(), &cfg).unwrap());
        let b = par::with_threads(1, || evaluate_fresh(&lj(), &cfg).unwrap());
        assert_eq!(a, b);
        let c = par::with_threads(3, || evaluate_fresh(&lj(), &cfg).unwrap());
        let d = par::with_threads(3, || evaluate_fresh(&lj(), &cfg).unwrap());
        assert_eq!(c, d);
        let dev = a.forces.iter().flatten().zip(c.forces.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn translation_invariance(seed in 0u64..1000, sx in -30.0f64..30.0, sy in -30.0f64..30.0, sz in -30.0f64..30.0) {
            let cfg = random_liquid(32, seed);
            let mut moved = cfg.clone();
            moved.translate([sx, sy, sz]);
            let a = evaluate_fresh(&lj(), &cfg).unwrap();
            let b = evaluate_fresh(&lj(), &moved).unwrap();
            for (x, y) in a.forces.iter().flatten().zip(b.forces.iter().flatten()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!(a.net_force().iter().all(|x| x.abs() < 1e-10));
        }
    }
}
