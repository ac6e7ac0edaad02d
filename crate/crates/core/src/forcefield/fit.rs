//! Fitting the spline surrogate to reference forces.
//!
//! Objective: mean absolute force-component error plus λ times the mean L1
//! norm of each configuration's mean predicted force. Predicted forces are
//! linear in the Hermite parameters, so the problem is a weighted L1
//! regression, solved by iteratively reweighted least squares.

use super::spline::{Extrapolation, KnotSpacing, SplinePairModel, SplineProvenance};
use super::stats::force_error_stats;
use crate::md::neighbor::build_neighbor_list;
use crate::system::{Configuration, Vec3};
use faer::prelude::*;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FitError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample {index}: {forces} force rows for {atoms} atoms")]
    ShapeMismatch { index: usize, forces: usize, atoms: usize },
    #[error("knot_count must be at least 4, got {0}")]
    TooFewKnots(usize),
    #[error("fit window [{lo}, {hi}] must satisfy 0 < lo < hi <= cutoff = {cutoff}")]
    BadWindow { lo: f64, hi: f64, cutoff: f64 },
    #[error("no pair distances fall in knot intervals {}", format_intervals(.0))]
    EmptyIntervals(Vec<[f64; 2]>),
    #[error("sample {index}: {reason}")]
    Geometry { index: usize, reason: String },
    #[error("normal equations could not be solved")]
    Singular,
    #[error("spline construction failed: {0}")]
    Spline(#[from] super::SplineError),
}

fn format_intervals(v: &[[f64; 2]]) -> String {
    v.iter().map(|[a, b]| format!("[{a:.4}, {b:.4})")).collect::<Vec<_>>().join(", ")
}

/// Configurations with their reference forces.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceDataset {
    samples: Vec<(Configuration, Vec<Vec3>)>,
}

impl ForceDataset {
    pub fn new(samples: Vec<(Configuration, Vec<Vec3>)>) -> Result<Self, FitError> {
        for (index, (c, f)) in samples.iter().enumerate() {
            if c.len() != f.len() {
                return Err(FitError::ShapeMismatch { index, forces: f.len(), atoms: c.len() });
            }
        }
        Ok(Self { samples })
    }

    /// Labels each configuration with the forces of `model`.
    pub fn label<M: super::PairPotential + ?Sized>(
        model: &M,
        configs: impl IntoIterator<Item = Configuration>,
    ) -> Result<Self, super::ForceError> {
        let samples = configs
            .into_iter()
            .map(|c| super::evaluate_fresh(model, &c).map(|ev| (c, ev.forces)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(Configuration, Vec<Vec3>)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn extend(&mut self, other: ForceDataset) {
        self.samples.extend(other.samples);
    }

    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (c, f) in &self.samples {
            h.update(c.content_hash().as_bytes());
            for x in f.iter().flatten() {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Smallest and largest pair distance below `reach` across all samples.
    pub fn pair_distance_range(&self, reach: f64) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for (c, _) in &self.samples {
            let nl = build_neighbor_list(c, reach, 0.0).ok()?;
            for (i, j) in nl.pairs() {
                let d = c.cell().minimum_image(crate::system::sub(c.positions()[i], c.positions()[j]));
                let r = crate::system::norm2(d).sqrt();
                if r < reach {
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
            }
        }
        (lo.is_finite()).then_some((lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub knot_count: usize,
    pub window: [f64; 2],
    pub lambda: f64,
    /// Model cutoff; defaults to the top of the window.
    pub cutoff: Option<f64>,
    pub extrapolation: Extrapolation,
    pub spacing: KnotSpacing,
    pub max_iterations: usize,
    /// Stop once the relative objective change drops below this.
    pub tolerance: f64,
}

impl FitOptions {
    pub fn new(knot_count: usize, window: [f64; 2], lambda: f64) -> Self {
        Self {
            knot_count,
            window,
            lambda,
            cutoff: None,
            extrapolation: Extrapolation::Linear,
            spacing: KnotSpacing::default(),
            max_iterations: 2000,
            tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss_total: f64,
    pub loss_l1: f64,
    pub loss_penalty: f64,
    pub lambda: f64,
    pub force_mae: f64,
    pub force_stddev: f64,
    pub r_squared: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub samples: usize,
    pub components: usize,
}

/// Fits with default options (crowded knots, linear extrapolation).
pub fn fit_surrogate(
    dataset: &ForceDataset,
    knot_count: usize,
    fit_window: [f64; 2],
    lambda: f64,
) -> Result<(SplinePairModel, FitReport), FitError> {
    fit_surrogate_with(dataset, &FitOptions::new(knot_count, fit_window, lambda))
}

struct Design {
    a: Mat<f64>,
    y: Vec<f64>,
    /// Objective weight per row.
    c: Vec<f64>,
    data_rows: usize,
}

pub fn fit_surrogate_with(dataset: &ForceDataset, opts: &FitOptions) -> Result<(SplinePairModel, FitReport), FitError> {
    if dataset.is_empty() {
        return Err(FitError::EmptyDataset);
    }
    if opts.knot_count < 4 {
        return Err(FitError::TooFewKnots(opts.knot_count));
    }
    let [lo, hi] = opts.window;
    let cutoff = opts.cutoff.unwrap_or(hi);
    if !(lo > 0.0 && lo < hi && hi <= cutoff) {
        return Err(FitError::BadWindow { lo, hi, cutoff });
    }
    let knots = opts.spacing.knots(lo, hi, opts.knot_count);
    let design = assemble(dataset, &knots, opts)?;
    let p = 2 * knots.len();

    let objective = |theta: &[f64]| -> (f64, f64) {
        let res = residuals(&design, theta);
        let l1: f64 = res[..design.data_rows].iter().zip(&design.c).map(|(r, c)| c * r.abs()).sum();
        let pen_weight = 1.0 / dataset.len() as f64;
        let pen: f64 = res[design.data_rows..].iter().map(|r| pen_weight * r.abs()).sum();
        (l1, pen)
    };

    let scale = design.y[..design.data_rows].iter().map(|v| v.abs()).sum::<f64>() / design.data_rows as f64;
    let floor = 1e-9 * scale.max(f64::MIN_POSITIVE);
    let mut w: Vec<f64> = design.c.clone();
    let mut theta = solve_weighted(&design, &w, p)?;
    let (mut l1, mut pen) = objective(&theta);
    let mut total = l1 + opts.lambda * pen;
    let mut iterations = 0;
    let mut converged = total == 0.0;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let res = residuals(&design, &theta);
        for (i, r) in res.iter().enumerate() {
            w[i] = design.c[i] / r.abs().max(floor);
        }
        let next = solve_weighted(&design, &w, p)?;
        let (nl1, npen) = objective(&next);
        let ntotal = nl1 + opts.lambda * npen;
        let change = (total - ntotal).abs() / total.max(f64::MIN_POSITIVE);
        // A step that does not lower the objective would repeat forever.
        if ntotal > total {
            converged = true;
            break;
        }
        theta = next;
        l1 = nl1;
        pen = npen;
        total = ntotal;
        if change < opts.tolerance || ntotal == 0.0 {
            converged = true;
        }
    }

    let values: Vec<f64> = (0..knots.len()).map(|k| theta[2 * k]).collect();
    let slopes: Vec<f64> = (0..knots.len()).map(|k| theta[2 * k + 1]).collect();
    let mut model = SplinePairModel::from_hermite(knots, &values, &slopes, cutoff, opts.extrapolation)?;
    model.set_provenance(SplineProvenance { dataset_hash: dataset.content_hash(), lambda: opts.lambda, loss: total });

    let mut predicted = Vec::with_capacity(dataset.len());
    for (index, (c, _)) in dataset.samples().iter().enumerate() {
        let ev = super::evaluate_fresh(&model, c).map_err(|e| FitError::Geometry { index, reason: e.to_string() })?;
        predicted.push(ev.forces);
    }
    let reference: Vec<Vec<Vec3>> = dataset.samples().iter().map(|(_, f)| f.clone()).collect();
    let stats = force_error_stats(&predicted, &reference).map_err(|e| FitError::Geometry { index: 0, reason: e.to_string() })?;

    let report = FitReport {
        loss_total: total,
        loss_l1: l1,
        loss_penalty: pen,
        lambda: opts.lambda,
        force_mae: stats.mae,
        force_stddev: stats.stddev,
        r_squared: stats.r_squared,
        iterations,
        converged,
        samples: dataset.len(),
        components: design.data_rows,
    };
    Ok((model, report))
}

fn assemble(dataset: &ForceDataset, knots: &[f64], opts: &FitOptions) -> Result<Design, FitError> {
    let p = 2 * knots.len();
    let hi = knots[knots.len() - 1];
    let data_rows: usize = dataset.samples().iter().map(|(c, _)| 3 * c.len()).sum();
    let rows = data_rows + 3 * dataset.len();
    let mut a = Mat::<f64>::zeros(rows, p);
    let mut y = vec![0.0; rows];
    let mut coverage = vec![0usize; knots.len() - 1];
    let mut basis = Vec::with_capacity(4);

    let mut base = 0;
    for (index, (c, f)) in dataset.samples().iter().enumerate() {
        let nl = build_neighbor_list(c, hi, 0.0).map_err(|e| FitError::Geometry { index, reason: e.to_string() })?;
        let pos = c.positions();
        for (i, j) in nl.pairs() {
            let d = c.cell().minimum_image(crate::system::sub(pos[i], pos[j]));
            let r = crate::system::norm2(d).sqrt();
            if r >= hi {
                continue;
            }
            if r >= knots[0] {
                let k = knots.partition_point(|&x| x <= r).max(1) - 1;
                coverage[k.min(knots.len() - 2)] += 1;
            }
            SplinePairModel::basis(knots, opts.extrapolation, r, &mut basis);
            for &(col, b) in &basis {
                for ax in 0..3 {
                    let v = b * d[ax] / r;
                    a[(base + 3 * i + ax, col)] += v;
                    a[(base + 3 * j + ax, col)] -= v;
                }
            }
        }
        for (i, fi) in f.iter().enumerate() {
            for ax in 0..3 {
                y[base + 3 * i + ax] = fi[ax];
            }
        }
        base += 3 * c.len();
    }

    let empty: Vec<[f64; 2]> = coverage
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0)
        .map(|(k, _)| [knots[k], knots[k + 1]])
        .collect();
    if !empty.is_empty() {
        return Err(FitError::EmptyIntervals(empty));
    }

    // Penalty rows: mean predicted force of each configuration.
    let mut start = 0;
    for (s, (c, _)) in dataset.samples().iter().enumerate() {
        let n = c.len();
        for ax in 0..3 {
            let row = data_rows + 3 * s + ax;
            for col in 0..p {
                let mut sum = 0.0;
                for i in 0..n {
                    sum += a[(start + 3 * i + ax, col)];
                }
                a[(row, col)] = sum / n as f64;
            }
        }
        start += 3 * n;
    }

    let mut cw = vec![1.0 / data_rows as f64; rows];
    for v in cw[data_rows..].iter_mut() {
        *v = opts.lambda / dataset.len() as f64;
    }
    Ok(Design { a, y, c: cw, data_rows })
}

fn residuals(d: &Design, theta: &[f64]) -> Vec<f64> {
    let t = Mat::<f64>::from_fn(theta.len(), 1, |i, _| theta[i]);
    let pred = &d.a * &t;
    (0..d.y.len()).map(|i| pred[(i, 0)] - d.y[i]).collect()
}

fn solve_weighted(d: &Design, w: &[f64], p: usize) -> Result<Vec<f64>, FitError> {
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let b = Mat::<f64>::from_fn(d.a.nrows(), p, |i, j| sw[i] * d.a[(i, j)]);
    let mut normal = b.transpose() * &b;
    let wy = Mat::<f64>::from_fn(d.a.nrows(), 1, |i, _| sw[i] * d.y[i]);
    let rhs = b.transpose() * &wy;
    let trace: f64 = (0..p).map(|i| normal[(i, i)]).sum::<f64>() / p as f64;
    let mut ridge = 1e-13 * trace;
    for _ in 0..6 {
        for i in 0..p {
            normal[(i, i)] += ridge;
        }
        if let Ok(llt) = normal.llt(Side::Lower) {
            let x = llt.solve(&rhs);
            let v: Vec<f64> = (0..p).map(|i| x[(i, 0)]).collect();
            if v.iter().all(|x| x.is_finite()) {
                return Ok(v);
            }
        }
        ridge *= 100.0;
    }
    Err(FitError::Singular)
}
