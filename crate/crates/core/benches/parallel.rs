//! Parallel kernels against the same kernels pinned to one thread.
//!
//! `cargo bench -p ffbench --bench parallel` compares the rayon pool with a
//! one-thread pool; `--no-default-features` builds the sequential fallback,
//! where both variants take the same path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ffbench::forcefield::{evaluate_fresh, LennardJonesModel};
use ffbench::par::{thread_count, with_threads};
use ffbench::solid::{build_fcc, numeric_hessian};
use ffbench::structure::FormFactorTable;
use ffbench::system::Trajectory;
use ffbench::workflow::solid_snapshots;
use ffbench::xpcs::{compute_speckles, DetectorSlice};
use std::hint::black_box;

fn variants() -> Vec<(&'static str, usize)> {
    vec![("sequential", 1), ("parallel", thread_count().max(1))]
}

fn forces(c: &mut Criterion) {
    let lj = LennardJonesModel::argon();
    let config = build_fcc(8, 0.858, 39.948).unwrap();
    let mut g = c.benchmark_group("forces_2048");
    for (name, threads) in variants() {
        g.bench_function(BenchmarkId::new(name, threads), |b| b.iter(|| with_threads(threads, || evaluate_fresh(&lj, black_box(&config)).unwrap())));
    }
    g.finish();
}

fn hessian(c: &mut Criterion) {
    let lj = LennardJonesModel::argon();
    let config = build_fcc(4, 0.858, 39.948).unwrap();
    let mut g = c.benchmark_group("hessian_256");
    g.sample_size(10);
    for (name, threads) in variants() {
        g.bench_function(BenchmarkId::new(name, threads), |b| b.iter(|| with_threads(threads, || numeric_hessian(black_box(&config), &lj, 1e-4).unwrap())));
    }
    g.finish();
}

fn speckles(c: &mut Criterion) {
    let mut frames = solid_snapshots(4, 0.858, 39.948, 60.0, 20, 1).unwrap();
    for (k, f) in frames.iter_mut().enumerate() {
        f.set_time_ps(k as f64 * 0.1078);
    }
    let traj = Trajectory::new(frames, 107.8).unwrap();
    let slice = DetectorSlice::new(traj.frames()[0].cell(), 41, 41, ffbench::xpcs::DEFAULT_K_IN, ffbench::xpcs::DEFAULT_Q_COVERAGE).unwrap();
    let ff = FormFactorTable::builtin().for_species(&["Ar"]).unwrap();
    let mut g = c.benchmark_group("speckles_20x256");
    g.sample_size(10);
    for (name, threads) in variants() {
        g.bench_function(BenchmarkId::new(name, threads), |b| b.iter(|| with_threads(threads, || compute_speckles(black_box(&traj), &slice, &ff).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, forces, hessian, speckles);
criterion_main!(benches);
