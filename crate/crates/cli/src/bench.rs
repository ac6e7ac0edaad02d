//! Benchmark tests: each compares one observable of the candidate with the
//! reference and yields a report entry. Trajectories, XPCS analyses and
//! phonons are computed once per model and shared between tests.

use crate::config::{BenchmarkDef, RunConfig};
use crate::{runtime, CliError};
use ffbench::forcefield::{ForceModel, PairPotential};
use ffbench::io::{emit_report, write_json, write_text, BenchmarkReport, Comparison, ReportEntry, ReportMetadata};
use ffbench::md::{run_protocol_with, RunOptions};
use ffbench::melting::{run_melting, BiphasicSpec};
use ffbench::structure::{max_rdf_radius, pair_distribution, structure_factor_isotropic};
use ffbench::system::Trajectory;
use ffbench::workflow::{diffusion, force_comparison, phonons, speckles, xpcs_analysis, Phonons, XpcsAnalysis};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

const SIDES: [&str; 2] = ["reference", "candidate"];

struct Bench<'a> {
    cfg: &'a RunConfig,
    def: &'a BenchmarkDef,
    out: PathBuf,
    models: [ForceModel; 2],
    /// Candidate and reference are the same model; run it once.
    same: bool,
    trajectories: [Option<Trajectory>; 2],
    xpcs: [Option<XpcsAnalysis>; 2],
    phonons: [Option<Phonons>; 2],
}

impl<'a> Bench<'a> {
    fn side(&self, k: usize) -> usize {
        if self.same {
            0
        } else {
            k
        }
    }

    fn dir(&self, k: usize) -> PathBuf {
        self.out.join(SIDES[k])
    }

    fn ensure_trajectory(&mut self, k: usize) -> Result<(), CliError> {
        let k = self.side(k);
        if self.trajectories[k].is_some() {
            return Ok(());
        }
        let (spec, init) = self.cfg.protocol(&self.def.protocol)?;
        if spec.frame_interval_fs().is_none() {
            return Err(CliError::Config(format!("protocol `{}` samples no frames", self.def.protocol)));
        }
        let dir = self.dir(k);
        let opts = RunOptions { checkpoint: Some(dir.join("run.checkpoint")), frozen: None };
        let run = run_protocol_with(&spec, &self.models[k], init, &opts).map_err(runtime)?;
        ffbench::io::write_extxyz(&run.trajectory, &dir.join("trajectory.extxyz"))?;
        write_json(&dir.join("stages.json"), &run.stages)?;
        self.trajectories[k] = Some(run.trajectory);
        Ok(())
    }

    fn trajectories(&mut self) -> Result<[&Trajectory; 2], CliError> {
        self.ensure_trajectory(0)?;
        self.ensure_trajectory(1)?;
        let (a, b) = (self.side(0), self.side(1));
        Ok([self.trajectories[a].as_ref().unwrap(), self.trajectories[b].as_ref().unwrap()])
    }

    fn xpcs(&mut self) -> Result<[&XpcsAnalysis; 2], CliError> {
        for k in 0..2 {
            let s = self.side(k);
            if self.xpcs[s].is_none() {
                self.ensure_trajectory(s)?;
                let settings = &self.cfg.tests.xpcs.settings;
                let series = speckles(self.trajectories[s].as_ref().unwrap(), settings).map_err(runtime)?;
                let a = xpcs_analysis(&series, settings).map_err(runtime)?;
                write_json(&self.dir(s).join("xpcs.json"), &a)?;
                self.xpcs[s] = Some(a);
            }
        }
        Ok([self.xpcs[self.side(0)].as_ref().unwrap(), self.xpcs[self.side(1)].as_ref().unwrap()])
    }

    fn phonons(&mut self) -> Result<[&Phonons; 2], CliError> {
        let t = &self.cfg.tests.pdos;
        for k in 0..2 {
            let s = self.side(k);
            if self.phonons[s].is_none() {
                let p = phonons(&self.models[s], t.cells, 0.858, ffbench::units::ARGON_MASS, t.displacement, t.bins, None).map_err(runtime)?;
                write_text(&self.dir(s).join("pdos.csv"), &p.pdos.to_csv())?;
                self.phonons[s] = Some(p);
            }
        }
        Ok([self.phonons[self.side(0)].as_ref().unwrap(), self.phonons[self.side(1)].as_ref().unwrap()])
    }

    fn run_test(&mut self, name: &str) -> Result<ReportEntry, CliError> {
        let t = self.cfg.tests.clone();
        match name {
            "forces" => {
                let frames = crate::pick_frames(self.trajectories()?[0].frames().to_vec(), t.forces.frames);
                let stats = force_comparison(&self.models[0], &self.models[1], &frames).map_err(runtime)?;
                let path = self.out.join("forces.json");
                write_json(&path, &stats)?;
                Ok(ReportEntry::compare("force_mae", 0.0, stats.mae, Comparison::AtMost, t.forces.tolerance)
                    .with_unit("eV/Å")
                    .with_note(format!("{} frames of the reference run", frames.len()))
                    .with_artifact(path))
            }
            "rdf" => {
                let [a, b] = self.trajectories()?;
                let r_max = max_rdf_radius(a.frames()[0].cell()).min(max_rdf_radius(b.frames()[0].cell()));
                let ga = pair_distribution(a, r_max, t.rdf.bins, t.rdf.stride).map_err(runtime)?;
                let gb = pair_distribution(b, r_max, t.rdf.bins, t.rdf.stride).map_err(runtime)?;
                let d = mean_abs_diff(&ga.g, &gb.g)?;
                let (pa, pb) = (ga.first_peak(), gb.first_peak());
                let paths = [self.dir(0).join("rdf.csv"), self.dir(1).join("rdf.csv")];
                write_text(&paths[0], &ga.to_csv())?;
                write_text(&paths[1], &gb.to_csv())?;
                Ok(ReportEntry::compare("rdf_mean_abs_diff", 0.0, d, Comparison::AtMost, t.rdf.tolerance)
                    .with_note(format!("first peak {:.3} Å / {:.3} Å, height {:.3} / {:.3}", pa.0, pb.0, pa.1, pb.1))
                    .with_artifact(&paths[0])
                    .with_artifact(&paths[1]))
            }
            "sq" => {
                let [a, b] = self.trajectories()?;
                let sa = structure_factor_isotropic(a, t.sq.q_max, t.sq.dq, t.sq.stride).map_err(runtime)?;
                let sb = structure_factor_isotropic(b, t.sq.q_max, t.sq.dq, t.sq.stride).map_err(runtime)?;
                if sa.q.len() != sb.q.len() {
                    return Err(CliError::Runtime("S(q) grids differ; the two runs ended in different cells".into()));
                }
                let d = mean_abs_diff(&sa.s, &sb.s)?;
                let paths = [self.dir(0).join("sq.csv"), self.dir(1).join("sq.csv")];
                write_text(&paths[0], &sa.to_csv())?;
                write_text(&paths[1], &sb.to_csv())?;
                Ok(ReportEntry::compare("sq_mean_abs_diff", 0.0, d, Comparison::AtMost, t.sq.tolerance).with_artifact(&paths[0]).with_artifact(&paths[1]))
            }
            "msd" => {
                let [a, b] = self.trajectories()?;
                let da = diffusion(a).map_err(runtime)?;
                let db = diffusion(b).map_err(runtime)?;
                let paths = [self.dir(0).join("msd.csv"), self.dir(1).join("msd.csv")];
                write_text(&paths[0], &da.msd.to_csv())?;
                write_text(&paths[1], &db.msd.to_csv())?;
                Ok(ReportEntry::compare("diffusivity", da.fit.d_um2_per_s, db.fit.d_um2_per_s, Comparison::Relative, t.msd.tolerance)
                    .with_unit("μm²/s")
                    .with_note(format!("fit window {:.2}-{:.2} ps", da.fit.window_ps[0], da.fit.window_ps[1]))
                    .with_artifact(&paths[0])
                    .with_artifact(&paths[1]))
            }
            "xpcs" => {
                let q = t.xpcs.settings.contrast_bin.center;
                let [a, b] = self.xpcs()?;
                let gamma = |x: &XpcsAnalysis| -> Result<f64, CliError> {
                    x.bin(q)
                        .and_then(|b| b.decay.as_ref())
                        .map(|d| d.gamma_per_ps)
                        .ok_or_else(|| CliError::Runtime(format!("no g2 decay fit at q = {q} Å⁻¹")))
                };
                Ok(ReportEntry::compare(&format!("xpcs_gamma_q{q}"), gamma(a)?, gamma(b)?, Comparison::Relative, t.xpcs.tolerance).with_unit("1/ps"))
            }
            "contrast" => {
                let q = t.xpcs.settings.contrast_bin.center;
                let [a, b] = self.xpcs()?;
                let tau = |x: &XpcsAnalysis| -> Result<f64, CliError> {
                    x.bin(q)
                        .and_then(|b| b.correlation_time)
                        .map(|c| c.tau_ps)
                        .ok_or_else(|| CliError::Runtime(format!("contrast never halves at q = {q} Å⁻¹")))
                };
                Ok(ReportEntry::compare("contrast_correlation_time", tau(a)?, tau(b)?, Comparison::Absolute, t.contrast.tolerance).with_unit("ps"))
            }
            "pdos" => {
                let [a, b] = self.phonons()?;
                // Common frequency range so the histograms are comparable.
                let nu_max = a.pdos.max_frequency().max(b.pdos.max_frequency());
                let bins = t.pdos.bins;
                let ha = ffbench::solid::pdos_from_eigenvalues(&squared(&a.pdos.frequencies), 1.0, bins, Some(nu_max)).map_err(runtime)?;
                let hb = ffbench::solid::pdos_from_eigenvalues(&squared(&b.pdos.frequencies), 1.0, bins, Some(nu_max)).map_err(runtime)?;
                Ok(ReportEntry::compare("pdos_l1", 0.0, ha.l1_distance(&hb), Comparison::AtMost, t.pdos.tolerance)
                    .with_artifact(self.dir(0).join("pdos.csv"))
                    .with_artifact(self.dir(self.side(1)).join("pdos.csv")))
            }
            "symmetricity" => {
                let [a, b] = self.phonons()?;
                Ok(ReportEntry::compare("hessian_symmetricity", a.symmetricity.value, b.symmetricity.value, Comparison::AtLeast, 1.0 - t.symmetricity.tolerance)
                    .with_note(format!("{}x{} Hessian", b.dimension, b.dimension)))
            }
            "melt" => {
                let spec = BiphasicSpec { half_cells: t.melt.half_cells, seed: self.cfg.seed, ..Default::default() };
                let mut tm = [0.0; 2];
                for k in 0..2 {
                    let s = self.side(k);
                    let run = run_melting(&self.models[s], &spec, &t.melt.temperatures, &t.melt.coexistence).map_err(runtime)?;
                    for (temp, p) in &run.profiles {
                        write_text(&self.dir(s).join(format!("phase_profile_{temp}K.csv")), &p.to_csv())?;
                    }
                    write_json(&self.dir(s).join("melting.json"), &run.fit)?;
                    tm[k] = run.fit.t_melt_k;
                    if self.same {
                        tm[1] = tm[0];
                        break;
                    }
                }
                Ok(ReportEntry::compare("melting_point", tm[0], tm[1], Comparison::Absolute, t.melt.tolerance).with_unit("K"))
            }
            other => Err(CliError::Usage(format!("unknown test `{other}`"))),
        }
    }
}

/// Eigenvalues in the units `pdos_from_eigenvalues` expects for mass 1, from THz.
fn squared(nu_thz: &[f64]) -> Vec<f64> {
    let unit = ffbench::solid::eigenvalue_to_thz(1.0, 1.0);
    nu_thz.iter().map(|n| (n / unit).powi(2)).collect()
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> Result<f64, CliError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CliError::Runtime(format!("curves differ in length ({} vs {})", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

/// Runs `tests` and writes `report.json` and `report.txt` into `out`.
/// The first test that errors stops the run: it is recorded as a failed entry,
/// the partial report is written, and the error is returned.
pub fn run_benchmark(cfg: &RunConfig, tests: &[String], out: &Path) -> Result<BenchmarkReport, CliError> {
    let def = cfg.benchmark()?;
    let models = [cfg.model(&def.reference)?, cfg.model(&def.candidate)?];
    let same = models[0] == models[1];
    let mut bench = Bench { cfg, def, out: out.to_path_buf(), models, same, trajectories: [None, None], xpcs: [None, None], phonons: [None, None] };
    let mut entries = Vec::new();
    let mut run = BTreeMap::new();
    let mut failure = None;
    for name in tests {
        let start = Instant::now();
        let entry = match bench.run_test(name) {
            Ok(e) => e,
            Err(e @ (CliError::Usage(_) | CliError::Config(_))) => return Err(e),
            Err(e) => {
                let entry = ReportEntry::errored(name, e.to_string());
                failure = Some(e);
                entry
            }
        };
        run.insert(format!("wall_s.{name}"), format!("{:.1}", start.elapsed().as_secs_f64()));
        eprintln!("{} {}", if entry.passed { "PASS" } else { "FAIL" }, entry.name);
        // Artifact paths relative to the report so reports from different directories compare equal.
        let mut entry = entry;
        for a in &mut entry.artifacts {
            if let Ok(r) = a.strip_prefix(out) {
                *a = r.to_path_buf();
            }
        }
        entries.push(entry);
        if failure.is_some() {
            break;
        }
    }
    let metadata = ReportMetadata {
        reference_model: format!("{}: {}", def.reference, bench.models[0].label()),
        candidate_model: format!("{}: {}", def.candidate, bench.models[1].label()),
        seed: cfg.seed,
        config_hash: cfg.hash.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        run,
    };
    let report = BenchmarkReport::new(metadata, entries)?;
    emit_report(&report, out)?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
