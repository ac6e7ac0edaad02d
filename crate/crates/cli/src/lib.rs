//! Command-line driver: simulate, fit, single tests, full benchmarks and
//! trajectory conversion.
//!
//! Exit codes: 0 all tests passed, 1 a test failed, 2 usage or configuration
//! error, 3 runtime error.

pub mod bench;
pub mod config;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use ffbench::forcefield::PairPotential;
use ffbench::io::{read_extxyz, read_lammps_dump, write_extxyz, write_json, write_text, DumpOptions, IoError};
use ffbench::md::{run_protocol_with, RunOptions};
use ffbench::system::{Configuration, Trajectory};
use std::path::{Path, PathBuf};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Runtime(_) | CliError::Io(_) => EXIT_RUNTIME,
        }
    }
}

pub(crate) fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "ffbench", version, about = "Benchmark a candidate pair force field against a reference on argon")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true, env = "FFBENCH_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a protocol with one model and write the sampled trajectory.
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long)]
        protocol: String,
        /// Checkpoint file; an existing one is resumed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit a spline surrogate to forces of a reference model.
    Fit {
        #[arg(long)]
        reference: String,
        /// Where to write the fitted model (JSON).
        #[arg(long)]
        output: PathBuf,
        /// Training frames from an extxyz trajectory...
        #[arg(long, conflicts_with = "protocol")]
        trajectory: Option<PathBuf>,
        /// ...or from running this protocol with the reference.
        #[arg(long)]
        protocol: Option<String>,
        /// Otherwise thermally displaced crystals at this temperature, K.
        #[arg(long, default_value_t = 60.0)]
        temperature: f64,
        #[arg(long, default_value_t = 4)]
        cells: usize,
        /// Training configurations used.
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 40)]
        knots: usize,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
    },
    /// Run one benchmark test.
    Test {
        /// One of forces, rdf, sq, msd, xpcs, contrast, pdos, symmetricity, melt.
        name: String,
    },
    /// Run every test listed in [benchmark] and write report.json/report.txt.
    Benchmark,
    /// Convert a LAMMPS dump or extxyz file to extxyz.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Timestep of the dump's TIMESTEP counter, fs.
        #[arg(long, default_value_t = 1.0)]
        timestep_fs: f64,
        /// Mass for every atom type, amu.
        #[arg(long, default_value_t = ffbench::units::ARGON_MASS)]
        mass: f64,
    },
}

/// Parses arguments, runs, and maps the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    let go = || match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    match cli.global.threads {
        Some(n) => ffbench::par::with_threads(n, go),
        None => go(),
    }
}

fn load_config(g: &Global) -> Result<RunConfig, CliError> {
    let path = g.config.as_ref().ok_or_else(|| CliError::Usage("--config is required for this command".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn output_dir(g: &Global, cfg: Option<&RunConfig>) -> PathBuf {
    match (&g.out, cfg) {
        (Some(o), _) => o.clone(),
        (None, Some(c)) => c.resolve(&c.output_dir),
        (None, None) => PathBuf::from("."),
    }
}

pub fn run(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::Simulate { model, protocol, checkpoint } => {
            let cfg = load_config(&cli.global)?;
            let out = output_dir(&cli.global, Some(&cfg));
            simulate(&cfg, model, protocol, checkpoint.clone(), &out)?;
            Ok(EXIT_PASS)
        }
        Command::Fit { reference, output, trajectory, protocol, temperature, cells, frames, knots, lambda } => {
            let cfg = load_config(&cli.global)?;
            let model = cfg.model(reference)?;
            let configs = match (trajectory, protocol) {
                (Some(p), _) => pick_frames(read_extxyz(p)?.into_frames(), *frames),
                (None, Some(id)) => {
                    let (spec, init) = cfg.protocol(id)?;
                    let run = run_protocol_with(&spec, &model, init, &RunOptions::default()).map_err(runtime)?;
                    pick_frames(run.trajectory.into_frames(), *frames)
                }
                (None, None) => ffbench::workflow::solid_snapshots(*cells, 0.858, ffbench::units::ARGON_MASS, *temperature, *frames, cfg.seed).map_err(runtime)?,
            };
            let (surrogate, report) = ffbench::workflow::fit_on(&model, configs, *knots, *lambda).map_err(runtime)?;
            write_text(output, &surrogate.to_json())?;
            let report_path = output.with_extension("fit.json");
            write_json(&report_path, &report)?;
            println!(
                "fitted {} knots: force MAE {:.5} eV/Å, R² {}, {} iterations{}",
                surrogate.knots().len(),
                report.force_mae,
                report.r_squared.map_or("n/a".into(), |r| format!("{r:.5}")),
                report.iterations,
                if report.converged { "" } else { " (not converged)" }
            );
            Ok(EXIT_PASS)
        }
        Command::Test { name } => {
            let cfg = load_config(&cli.global)?;
            if !config::TEST_NAMES.contains(&name.as_str()) {
                return Err(CliError::Usage(format!("unknown test `{name}`; known: {}", config::TEST_NAMES.join(", "))));
            }
            let out = output_dir(&cli.global, Some(&cfg));
            let report = bench::run_benchmark(&cfg, &[name.clone()], &out)?;
            print!("{}", report.to_text());
            Ok(report.exit_code())
        }
        Command::Benchmark => {
            let cfg = load_config(&cli.global)?;
            let out = output_dir(&cli.global, Some(&cfg));
            let tests = cfg.benchmark()?.tests.clone();
            let report = bench::run_benchmark(&cfg, &tests, &out)?;
            print!("{}", report.to_text());
            Ok(report.exit_code())
        }
        Command::Convert { input, output, timestep_fs, mass } => {
            let traj = read_any(input, *timestep_fs, *mass)?;
            write_extxyz(&traj, output)?;
            println!("{} frames, {} atoms -> {}", traj.len(), traj.atom_count(), output.display());
            Ok(EXIT_PASS)
        }
    }
}

/// Runs `protocol` with `model`; writes `<model>-<protocol>.extxyz` and a stage summary.
pub fn simulate(cfg: &RunConfig, model_id: &str, protocol_id: &str, checkpoint: Option<PathBuf>, out: &Path) -> Result<Trajectory, CliError> {
    let model = cfg.model(model_id)?;
    let (spec, init) = cfg.protocol(protocol_id)?;
    if spec.frame_interval_fs().is_none() {
        return Err(CliError::Config(format!("protocol `{protocol_id}` samples no frames")));
    }
    let run = run_protocol_with(&spec, &model, init, &RunOptions { checkpoint, frozen: None }).map_err(runtime)?;
    let path = out.join(format!("{model_id}-{protocol_id}.extxyz"));
    write_extxyz(&run.trajectory, &path)?;
    write_json(&out.join(format!("{model_id}-{protocol_id}.stages.json")), &run.stages)?;
    eprintln!("{}: {} frames of {} atoms -> {}", model.label(), run.trajectory.len(), run.trajectory.atom_count(), path.display());
    Ok(run.trajectory)
}

fn read_any(path: &Path, timestep_fs: f64, mass: f64) -> Result<Trajectory, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match ext.as_str() {
        "xyz" | "extxyz" => Ok(read_extxyz(path)?),
        "dump" | "lammpstrj" | "lammps" => {
            let opts = DumpOptions { timestep_fs, default_mass: mass, ..Default::default() };
            let d = read_lammps_dump(path, &opts)?;
            if d.velocities_missing {
                eprintln!("warning: {} has no velocities; wrote zeros", path.display());
            }
            Ok(d.trajectory)
        }
        _ => Err(CliError::Usage(format!("{}: unknown extension; expected .xyz/.extxyz or .dump/.lammpstrj", path.display()))),
    }
}

/// `count` frames evenly spaced over the run, last frame included.
pub fn pick_frames(frames: Vec<Configuration>, count: usize) -> Vec<Configuration> {
    let n = frames.len();
    if count == 0 || n <= count {
        return frames;
    }
    let keep: Vec<usize> = (0..count).map(|k| (n - 1) - (count - 1 - k) * (n - 1) / (count - 1).max(1)).collect();
    frames.into_iter().enumerate().filter(|(i, _)| keep.contains(i)).map(|(_, f)| f).collect()
}
