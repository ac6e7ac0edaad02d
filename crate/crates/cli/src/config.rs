//! Run configuration (TOML).
//!
//! ```toml
//! seed = 2024
//! output_dir = "out"
//!
//! [models.lj]
//! kind = "lennard_jones"
//! epsilon = 0.0103
//! sigma = 3.40
//! cutoff = 8.5
//! shift_energy = false
//!
//! [models.surrogate]
//! kind = "spline_file"
//! path = "surrogate.json"
//!
//! [protocols.liquid]
//! kind = "liquid"
//! cells = 6
//! temperature_k = 100.0
//!
//! [benchmark]
//! reference = "lj"
//! candidate = "surrogate"
//! protocol = "liquid"
//! tests = ["forces", "rdf", "msd"]
//!
//! [tests.msd]
//! tolerance = 0.15
//! ```

use crate::CliError;
use ffbench::forcefield::{ForceModel, LennardJonesModel, SplinePairModel, ZeroForceModel};
use ffbench::md::ProtocolSpec;
use ffbench::melting::CoexistenceSettings;
use ffbench::workflow::{LiquidRun, XpcsSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const TEST_NAMES: [&str; 9] = ["forces", "rdf", "sq", "msd", "xpcs", "contrast", "pdos", "symmetricity", "melt"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelDef {
    LennardJones {
        #[serde(default = "argon_epsilon")]
        epsilon: f64,
        #[serde(default = "argon_sigma")]
        sigma: f64,
        #[serde(default = "argon_cutoff")]
        cutoff: f64,
        #[serde(default)]
        shift_energy: bool,
    },
    SplineFile {
        path: PathBuf,
    },
    Zero {
        #[serde(default = "argon_cutoff")]
        cutoff: f64,
    },
}

fn argon_epsilon() -> f64 {
    ffbench::units::ARGON_EPSILON
}
fn argon_sigma() -> f64 {
    ffbench::units::ARGON_SIGMA
}
fn argon_cutoff() -> f64 {
    2.5 * ffbench::units::ARGON_SIGMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProtocolDef {
    /// Melt, equilibrate and sample a liquid from an FCC start.
    Liquid(LiquidRun),
    /// A protocol TOML file run from an FCC start.
    File {
        path: PathBuf,
        #[serde(default = "default_cells")]
        cells: usize,
        #[serde(default = "default_density")]
        density: f64,
    },
}

fn default_cells() -> usize {
    4
}
fn default_density() -> f64 {
    0.858
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDef {
    pub reference: String,
    pub candidate: String,
    pub protocol: String,
    #[serde(default = "all_tests")]
    pub tests: Vec<String>,
}

fn all_tests() -> Vec<String> {
    TEST_NAMES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForcesTest {
    /// Largest accepted force MAE, eV/Å.
    pub tolerance: f64,
    pub frames: usize,
}

impl Default for ForcesTest {
    fn default() -> Self {
        Self { tolerance: 0.01, frames: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RdfTest {
    /// Largest accepted mean |Δg(r)|.
    pub tolerance: f64,
    pub bins: usize,
    pub stride: usize,
}

impl Default for RdfTest {
    fn default() -> Self {
        Self { tolerance: 0.05, bins: 200, stride: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqTest {
    /// Largest accepted mean |ΔS(q)|.
    pub tolerance: f64,
    pub q_max: f64,
    pub dq: f64,
    pub stride: usize,
}

impl Default for SqTest {
    fn default() -> Self {
        Self { tolerance: 0.1, q_max: 4.0, dq: 0.05, stride: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelativeTest {
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct XpcsTest {
    /// Relative tolerance on Γ in the contrast bin.
    pub tolerance: f64,
    pub settings: XpcsSettings,
}

impl Default for XpcsTest {
    fn default() -> Self {
        Self { tolerance: 0.25, settings: XpcsSettings::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastTest {
    /// Absolute tolerance on the correlation time, ps.
    pub tolerance: f64,
}

impl Default for ContrastTest {
    fn default() -> Self {
        Self { tolerance: 0.3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdosTest {
    /// Largest accepted histogram L1 distance.
    pub tolerance: f64,
    pub cells: usize,
    pub bins: usize,
    pub displacement: f64,
}

impl Default for PdosTest {
    fn default() -> Self {
        Self { tolerance: 0.1, cells: 4, bins: 50, displacement: ffbench::solid::DEFAULT_DISPLACEMENT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SymmetricityTest {
    /// Candidate must reach 1 − tolerance. Uses the Hessian of the pdos test.
    pub tolerance: f64,
}

impl Default for SymmetricityTest {
    fn default() -> Self {
        Self { tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeltTest {
    /// Absolute tolerance on T_melt, K.
    pub tolerance: f64,
    pub temperatures: Vec<f64>,
    pub half_cells: [usize; 3],
    pub coexistence: CoexistenceSettings,
}

impl Default for MeltTest {
    fn default() -> Self {
        Self { tolerance: 3.0, temperatures: ffbench::melting::DEFAULT_TEMPERATURES.to_vec(), half_cells: [6, 6, 6], coexistence: CoexistenceSettings::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestSettings {
    pub forces: ForcesTest,
    pub rdf: RdfTest,
    pub sq: SqTest,
    pub msd: RelativeTest,
    pub xpcs: XpcsTest,
    pub contrast: ContrastTest,
    pub pdos: PdosTest,
    pub symmetricity: SymmetricityTest,
    pub melt: MeltTest,
}

impl Default for RelativeTest {
    fn default() -> Self {
        Self { tolerance: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub models: BTreeMap<String, ModelDef>,
    #[serde(default)]
    pub protocols: BTreeMap<String, ProtocolDef>,
    pub benchmark: Option<BenchmarkDef>,
    #[serde(default)]
    pub tests: TestSettings,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(skip)]
    pub hash: String,
}

fn default_out() -> PathBuf {
    PathBuf::from("ffbench-out")
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut c = Self::parse(&text)?;
        c.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.hash = hex::encode(&Sha256::digest(text.as_bytes())[..8]);
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<(), CliError> {
        if let Some(b) = &self.benchmark {
            for id in [&b.reference, &b.candidate] {
                if !self.models.contains_key(id) {
                    return Err(CliError::Config(format!("benchmark refers to undefined model `{id}`")));
                }
            }
            if !self.protocols.contains_key(&b.protocol) {
                return Err(CliError::Config(format!("benchmark refers to undefined protocol `{}`", b.protocol)));
            }
            for t in &b.tests {
                if !TEST_NAMES.contains(&t.as_str()) {
                    return Err(CliError::Config(format!("unknown test `{t}`; known: {}", TEST_NAMES.join(", "))));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn benchmark(&self) -> Result<&BenchmarkDef, CliError> {
        self.benchmark.as_ref().ok_or_else(|| CliError::Config("config has no [benchmark] section".into()))
    }

    pub fn model(&self, id: &str) -> Result<ForceModel, CliError> {
        let def = self.models.get(id).ok_or_else(|| {
            CliError::Usage(format!("unknown model `{id}`; defined: {}", self.models.keys().cloned().collect::<Vec<_>>().join(", ")))
        })?;
        Ok(match def {
            ModelDef::LennardJones { epsilon, sigma, cutoff, shift_energy } => ForceModel::LennardJones(
                LennardJonesModel::new(*epsilon, *sigma, *cutoff, *shift_energy).map_err(|e| CliError::Config(format!("model `{id}`: {e}")))?,
            ),
            ModelDef::SplineFile { path } => {
                let p = self.resolve(path);
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::Config(format!("model `{id}`: {}: {e}", p.display())))?;
                ForceModel::Spline(Box::new(SplinePairModel::from_json(&text).map_err(|e| CliError::Config(format!("model `{id}`: {e}")))?))
            }
            ModelDef::Zero { cutoff } => ForceModel::Zero(ZeroForceModel { cutoff: *cutoff }),
        })
    }

    /// Protocol with its initial configuration, seeded from the run seed.
    pub fn protocol(&self, id: &str) -> Result<(ProtocolSpec, ffbench::system::Configuration), CliError> {
        let def = self.protocols.get(id).ok_or_else(|| {
            CliError::Usage(format!("unknown protocol `{id}`; defined: {}", self.protocols.keys().cloned().collect::<Vec<_>>().join(", ")))
        })?;
        match def {
            ProtocolDef::Liquid(run) => {
                let run = LiquidRun { seed: self.seed, ..run.clone() };
                let init = run.initial().map_err(|e| CliError::Config(format!("protocol `{id}`: {e}")))?;
                Ok((run.protocol(), init))
            }
            ProtocolDef::File { path, cells, density } => {
                let p = self.resolve(path);
                let text = std::fs::read_to_string(&p).map_err(|e| CliError::Config(format!("protocol `{id}`: {}: {e}", p.display())))?;
                let spec = ProtocolSpec::from_toml(&text).map_err(|e| CliError::Config(format!("protocol `{id}`: {e}")))?.with_seed(self.seed);
                let init = ffbench::solid::build_fcc(*cells, *density, ffbench::units::ARGON_MASS).map_err(|e| CliError::Config(format!("protocol `{id}`: {e}")))?;
                Ok((spec, init))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[models.lj]
kind = "lennard_jones"
[models.none]
kind = "zero"
[protocols.liquid]
kind = "liquid"
cells = 4
production_ps = 1.078
[benchmark]
reference = "lj"
candidate = "none"
protocol = "liquid"
tests = ["forces"]
[tests.forces]
tolerance = 0.02
"#;

    #[test]
    fn parses_and_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.tests.forces.tolerance, 0.02);
        assert_eq!(c.tests.msd.tolerance, 0.15);
        assert!(matches!(c.model("lj").unwrap(), ForceModel::LennardJones(m) if m.cutoff == 8.5));
        let (spec, init) = c.protocol("liquid").unwrap();
        assert_eq!(init.len(), 256);
        assert_eq!(spec.stages.last().unwrap().seed, 9);
    }

    #[test]
    fn rejects_dangling_references_and_missing_seed() {
        assert!(matches!(RunConfig::parse(&MINIMAL.replace("candidate = \"none\"", "candidate = \"gnn\"")), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse(&MINIMAL.replace("seed = 7", "")), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse(&MINIMAL.replace("[\"forces\"]", "[\"speed\"]")), Err(CliError::Config(_))));
    }
}
