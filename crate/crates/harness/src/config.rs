//! Experiment description files.
//!
//! An experiment is a TOML document:
//!
//! ```toml
//! schema_version = 1
//! repetitions = 3
//! seed_base = 0
//! output_dir = "out"
//!
//! [world.procedural]
//! seed = 7
//!
//! [world.procedural.spec]
//! rooms = 3
//!
//! [mission]
//! t_max = 120.0
//! fusion = "occupancy"
//! oracle = "perfect"
//!
//! [mission.planner]
//! gain = "sc"
//!
//! [output]
//! thresholds = [0.5, 0.8]
//!
//! [matrix]
//! gains = ["exploration", "sc"]
//! ```
//!
//! Every field except `schema_version` and `world` has a default. Repetition
//! `r` runs with mission seed `seed_base + r`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use scx_core::layered::CollisionMode;
use scx_core::oracle::{NoiseModel, OracleMode};
use scx_core::planner::{GainKind, RaycastMode};
use scx_core::sim::{generate_world, GroundTruthWorld, MissionConfig, WorldSpec};
use scx_core::fusion::FusionStrategy;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding `output_dir`.
pub const ENV_OUTPUT_DIR: &str = "SCX_OUTPUT_DIR";
/// Environment variable setting the number of batch worker threads.
pub const ENV_JOBS: &str = "SCX_JOBS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorldSource {
    File(PathBuf),
    Procedural {
        #[serde(default)]
        seed: u64,
        /// Generate a fresh world for every repetition, seeded `seed + r`.
        #[serde(default)]
        per_repetition: bool,
        #[serde(default)]
        spec: WorldSpec,
    },
}

impl WorldSource {
    /// World used by repetition `rep`.
    pub fn load(&self, rep: usize) -> Result<GroundTruthWorld> {
        match self {
            WorldSource::File(path) => load_world_file(path),
            WorldSource::Procedural {
                seed,
                per_repetition,
                spec,
            } => {
                let s = if *per_repetition { seed.wrapping_add(rep as u64) } else { *seed };
                generate_world(spec, s).with_context(|| format!("generating world with seed {s}"))
            }
        }
    }
}

pub fn load_world_file(path: &Path) -> Result<GroundTruthWorld> {
    let f = fs::File::open(path).with_context(|| format!("cannot open world file {}", path.display()))?;
    scx_core::io::read_world(std::io::BufReader::new(f)).with_context(|| format!("cannot read world file {}", path.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputOptions {
    /// Goal fractions for the time-to-goal report, applied to E, C and M.
    pub thresholds: Vec<f64>,
    /// Write SVG line charts next to the CSV files.
    pub plots: bool,
    /// Write the final map snapshot.
    pub map: bool,
}

impl Default for OutputOptions {
    fn default() -> Self {
        Self {
            thresholds: vec![0.8],
            plots: true,
            map: true,
        }
    }
}

/// Oracle choice along a batch axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleChoice {
    None,
    Perfect,
    Noisy,
}

impl OracleChoice {
    pub fn name(self) -> &'static str {
        match self {
            OracleChoice::None => "none",
            OracleChoice::Perfect => "perfect",
            OracleChoice::Noisy => "noisy",
        }
    }
}

/// Axes of a batch. An axis left out keeps the base mission's value; the
/// cells are the cartesian product of the axes given.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchMatrix {
    pub gains: Option<Vec<GainKind>>,
    pub fusions: Option<Vec<FusionStrategy>>,
    pub taus: Option<Vec<f64>>,
    pub oracles: Option<Vec<OracleChoice>>,
    pub collision_modes: Option<Vec<CollisionMode>>,
    pub raycast_modes: Option<Vec<RaycastMode>>,
    /// Noise used by `noisy` cells; defaults to the base mission's noise model.
    pub noise: Option<NoiseModel>,
}

/// One cell of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub mission: MissionConfig,
}

impl BatchMatrix {
    pub fn is_empty(&self) -> bool {
        self.gains.is_none()
            && self.fusions.is_none()
            && self.taus.is_none()
            && self.oracles.is_none()
            && self.collision_modes.is_none()
            && self.raycast_modes.is_none()
    }

    /// Expands the matrix over `base`, gains varying slowest.
    pub fn cells(&self, base: &MissionConfig) -> Result<Vec<Cell>> {
        ensure!(!self.is_empty(), "batch matrix has no axes");
        let noise = self.noise.clone().unwrap_or_else(|| match &base.oracle {
            Some(OracleMode::Noisy(n)) => n.clone(),
            _ => NoiseModel::default(),
        });
        let mut cells = vec![Cell {
            label: String::new(),
            mission: base.clone(),
        }];
        fn axis<T: Clone>(
            cells: Vec<Cell>,
            values: &Option<Vec<T>>,
            name: &str,
            show: impl Fn(&T) -> String,
            apply: impl Fn(&mut MissionConfig, &T),
        ) -> Vec<Cell> {
            let Some(values) = values else { return cells };
            let mut out = Vec::with_capacity(cells.len() * values.len());
            for c in &cells {
                for v in values {
                    let mut m = c.mission.clone();
                    apply(&mut m, v);
                    let sep = if c.label.is_empty() { "" } else { " " };
                    out.push(Cell {
                        label: format!("{}{sep}{name}={}", c.label, show(v)),
                        mission: m,
                    });
                }
            }
            out
        }
        cells = axis(cells, &self.gains, "gain", |g| g.name().into(), |m, g| m.planner.gain = *g);
        cells = axis(cells, &self.fusions, "fusion", |f| f.name().into(), |m, f| m.fusion = *f);
        cells = axis(cells, &self.taus, "tau", |t| t.to_string(), |m, t| m.tau = *t);
        cells = axis(cells, &self.oracles, "oracle", |o| o.name().into(), |m, o| {
            m.oracle = match o {
                OracleChoice::None => None,
                OracleChoice::Perfect => Some(OracleMode::Perfect),
                OracleChoice::Noisy => Some(OracleMode::Noisy(noise.clone())),
            }
        });
        cells = axis(
            cells,
            &self.collision_modes,
            "collision",
            |c| enum_name(c),
            |m, c| m.planner.collision_mode = *c,
        );
        cells = axis(
            cells,
            &self.raycast_modes,
            "raycast",
            |r| enum_name(r),
            |m, r| m.planner.raycast_mode = *r,
        );
        ensure!(!cells.is_empty(), "batch matrix has an empty axis");
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub world: WorldSource,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub mission: MissionConfig,
    #[serde(default)]
    pub output: OutputOptions,
    #[serde(default)]
    pub matrix: BatchMatrix,
}

fn one() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("scx-out")
}

impl ExperimentSpec {
    pub fn new(world: WorldSource) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            world,
            repetitions: 1,
            seed_base: 0,
            output_dir: default_output_dir(),
            mission: MissionConfig::default(),
            output: OutputOptions::default(),
            matrix: BatchMatrix::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            bail!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version);
        }
        ensure!(self.repetitions >= 1, "repetitions must be at least 1");
        ensure!(
            self.output.thresholds.iter().all(|t| (0.0..=1.0).contains(t)),
            "thresholds must lie in [0, 1]"
        );
        self.mission.validate()?;
        Ok(())
    }

    /// Applies the output-directory environment override.
    pub fn apply_env(&mut self) {
        if let Some(dir) = std::env::var_os(ENV_OUTPUT_DIR) {
            self.output_dir = PathBuf::from(dir);
        }
    }

    /// Mission config of repetition `rep`.
    pub fn mission_for(&self, base: &MissionConfig, rep: usize) -> MissionConfig {
        let mut m = base.clone();
        m.seed = self.seed_base.wrapping_add(rep as u64);
        m
    }
}

/// Worker threads for batches, from the environment; defaults to one.
pub fn jobs_from_env() -> Result<usize> {
    match std::env::var(ENV_JOBS) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{ENV_JOBS}={v:?} is not a count"))?;
            ensure!(n >= 1, "{ENV_JOBS} must be at least 1");
            Ok(n)
        }
        Err(_) => Ok(1),
    }
}

/// Parses a value by its name in config files, e.g. `"sc"` or `"non_blocking"`.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s)).map_err(|e| e.to_string())
}

/// Name of a unit enum value as written in config files.
pub fn enum_name<T: Serialize>(v: &T) -> String {
    match toml::Value::try_from(v) {
        Ok(toml::Value::String(s)) => s,
        _ => String::new(),
    }
}
