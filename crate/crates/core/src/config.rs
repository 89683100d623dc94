//! JSON run configuration.
//!
//! [`parse_config`] validates a document, fills every default and expands
//! ladder generators into explicit values. The resolved form serializes back
//! to JSON that parses to the same value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{MdSettings, Potential, PotentialSystem, DEFAULT_FRICTION, DEFAULT_STRIDE};
use crate::error::{Error, Result};
use crate::model::{
    build_grid, build_ladder, DimensionKind, DimensionSpec, ParamKind, Progression, ReplicaGrid,
    ScaledTerm, DEFAULT_TEMPERATURE,
};
use crate::pilot::{AsyncCriterion, Backend, DurationModel, FaultPolicy, PilotSpec};

const DEG2: f64 = (std::f64::consts::PI / 180.0) * (std::f64::consts::PI / 180.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    DoubleWell {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<f64>,
    },
    Torsion {
        #[serde(rename = "A", default = "torsion_a")]
        a: f64,
        #[serde(rename = "B", default = "torsion_b")]
        b: f64,
        #[serde(rename = "C", default = "torsion_c")]
        c: f64,
        /// Defaults to `(π/180)²`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mass: Option<f64>,
    },
}

fn torsion_a() -> f64 {
    3.0
}
fn torsion_b() -> f64 {
    3.0
}
fn torsion_c() -> f64 {
    1.5
}

impl SystemConfig {
    pub fn system(&self) -> PotentialSystem {
        match *self {
            SystemConfig::DoubleWell { a, b, mass } => PotentialSystem {
                potential: Potential::DoubleWell { a, b },
                mass: mass.unwrap_or(1.0),
            },
            SystemConfig::Torsion { a, b, c, mass } => PotentialSystem {
                potential: Potential::Torsion { a, b, c },
                mass: mass.unwrap_or(DEG2),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKindName {
    Temperature,
    Umbrella,
    HamiltonianScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LadderConfig {
    Values(Vec<f64>),
    Generate {
        lo: f64,
        hi: f64,
        n: usize,
        progression: Progression,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionConfig {
    pub kind: DimensionKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_constant: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coordinate: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub term: Option<ScaledTerm>,
    pub ladder: LadderConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Pattern {
    #[default]
    Sync,
    Async { criterion: AsyncCriterion },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotConfig {
    /// Defaults to enough cores to run every replica at once.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_cores: Option<u32>,
    #[serde(default = "one")]
    pub cores_per_replica: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walltime: Option<f64>,
    #[serde(default = "default_backend")]
    pub backend: Backend,
    #[serde(default)]
    pub durations: DurationModel,
}

fn one() -> u32 {
    1
}

pub const DEFAULT_WORKERS: usize = 4;

fn default_backend() -> Backend {
    Backend::RealWorkers { workers: DEFAULT_WORKERS }
}

impl Default for PilotConfig {
    fn default() -> Self {
        PilotConfig {
            total_cores: None,
            cores_per_replica: 1,
            walltime: None,
            backend: default_backend(),
            durations: DurationModel::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub system: SystemConfig,
    /// Order defines the order of grid coordinates and of round-robin exchange.
    pub dimensions: Vec<DimensionConfig>,
    pub cycles: u64,
    #[serde(default = "default_steps")]
    pub steps_per_cycle: u64,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_friction")]
    pub friction: f64,
    #[serde(default = "default_stride")]
    pub stride: u64,
    #[serde(default)]
    pub pattern: Pattern,
    #[serde(default)]
    pub pilot: PilotConfig,
    #[serde(default)]
    pub faults: FaultPolicy,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Temperature of replicas when no temperature dimension is configured.
    #[serde(default = "default_temperature")]
    pub base_temperature: f64,
    #[serde(default = "yes")]
    pub record_samples: bool,
}

fn default_steps() -> u64 {
    1000
}
fn default_step_size() -> f64 {
    0.1
}
fn default_friction() -> f64 {
    DEFAULT_FRICTION
}
fn default_stride() -> u64 {
    DEFAULT_STRIDE
}
fn default_output() -> PathBuf {
    PathBuf::from("repex-out")
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn yes() -> bool {
    true
}

fn ladder_values(kind: ParamKind, ladder: &LadderConfig) -> Result<Vec<f64>> {
    match ladder {
        LadderConfig::Values(v) => Ok(v.clone()),
        LadderConfig::Generate { lo, hi, n, progression } => build_ladder(kind, *lo, *hi, *n, *progression),
    }
}

impl DimensionConfig {
    fn kind(&self, index: usize, system_dims: usize) -> Result<DimensionKind> {
        let at = |field: &str| format!("dimensions[{index}].{field}");
        let only_umbrella = |present: bool, field: &str| {
            if present {
                Err(Error::key(at(field), "only valid for umbrella dimensions"))
            } else {
                Ok(())
            }
        };
        match self.kind {
            DimensionKindName::Temperature | DimensionKindName::HamiltonianScale => {
                only_umbrella(self.force_constant.is_some(), "force_constant")?;
                only_umbrella(self.coordinate.is_some(), "coordinate")?;
            }
            DimensionKindName::Umbrella => {}
        }
        if self.term.is_some() && self.kind != DimensionKindName::HamiltonianScale {
            return Err(Error::key(at("term"), "only valid for hamiltonian_scale dimensions"));
        }
        Ok(match self.kind {
            DimensionKindName::Temperature => DimensionKind::Temperature,
            DimensionKindName::HamiltonianScale => DimensionKind::HamiltonianScale {
                term: self.term.unwrap_or_default(),
            },
            DimensionKindName::Umbrella => {
                let force_constant = self
                    .force_constant
                    .ok_or_else(|| Error::key(at("force_constant"), "required for umbrella dimensions"))?;
                let coordinate = self.coordinate.unwrap_or(0);
                if coordinate >= system_dims {
                    return Err(Error::key(
                        at("coordinate"),
                        format!("system has {system_dims} coordinates"),
                    ));
                }
                DimensionKind::Umbrella { force_constant, coordinate }
            }
        })
    }

    fn spec(&self, index: usize, system_dims: usize) -> Result<DimensionSpec> {
        let kind = self.kind(index, system_dims)?;
        let path = format!("dimensions[{index}].ladder");
        let values = ladder_values(kind.param_kind(), &self.ladder).map_err(|e| Error::key(&path, e.to_string()))?;
        DimensionSpec::new(kind, values).map_err(|e| Error::key(&path, e.to_string()))
    }
}

impl SimulationConfig {
    pub fn system(&self) -> PotentialSystem {
        self.system.system()
    }

    pub fn dimension_specs(&self) -> Result<Vec<DimensionSpec>> {
        let dims = self.system().dims();
        self.dimensions
            .iter()
            .enumerate()
            .map(|(i, d)| d.spec(i, dims))
            .collect()
    }

    pub fn replica_count(&self) -> Result<usize> {
        Ok(self.dimension_specs()?.iter().map(DimensionSpec::len).product())
    }

    /// Fresh grid: replicas on their initial ladder slots at the system's
    /// starting configuration.
    pub fn build_grid(&self) -> Result<ReplicaGrid> {
        let mut grid = build_grid(self.dimension_specs()?, self.seed)
            .map_err(|e| Error::key("dimensions", e.to_string()))?;
        grid.base_temperature = self.base_temperature;
        grid.set_initial_positions(&self.system().initial_positions());
        Ok(grid)
    }

    pub fn md_settings(&self) -> MdSettings {
        MdSettings {
            steps: self.steps_per_cycle,
            step_size: self.step_size,
            friction: self.friction,
            stride: self.stride,
        }
    }

    /// Pilot with defaults resolved against the replica count.
    pub fn pilot_spec(&self) -> Result<PilotSpec> {
        let replicas = self.replica_count()? as u32;
        Ok(PilotSpec {
            total_cores: self
                .pilot
                .total_cores
                .unwrap_or(replicas.saturating_mul(self.pilot.cores_per_replica)),
            cores_per_replica: self.pilot.cores_per_replica,
            walltime: self.pilot.walltime,
            backend: self.pilot.backend,
            durations: self.pilot.durations.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.system()
            .validate()
            .map_err(|e| Error::key("system", e.to_string()))?;
        if self.dimensions.is_empty() {
            return Err(Error::key("dimensions", "at least one dimension is required"));
        }
        self.build_grid()?;
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::key("step_size", format!("{} must be positive", self.step_size)));
        }
        if !(self.friction >= 0.0 && self.friction.is_finite()) {
            return Err(Error::key("friction", format!("{} must be >= 0", self.friction)));
        }
        if !(self.base_temperature > 0.0 && self.base_temperature.is_finite()) {
            return Err(Error::key(
                "base_temperature",
                format!("{} must be positive", self.base_temperature),
            ));
        }
        self.pilot_spec()?
            .validate()
            .map_err(|e| Error::key("pilot", e.to_string()))?;
        self.faults
            .validate()
            .map_err(|e| Error::key("faults.probability", e.to_string()))?;
        if let Pattern::Async { criterion } = &self.pattern {
            criterion
                .validate()
                .map_err(|e| Error::key("pattern.criterion", e.to_string()))?;
        }
        Ok(())
    }

    /// Same configuration with every default written out and ladders as
    /// explicit values.
    pub fn resolved(&self) -> Result<SimulationConfig> {
        let mut out = self.clone();
        let specs = self.dimension_specs()?;
        for (d, spec) in out.dimensions.iter_mut().zip(&specs) {
            d.ladder = LadderConfig::Values(spec.values());
            match spec.kind() {
                DimensionKind::Umbrella { coordinate, .. } => d.coordinate = Some(*coordinate),
                DimensionKind::HamiltonianScale { term } => d.term = Some(*term),
                DimensionKind::Temperature => {}
            }
        }
        let sys = self.system();
        out.system = match out.system {
            SystemConfig::DoubleWell { a, b, .. } => SystemConfig::DoubleWell { a, b, mass: Some(sys.mass) },
            SystemConfig::Torsion { a, b, c, .. } => SystemConfig::Torsion { a, b, c, mass: Some(sys.mass) },
        };
        out.pilot.total_cores = Some(self.pilot_spec()?.total_cores);
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses, validates and resolves a configuration document. Errors name the
/// offending key path.
pub fn parse_config(text: &str) -> Result<SimulationConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: SimulationConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::key(if path == "." { "config".to_string() } else { path }, e.into_inner().to_string())
    })?;
    config.validate()?;
    config.resolved()
}

pub fn load_config(path: &Path) -> Result<SimulationConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
