//! Domain vocabulary: exchange dimensions and their parameter ladders, replica
//! state, and the Cartesian replica grid.
//!
//! Units are fixed throughout the crate: energies in kcal/mol, temperatures
//! in kelvin, angles in degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boltzmann constant in kcal·mol⁻¹·K⁻¹.
pub const BOLTZMANN_KCAL: f64 = 0.0019872041;

/// Inverse temperature 1/(k_B T) in mol/kcal.
pub fn beta(temperature: f64) -> f64 {
    1.0 / (BOLTZMANN_KCAL * temperature)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Temperature,
    Umbrella,
    HamiltonianScale,
}

/// Which energy term a Hamiltonian-scale dimension multiplies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaledTerm {
    /// The analytic base potential (restraints are never scaled).
    #[default]
    Potential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimensionKind {
    Temperature,
    Umbrella {
        /// kcal·mol⁻¹·deg⁻² (or per squared coordinate unit on non-periodic systems).
        force_constant: f64,
        /// Index of the restrained coordinate.
        coordinate: usize,
    },
    HamiltonianScale {
        #[serde(default)]
        term: ScaledTerm,
    },
}

impl DimensionKind {
    pub fn param_kind(&self) -> ParamKind {
        match self {
            DimensionKind::Temperature => ParamKind::Temperature,
            DimensionKind::Umbrella { .. } => ParamKind::Umbrella,
            DimensionKind::HamiltonianScale { .. } => ParamKind::HamiltonianScale,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Progression {
    Geometric,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub index: usize,
    pub value: f64,
}

/// One exchange dimension: what is exchanged plus its ordered ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct DimensionSpec {
    kind: DimensionKind,
    ladder: Vec<ParameterPoint>,
}

impl DimensionSpec {
    pub fn new(kind: DimensionKind, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidCount("ladder must have at least one value".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("ladder value {v} is not finite")));
        }
        if values.len() > 1 {
            let increasing = values[1] > values[0];
            let monotone = values.windows(2).all(|w| {
                if increasing {
                    w[1] > w[0]
                } else {
                    w[1] < w[0]
                }
            });
            if !monotone {
                return Err(Error::InvalidRange(
                    "ladder values must be strictly monotone".into(),
                ));
            }
        }
        match kind {
            DimensionKind::Temperature => {
                if let Some(t) = values.iter().find(|&&t| t <= 0.0) {
                    return Err(Error::InvalidRange(format!(
                        "temperature {t} K must be positive"
                    )));
                }
            }
            DimensionKind::Umbrella { force_constant, .. } => {
                if !(force_constant >= 0.0 && force_constant.is_finite()) {
                    return Err(Error::InvalidRange(format!(
                        "umbrella force constant {force_constant} must be finite and >= 0"
                    )));
                }
            }
            DimensionKind::HamiltonianScale { .. } => {
                if let Some(l) = values.iter().find(|&&l| !(0.0..=1.0).contains(&l)) {
                    return Err(Error::InvalidRange(format!(
                        "hamiltonian scale {l} outside [0, 1]"
                    )));
                }
            }
        }
        let ladder = values
            .into_iter()
            .enumerate()
            .map(|(index, value)| ParameterPoint { index, value })
            .collect();
        Ok(DimensionSpec { kind, ladder })
    }

    pub fn kind(&self) -> &DimensionKind {
        &self.kind
    }

    pub fn ladder(&self) -> &[ParameterPoint] {
        &self.ladder
    }

    pub fn values(&self) -> Vec<f64> {
        self.ladder.iter().map(|p| p.value).collect()
    }

    pub fn len(&self) -> usize {
        self.ladder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ladder.is_empty()
    }

    pub fn value(&self, index: usize) -> f64 {
        self.ladder[index].value
    }
}

/// Generates ladder values.
///
/// Geometric ladders are log-uniform with exact endpoints. Uniform ladders on
/// an umbrella dimension treat `[lo, hi)` as one period and place `n` centers
/// spaced `(hi - lo) / n`; any other uniform ladder includes both endpoints.
pub fn build_ladder(
    kind: ParamKind,
    lo: f64,
    hi: f64,
    n: usize,
    progression: Progression,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidCount("ladder needs n >= 1".into()));
    }
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::InvalidValue("ladder bounds must be finite".into()));
    }
    if lo > hi {
        return Err(Error::InvalidRange(format!("lo {lo} exceeds hi {hi}")));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    let values = match progression {
        Progression::Geometric => {
            if lo <= 0.0 {
                return Err(Error::InvalidRange(format!(
                    "geometric ladder needs lo > 0, got {lo}"
                )));
            }
            let last = (n - 1) as f64;
            let ratio = hi / lo;
            (0..n)
                .map(|i| match i {
                    0 => lo,
                    i if i == n - 1 => hi,
                    i => lo * ratio.powf(i as f64 / last),
                })
                .collect()
        }
        Progression::Uniform if kind == ParamKind::Umbrella => {
            let step = (hi - lo) / n as f64;
            (0..n).map(|i| lo + step * i as f64).collect()
        }
        Progression::Uniform => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
                .collect()
        }
    };
    Ok(values)
}

/// Wraps degrees into `[0, 360)` without validation.
pub fn wrap_degrees(x: f64) -> f64 {
    let r = x.rem_euclid(360.0);
    // rem_euclid of a tiny negative value rounds up to exactly 360
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

pub fn wrap_angle(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidValue(format!("angle {x} is not finite")));
    }
    Ok(wrap_degrees(x))
}

/// Minimal-image angular difference in `[-180, 180)`.
pub fn min_image(delta: f64) -> f64 {
    wrap_degrees(delta + 180.0) - 180.0
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicaStatus {
    #[default]
    Idle,
    RunningMd,
    AwaitingExchange,
    InExchange,
    Failed,
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicaState {
    pub id: usize,
    /// One ladder index per dimension.
    pub coords: Vec<usize>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Potential energy of `positions` under this replica's own parameters.
    pub energy: f64,
    pub cycle: u64,
    pub status: ReplicaStatus,
    pub seed: u64,
}

impl ReplicaState {
    pub fn is_active(&self) -> bool {
        !matches!(self.status, ReplicaStatus::Failed | ReplicaStatus::Done)
    }
}

/// Harmonic restraint `0.5 * k * (x[coordinate] - center)^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Restraint {
    pub center: f64,
    pub force_constant: f64,
    pub coordinate: usize,
}

/// The resolved thermodynamic parameters a replica runs under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoParams {
    pub temperature: f64,
    pub restraints: Vec<Restraint>,
    pub lambda: f64,
}

impl ThermoParams {
    pub fn at_temperature(temperature: f64) -> Self {
        ThermoParams {
            temperature,
            restraints: Vec::new(),
            lambda: 1.0,
        }
    }

    pub fn beta(&self) -> f64 {
        beta(self.temperature)
    }
}

/// Full Cartesian product of the configured dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaGrid {
    dimensions: Vec<DimensionSpec>,
    pub replicas: Vec<ReplicaState>,
    /// Temperature used when no temperature dimension is configured.
    pub base_temperature: f64,
}

pub const DEFAULT_TEMPERATURE: f64 = 300.0;

/// Builds one replica per grid cell, ids in row-major order (the last
/// dimension varies fastest). Configurations start empty; see
/// [`ReplicaGrid::set_initial_positions`].
pub fn build_grid(dimensions: Vec<DimensionSpec>, seed: u64) -> Result<ReplicaGrid> {
    if dimensions.is_empty() {
        return Err(Error::InvalidConfig("at least one dimension is required".into()));
    }
    let count_of = |k: ParamKind| {
        dimensions
            .iter()
            .filter(|d| d.kind().param_kind() == k)
            .count()
    };
    if count_of(ParamKind::Temperature) > 1 {
        return Err(Error::InvalidConfig("at most one temperature dimension".into()));
    }
    if count_of(ParamKind::HamiltonianScale) > 1 {
        return Err(Error::InvalidConfig(
            "at most one hamiltonian-scale dimension".into(),
        ));
    }
    let mut restrained = Vec::new();
    for d in &dimensions {
        if let DimensionKind::Umbrella { coordinate, .. } = d.kind() {
            if restrained.contains(coordinate) {
                return Err(Error::InvalidConfig(format!(
                    "coordinate {coordinate} restrained by two umbrella dimensions"
                )));
            }
            restrained.push(*coordinate);
        }
    }

    let lengths: Vec<usize> = dimensions.iter().map(DimensionSpec::len).collect();
    let total = lengths
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::InvalidConfig("replica count overflows".into()))?;

    let mut replicas = Vec::with_capacity(total);
    let mut coords = vec![0usize; lengths.len()];
    for id in 0..total {
        replicas.push(ReplicaState {
            id,
            coords: coords.clone(),
            positions: Vec::new(),
            velocities: Vec::new(),
            energy: 0.0,
            cycle: 0,
            status: ReplicaStatus::Idle,
            seed: mix_seed(seed, id as u64),
        });
        // odometer increment, last dimension fastest
        for k in (0..coords.len()).rev() {
            coords[k] += 1;
            if coords[k] < lengths[k] {
                break;
            }
            coords[k] = 0;
        }
    }
    Ok(ReplicaGrid {
        dimensions,
        replicas,
        base_temperature: DEFAULT_TEMPERATURE,
    })
}

impl ReplicaGrid {
    pub fn dimensions(&self) -> &[DimensionSpec] {
        &self.dimensions
    }

    pub fn len(&self) -> usize {
        self.replicas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replicas.is_empty()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.dimensions.iter().map(DimensionSpec::len).collect()
    }

    pub fn set_initial_positions(&mut self, positions: &[f64]) {
        for r in &mut self.replicas {
            r.positions = positions.to_vec();
            r.velocities = vec![0.0; positions.len()];
        }
    }

    /// Resolves a coordinate tuple into thermodynamic parameters.
    pub fn params_for(&self, coords: &[usize]) -> ThermoParams {
        let mut params = ThermoParams::at_temperature(self.base_temperature);
        for (dim, &idx) in self.dimensions.iter().zip(coords) {
            let value = dim.value(idx);
            match *dim.kind() {
                DimensionKind::Temperature => params.temperature = value,
                DimensionKind::Umbrella {
                    force_constant,
                    coordinate,
                } => params.restraints.push(Restraint {
                    center: value,
                    force_constant,
                    coordinate,
                }),
                DimensionKind::HamiltonianScale { .. } => params.lambda = value,
            }
        }
        params
    }

    pub fn params_of(&self, replica: usize) -> ThermoParams {
        self.params_for(&self.replicas[replica].coords)
    }

    pub fn check_coords(&self) -> Result<()> {
        let shape = self.shape();
        for r in &self.replicas {
            if r.coords.len() != shape.len()
                || r.coords.iter().zip(&shape).any(|(&c, &n)| c >= n)
            {
                return Err(Error::InvalidConfig(format!(
                    "replica {} coordinates {:?} outside grid {:?}",
                    r.id, r.coords, shape
                )));
            }
        }
        Ok(())
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically combines a seed with a stream index.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// Folds several stream indices into one seed.
pub fn derive_seed(seed: u64, streams: &[u64]) -> u64 {
    streams.iter().fold(seed, |acc, &s| mix_seed(acc, s))
}
