//! Built-in stochastic-dynamics engine on analytic potentials.
//!
//! Two systems are provided: a one-dimensional double well and a pair of
//! coupled torsions (φ, ψ) in degrees. Dynamics use BAOAB Langevin splitting;
//! with zero friction it reduces to velocity Verlet.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::EngineError;
use crate::model::{min_image, wrap_degrees, ThermoParams, BOLTZMANN_KCAL};

const DEG: f64 = std::f64::consts::PI / 180.0;

pub const DEFAULT_FRICTION: f64 = 1.0;
pub const DEFAULT_STRIDE: u64 = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    /// `U(x) = a x^4 - b x^2`
    DoubleWell { a: f64, b: f64 },
    /// `U(φ,ψ) = A(1 - cos φ) + B(1 - cos ψ) + C cos(φ + ψ)`, angles in degrees.
    Torsion {
        #[serde(rename = "A")]
        a: f64,
        #[serde(rename = "B")]
        b: f64,
        #[serde(rename = "C")]
        c: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSystem {
    pub potential: Potential,
    pub mass: f64,
}

impl PotentialSystem {
    pub fn double_well(a: f64, b: f64) -> Result<Self, EngineError> {
        let s = PotentialSystem {
            potential: Potential::DoubleWell { a, b },
            mass: 1.0,
        };
        s.validate()?;
        Ok(s)
    }

    /// Torsion system with mass `(π/180)²`, so that dynamics in degrees match
    /// unit mass in radians.
    pub fn torsion(a: f64, b: f64, c: f64) -> Result<Self, EngineError> {
        let s = PotentialSystem {
            potential: Potential::Torsion { a, b, c },
            mass: DEG * DEG,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn default_torsion() -> Self {
        PotentialSystem::torsion(3.0, 3.0, 1.5).expect("default torsion parameters are valid")
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let finite = match self.potential {
            Potential::DoubleWell { a, b } => {
                if a <= 0.0 {
                    return Err(EngineError::BadRequest(format!(
                        "double well needs a > 0, got {a}"
                    )));
                }
                a.is_finite() && b.is_finite()
            }
            Potential::Torsion { a, b, c } => a.is_finite() && b.is_finite() && c.is_finite(),
        };
        if !finite {
            return Err(EngineError::BadRequest("potential parameters must be finite".into()));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(EngineError::BadRequest(format!("mass {} must be positive", self.mass)));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        match self.potential {
            Potential::DoubleWell { .. } => 1,
            Potential::Torsion { .. } => 2,
        }
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self.potential, Potential::Torsion { .. })
    }

    /// A starting configuration at (or near) a potential minimum.
    pub fn initial_positions(&self) -> Vec<f64> {
        match self.potential {
            Potential::DoubleWell { a, b } => vec![-(b.max(0.0) / (2.0 * a)).sqrt()],
            Potential::Torsion { .. } => vec![0.0, 0.0],
        }
    }

    pub fn base_energy(&self, x: &[f64]) -> f64 {
        match self.potential {
            Potential::DoubleWell { a, b } => {
                let x2 = x[0] * x[0];
                a * x2 * x2 - b * x2
            }
            Potential::Torsion { a, b, c } => {
                let (phi, psi) = (x[0] * DEG, x[1] * DEG);
                a * (1.0 - phi.cos()) + b * (1.0 - psi.cos()) + c * (phi + psi).cos()
            }
        }
    }

    fn add_base_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        match self.potential {
            Potential::DoubleWell { a, b } => {
                grad[0] += scale * (4.0 * a * x[0] * x[0] * x[0] - 2.0 * b * x[0]);
            }
            Potential::Torsion { a, b, c } => {
                let (phi, psi) = (x[0] * DEG, x[1] * DEG);
                let cross = c * (phi + psi).sin();
                grad[0] += scale * (a * phi.sin() - cross) * DEG;
                grad[1] += scale * (b * psi.sin() - cross) * DEG;
            }
        }
    }

    fn displacement(&self, x: f64, center: f64) -> f64 {
        if self.is_periodic() {
            min_image(x - center)
        } else {
            x - center
        }
    }

    fn check(&self, x: &[f64], params: &ThermoParams) -> Result<(), EngineError> {
        if x.len() != self.dims() {
            return Err(EngineError::Dimensionality {
                expected: self.dims(),
                got: x.len(),
            });
        }
        if let Some(r) = params.restraints.iter().find(|r| r.coordinate >= self.dims()) {
            return Err(EngineError::RestraintCoordinate {
                coordinate: r.coordinate,
                dims: self.dims(),
            });
        }
        Ok(())
    }

    /// Gradient of [`total_energy`] with respect to the coordinates.
    pub fn gradient(&self, x: &[f64], params: &ThermoParams) -> Result<Vec<f64>, EngineError> {
        self.check(x, params)?;
        let mut grad = vec![0.0; x.len()];
        self.gradient_into(x, params, &mut grad);
        Ok(grad)
    }

    fn gradient_into(&self, x: &[f64], params: &ThermoParams, grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.add_base_gradient(x, params.lambda, grad);
        for r in &params.restraints {
            grad[r.coordinate] += r.force_constant * self.displacement(x[r.coordinate], r.center);
        }
    }
}

/// `λ·U_base(x) + Σ ½ k Δ²`, with Δ the minimal-image displacement on
/// periodic systems.
pub fn total_energy(
    system: &PotentialSystem,
    x: &[f64],
    params: &ThermoParams,
) -> Result<f64, EngineError> {
    system.check(x, params)?;
    let mut u = params.lambda * system.base_energy(x);
    for r in &params.restraints {
        let d = system.displacement(x[r.coordinate], r.center);
        u += 0.5 * r.force_constant * d * d;
    }
    if u.is_finite() {
        Ok(u)
    } else {
        Err(EngineError::NonFiniteEnergy)
    }
}

/// Energy of a configuration under another replica's parameters.
pub fn single_point_energy(
    system: &PotentialSystem,
    x: &[f64],
    foreign: &ThermoParams,
) -> Result<f64, EngineError> {
    total_energy(system, x, foreign)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdSettings {
    pub steps: u64,
    pub step_size: f64,
    pub friction: f64,
    /// Trajectory frame interval; 0 disables frame capture.
    pub stride: u64,
}

impl MdSettings {
    pub fn new(steps: u64, step_size: f64) -> Self {
        MdSettings {
            steps,
            step_size,
            friction: DEFAULT_FRICTION,
            stride: DEFAULT_STRIDE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RequestKind {
    MdSegment(MdSettings),
    SinglePointEnergy { foreign: ThermoParams },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineRequest {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub seed: u64,
    pub params: ThermoParams,
    pub kind: RequestKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineResult {
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    /// Potential energy of the final configuration under the request's own parameters.
    pub energy: f64,
    /// Frames every `stride` steps, starting with the initial configuration.
    pub trajectory: Vec<Vec<f64>>,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EngineOutput {
    Segment(EngineResult),
    Energy(f64),
}

pub fn execute(system: &PotentialSystem, request: &EngineRequest) -> Result<EngineOutput, EngineError> {
    match &request.kind {
        RequestKind::MdSegment(_) => run_md_segment(system, request).map(EngineOutput::Segment),
        RequestKind::SinglePointEnergy { foreign } => {
            single_point_energy(system, &request.positions, foreign).map(EngineOutput::Energy)
        }
    }
}

/// Advances a configuration by `steps` BAOAB Langevin steps.
pub fn run_md_segment(
    system: &PotentialSystem,
    request: &EngineRequest,
) -> Result<EngineResult, EngineError> {
    let RequestKind::MdSegment(md) = &request.kind else {
        return Err(EngineError::BadRequest("expected an MD segment request".into()));
    };
    if !(md.step_size > 0.0 && md.step_size.is_finite()) {
        return Err(EngineError::BadRequest(format!("step size {} must be positive", md.step_size)));
    }
    if !(md.friction >= 0.0 && md.friction.is_finite()) {
        return Err(EngineError::BadRequest(format!("friction {} must be >= 0", md.friction)));
    }
    let params = &request.params;
    if !(params.temperature >= 0.0 && params.temperature.is_finite()) {
        return Err(EngineError::BadRequest(format!(
            "temperature {} must be >= 0",
            params.temperature
        )));
    }
    system.check(&request.positions, params)?;
    let n = system.dims();
    let mut x = request.positions.clone();
    let mut v = if request.velocities.len() == n {
        request.velocities.clone()
    } else if request.velocities.is_empty() {
        vec![0.0; n]
    } else {
        return Err(EngineError::Dimensionality {
            expected: n,
            got: request.velocities.len(),
        });
    };

    let h = md.step_size;
    let half = 0.5 * h;
    let inv_m = 1.0 / system.mass;
    let c1 = (-md.friction * h).exp();
    let kt = BOLTZMANN_KCAL * params.temperature;
    let noise = ((1.0 - c1 * c1) * kt * inv_m).sqrt();
    let periodic = system.is_periodic();

    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    let mut grad = vec![0.0; n];
    let mut trajectory = Vec::new();
    if md.stride > 0 {
        trajectory.reserve((md.steps / md.stride + 1) as usize);
        trajectory.push(x.clone());
    }

    system.gradient_into(&x, params, &mut grad);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(EngineError::NonFiniteForce { step: 0 });
    }
    for step in 1..=md.steps {
        for i in 0..n {
            v[i] -= half * grad[i] * inv_m;
            x[i] += half * v[i];
        }
        if noise > 0.0 {
            for vi in v.iter_mut() {
                let xi: f64 = StandardNormal.sample(&mut rng);
                *vi = c1 * *vi + noise * xi;
            }
        } else {
            v.iter_mut().for_each(|vi| *vi *= c1);
        }
        for i in 0..n {
            x[i] += half * v[i];
        }
        if periodic {
            x.iter_mut().for_each(|xi| *xi = wrap_degrees(*xi));
        }
        system.gradient_into(&x, params, &mut grad);
        if grad.iter().any(|g| !g.is_finite()) || x.iter().any(|xi| !xi.is_finite()) {
            return Err(EngineError::NonFiniteForce { step });
        }
        for i in 0..n {
            v[i] -= half * grad[i] * inv_m;
        }
        if md.stride > 0 && step % md.stride == 0 {
            trajectory.push(x.clone());
        }
    }
    let energy = total_energy(system, &x, params)?;
    Ok(EngineResult {
        positions: x,
        velocities: v,
        energy,
        trajectory,
        steps: md.steps,
    })
}

pub fn kinetic_energy(system: &PotentialSystem, v: &[f64]) -> f64 {
    0.5 * system.mass * v.iter().map(|vi| vi * vi).sum::<f64>()
}
