//! Pilot-style resource management: a fixed core allocation inside which MD,
//! energy-evaluation and exchange tasks are scheduled without re-queuing.
//!
//! A single discrete-event [`Scheduler`] drives both backends. Logical time
//! always comes from the [`DurationModel`], which keeps event order and every
//! output file deterministic; the `RealWorkers` backend additionally runs the
//! engine on a worker pool and feeds the results back into the replicas.

mod driver;
mod executor;
mod faults;
mod scheduler;

pub use driver::{
    run_async, run_sync, AsyncCriterion, ExchangeSet, Resume, RunLog, RunSetup, SampleBatch, TimingRow,
};
pub use executor::{Executor, NullExecutor, WorkerPool};
pub use faults::{inject_faults, FaultAttempt, FaultInjector, FaultPolicy, FaultReport, Recovery};
pub use scheduler::{
    max_concurrency_trace, simulate_schedule, Completion, Outcome, SchedEvent, Schedule,
    Scheduler, WorkloadTask,
};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::engine::EngineRequest;
use crate::error::{Error, Result};
use crate::model::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    RealWorkers { workers: usize },
    VirtualClock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilotSpec {
    pub total_cores: u32,
    pub cores_per_replica: u32,
    /// Virtual seconds after which the run is cut short.
    #[serde(default)]
    pub walltime: Option<f64>,
    pub backend: Backend,
    #[serde(default)]
    pub durations: DurationModel,
}

impl PilotSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cores_per_replica == 0 {
            return Err(Error::InvalidConfig("cores per replica must be >= 1".into()));
        }
        if self.total_cores < self.cores_per_replica {
            return Err(Error::InvalidConfig(format!(
                "pilot has {} cores, a replica needs {}",
                self.total_cores, self.cores_per_replica
            )));
        }
        if let Backend::RealWorkers { workers: 0 } = self.backend {
            return Err(Error::InvalidConfig("worker count must be >= 1".into()));
        }
        if let Some(w) = self.walltime {
            if !(w > 0.0) {
                return Err(Error::InvalidConfig(format!("walltime {w} must be positive")));
            }
        }
        self.durations.validate()
    }
}

pub fn max_concurrency(pilot: &PilotSpec) -> u32 {
    pilot.total_cores / pilot.cores_per_replica
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecutionMode {
    /// Every replica can run at once.
    ModeI,
    /// Replicas run in waves of at most `max_concurrency`.
    ModeII,
}

pub fn execution_mode(pilot: &PilotSpec, replicas: usize) -> ExecutionMode {
    if max_concurrency(pilot) as usize >= replicas {
        ExecutionMode::ModeI
    } else {
        ExecutionMode::ModeII
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Constant { seconds: f64 },
    /// Parameters of the underlying normal; mean is `exp(mu + sigma²/2)`.
    LogNormal { mu: f64, sigma: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Dist {
    /// Log-normal with the given mean.
    pub fn log_normal_with_mean(mean: f64, sigma: f64) -> Dist {
        Dist::LogNormal {
            mu: mean.ln() - 0.5 * sigma * sigma,
            sigma,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Dist::Constant { seconds } => seconds > 0.0 && seconds.is_finite(),
            Dist::LogNormal { mu, sigma } => mu.is_finite() && sigma >= 0.0 && sigma.is_finite(),
            Dist::Uniform { lo, hi } => lo > 0.0 && hi >= lo && hi.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("duration distribution {self:?} must be positive")))
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Dist::Constant { seconds } => seconds,
            Dist::LogNormal { mu, sigma } => LogNormal::new(mu, sigma)
                .expect("validated log-normal")
                .sample(rng),
            Dist::Uniform { lo, hi } => {
                if hi > lo {
                    rand::Rng::random_range(rng, lo..hi)
                } else {
                    lo
                }
            }
        }
    }
}

/// Virtual durations of tasks and phases, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DurationModel {
    pub md: Dist,
    pub energy: Dist,
    pub exchange: Dist,
    /// Fixed launch cost per task.
    pub launch_overhead: f64,
    /// Additional launch cost per task started at the same instant.
    pub launch_overhead_per_task: f64,
    /// Data movement after each exchange phase.
    pub data: f64,
    /// Task preparation before each MD phase.
    pub framework_overhead: f64,
    /// Per-replica MD distributions overriding `md`.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub replica_md: BTreeMap<usize, Dist>,
}

impl Default for DurationModel {
    fn default() -> Self {
        DurationModel {
            md: Dist::Constant { seconds: 10.0 },
            energy: Dist::Constant { seconds: 1.0 },
            exchange: Dist::Constant { seconds: 0.5 },
            launch_overhead: 0.1,
            launch_overhead_per_task: 0.0,
            data: 0.0,
            framework_overhead: 0.0,
            replica_md: BTreeMap::new(),
        }
    }
}

impl DurationModel {
    pub fn constant(md: f64, launch_overhead: f64) -> Self {
        DurationModel {
            md: Dist::Constant { seconds: md },
            launch_overhead,
            ..DurationModel::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.md.validate()?;
        self.energy.validate()?;
        self.exchange.validate()?;
        for d in self.replica_md.values() {
            d.validate()?;
        }
        for (name, v) in [
            ("launch_overhead", self.launch_overhead),
            ("launch_overhead_per_task", self.launch_overhead_per_task),
            ("data", self.data),
            ("framework_overhead", self.framework_overhead),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn dist(&self, kind: TaskKind, replica: Option<usize>) -> &Dist {
        match kind {
            TaskKind::Md => replica
                .and_then(|r| self.replica_md.get(&r))
                .unwrap_or(&self.md),
            TaskKind::EnergyEval => &self.energy,
            TaskKind::ExchangeCompute => &self.exchange,
        }
    }

    /// Duration of task `task`, drawn from its own stream.
    pub fn sample(&self, kind: TaskKind, replica: Option<usize>, seed: u64, task: TaskId) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xD0, task.0]));
        self.dist(kind, replica).sample(&mut rng)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Md,
    EnergyEval,
    ExchangeCompute,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    None,
    Engine(Box<EngineRequest>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub replica: Option<usize>,
    pub kind: TaskKind,
    pub cores: u32,
    pub payload: Payload,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Submit,
    Start,
    End,
    Fail,
    Barrier,
    Exchange,
}

/// One line of the event trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub event: EventKind,
    pub task: Option<u64>,
    pub replica: Option<usize>,
    pub cores: u32,
    #[serde(default)]
    pub kind: Option<TaskKind>,
    #[serde(default)]
    pub cycle: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pilot(total: u32, per: u32) -> PilotSpec {
        PilotSpec {
            total_cores: total,
            cores_per_replica: per,
            walltime: None,
            backend: Backend::VirtualClock,
            durations: DurationModel::default(),
        }
    }

    #[test]
    fn concurrency_examples() {
        assert_eq!(max_concurrency(&pilot(128, 1)), 128);
        assert_eq!(max_concurrency(&pilot(128, 16)), 8);
        assert_eq!(max_concurrency(&pilot(100, 7)), 14);
    }

    #[test]
    fn mode_examples() {
        assert_eq!(execution_mode(&pilot(64, 1), 64), ExecutionMode::ModeI);
        assert_eq!(execution_mode(&pilot(112, 1), 1728), ExecutionMode::ModeII);
        assert_eq!(execution_mode(&pilot(1, 1), 1), ExecutionMode::ModeI);
    }

    #[test]
    fn pilot_validation() {
        assert!(pilot(4, 8).validate().is_err());
        assert!(pilot(4, 0).validate().is_err());
        assert!(pilot(4, 1).validate().is_ok());
        let mut p = pilot(4, 1);
        p.durations.md = Dist::Constant { seconds: 0.0 };
        assert!(p.validate().is_err());
    }

    #[test]
    fn log_normal_mean() {
        let d = Dist::log_normal_with_mean(10.0, 0.75);
        let model = DurationModel { md: d, ..DurationModel::default() };
        let n = 20_000;
        let mean: f64 = (0..n).map(|i| model.sample(TaskKind::Md, None, 5, TaskId(i))).sum::<f64>() / n as f64;
        assert!((mean - 10.0).abs() < 0.25, "{mean}");
        assert_eq!(model.sample(TaskKind::Md, None, 5, TaskId(3)), model.sample(TaskKind::Md, None, 5, TaskId(3)));
    }
}
