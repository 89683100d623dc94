use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TaskId, TaskSpec};
use crate::error::{Error, Result};
use crate::model::derive_seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recovery {
    /// Mark the replica failed and carry on without it.
    #[default]
    Continue,
    /// Resubmit the same payload under a fresh task id.
    Relaunch { max_retries: u32 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultPolicy {
    /// Independent per-task failure probability.
    pub probability: f64,
    #[serde(default)]
    pub recovery: Recovery,
}

impl FaultPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::InvalidConfig(format!(
                "failure probability {} outside [0, 1]",
                self.probability
            )));
        }
        Ok(())
    }

    /// Whether attempt number `attempt` (0-based) may be retried after failing.
    pub fn may_retry(&self, attempt: u32) -> bool {
        match self.recovery {
            Recovery::Continue => false,
            Recovery::Relaunch { max_retries } => attempt < max_retries,
        }
    }
}

/// Draws per-task failures from a stream keyed by task id, independent of
/// execution order.
#[derive(Clone, Copy, Debug)]
pub struct FaultInjector {
    pub policy: FaultPolicy,
    seed: u64,
}

impl FaultInjector {
    pub fn new(policy: FaultPolicy, seed: u64) -> Self {
        FaultInjector { policy, seed }
    }

    pub fn fails(&self, task: TaskId) -> bool {
        if self.policy.probability <= 0.0 {
            return false;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[0xFA, task.0]));
        rng.random::<f64>() < self.policy.probability
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultAttempt {
    pub original: TaskId,
    pub task: TaskId,
    pub replica: Option<usize>,
    pub attempt: u32,
    pub failed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FaultReport {
    pub attempts: Vec<FaultAttempt>,
    pub failed_replicas: BTreeSet<usize>,
}

/// Expands a task stream into the attempts the policy produces. Retried
/// attempts get fresh ids starting at `next_id`.
pub fn inject_faults(policy: FaultPolicy, stream: &[TaskSpec], seed: u64, mut next_id: u64) -> Result<FaultReport> {
    policy.validate()?;
    let injector = FaultInjector::new(policy, seed);
    let mut report = FaultReport::default();
    for spec in stream {
        let mut id = spec.id;
        let mut attempt = 0;
        loop {
            let failed = injector.fails(id);
            report.attempts.push(FaultAttempt {
                original: spec.id,
                task: id,
                replica: spec.replica,
                attempt,
                failed,
            });
            if !failed {
                break;
            }
            if !policy.may_retry(attempt) {
                if let Some(r) = spec.replica {
                    report.failed_replicas.insert(r);
                }
                break;
            }
            attempt += 1;
            id = TaskId(next_id);
            next_id += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilot::{Payload, TaskKind};

    fn stream(n: usize) -> Vec<TaskSpec> {
        (0..n)
            .map(|i| TaskSpec {
                id: TaskId(i as u64),
                replica: Some(i),
                kind: TaskKind::Md,
                cores: 1,
                payload: Payload::None,
            })
            .collect()
    }

    #[test]
    fn no_faults_leaves_stream_unchanged() {
        let policy = FaultPolicy { probability: 0.0, recovery: Recovery::Relaunch { max_retries: 3 } };
        let r = inject_faults(policy, &stream(10), 1, 100).unwrap();
        assert_eq!(r.attempts.len(), 10);
        assert!(r.attempts.iter().all(|a| !a.failed && a.task == a.original));
        assert!(r.failed_replicas.is_empty());
    }

    #[test]
    fn certain_failure_exhausts_retries() {
        let policy = FaultPolicy { probability: 1.0, recovery: Recovery::Relaunch { max_retries: 3 } };
        let r = inject_faults(policy, &stream(5), 1, 100).unwrap();
        assert_eq!(r.attempts.len(), 20);
        for i in 0..5 {
            let mine: Vec<_> = r.attempts.iter().filter(|a| a.replica == Some(i)).collect();
            assert_eq!(mine.len(), 4);
            assert_eq!(mine.last().unwrap().attempt, 3);
        }
        assert_eq!(r.failed_replicas.len(), 5);
        // fresh ids for every retry
        let ids: BTreeSet<_> = r.attempts.iter().map(|a| a.task).collect();
        assert_eq!(ids.len(), 20);
    }

    #[test]
    fn continue_fails_without_retry() {
        let policy = FaultPolicy { probability: 1.0, recovery: Recovery::Continue };
        let r = inject_faults(policy, &stream(3), 1, 100).unwrap();
        assert_eq!(r.attempts.len(), 3);
        assert_eq!(r.failed_replicas.len(), 3);
    }

    #[test]
    fn failure_rate_matches_probability() {
        let inj = FaultInjector::new(FaultPolicy { probability: 0.3, recovery: Recovery::Continue }, 11);
        let n = 20_000;
        let failed = (0..n).filter(|&i| inj.fails(TaskId(i))).count();
        let rate = failed as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.015, "{rate}");
    }

    #[test]
    fn rejects_bad_probability() {
        let policy = FaultPolicy { probability: 1.5, recovery: Recovery::Continue };
        assert!(inject_faults(policy, &stream(1), 0, 0).is_err());
    }
}
