use std::collections::HashMap;
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{Payload, TaskId, TaskSpec};
use crate::engine::{execute, EngineOutput, PotentialSystem};
use crate::error::EngineError;

pub type ExecResult = Result<Option<EngineOutput>, EngineError>;

/// Runs task payloads. `launch` is called when a task starts in logical time,
/// `collect` when it ends; implementations may compute anywhere in between.
pub trait Executor {
    fn launch(&mut self, task: &TaskSpec);
    fn collect(&mut self, task: TaskId) -> ExecResult;
}

/// Duration-model-only execution: nothing runs.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullExecutor;

impl Executor for NullExecutor {
    fn launch(&mut self, _task: &TaskSpec) {}

    fn collect(&mut self, _task: TaskId) -> ExecResult {
        Ok(None)
    }
}

type Job = (TaskId, Payload);

/// Thread pool that runs engine requests as soon as they are launched.
pub struct WorkerPool {
    jobs: Option<Sender<Job>>,
    results: Receiver<(TaskId, ExecResult)>,
    finished: HashMap<TaskId, ExecResult>,
    workers: Vec<JoinHandle<()>>,
    /// Engine seconds spent by workers, wall clock.
    pub busy_seconds: f64,
}

impl WorkerPool {
    pub fn new(system: PotentialSystem, workers: usize) -> Self {
        let (job_tx, job_rx) = unbounded::<Job>();
        let (res_tx, res_rx) = unbounded();
        let workers = (0..workers.max(1))
            .map(|_| {
                let rx = job_rx.clone();
                let tx = res_tx.clone();
                std::thread::spawn(move || {
                    for (id, payload) in rx {
                        let out = match &payload {
                            Payload::None => Ok(None),
                            Payload::Engine(req) => execute(&system, req).map(Some),
                        };
                        if tx.send((id, out)).is_err() {
                            break;
                        }
                    }
                })
            })
            .collect();
        WorkerPool {
            jobs: Some(job_tx),
            results: res_rx,
            finished: HashMap::new(),
            workers,
            busy_seconds: 0.0,
        }
    }
}

impl Executor for WorkerPool {
    fn launch(&mut self, task: &TaskSpec) {
        if let Some(tx) = &self.jobs {
            tx.send((task.id, task.payload.clone()))
                .expect("worker pool alive while the pool exists");
        }
    }

    fn collect(&mut self, task: TaskId) -> ExecResult {
        let waited = std::time::Instant::now();
        let out = loop {
            if let Some(r) = self.finished.remove(&task) {
                break r;
            }
            match self.results.recv() {
                Ok((id, r)) => {
                    self.finished.insert(id, r);
                }
                Err(_) => break Err(EngineError::BadRequest("worker pool shut down".into())),
            }
        };
        self.busy_seconds += waited.elapsed().as_secs_f64();
        out
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.jobs.take();
        for h in self.workers.drain(..) {
            let _ = h.join();
        }
    }
}
