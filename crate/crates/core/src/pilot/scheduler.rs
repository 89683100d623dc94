use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use super::executor::{Executor, NullExecutor};
use super::faults::{FaultInjector, FaultPolicy};
use super::{Backend, DurationModel, Event, EventKind, Payload, PilotSpec, TaskId, TaskKind, TaskSpec};
use crate::engine::EngineOutput;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    /// `None` when the backend does not execute payloads.
    Done(Option<EngineOutput>),
    /// Failed and not retried any further.
    Failed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub task: TaskId,
    /// Id of the first attempt when the task was relaunched.
    pub original: TaskId,
    pub replica: Option<usize>,
    pub kind: TaskKind,
    pub cycle: Option<u64>,
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SchedEvent {
    Completed(Completion),
    Timer(u64),
}

/// Timing facts about one task attempt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskRecord {
    pub kind: TaskKind,
    pub replica: Option<usize>,
    pub cores: u32,
    pub start: f64,
    pub end: f64,
    pub overhead: f64,
    pub duration: f64,
    /// Completion that freed the cores this task started on.
    pub predecessor: Option<TaskId>,
}

struct Queued {
    spec: TaskSpec,
    cycle: Option<u64>,
    attempt: u32,
    original: TaskId,
}

enum Item {
    Task(TaskId),
    Timer(u64),
}

struct Pending {
    time: f64,
    seq: u64,
    item: Item,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Discrete-event scheduler over a fixed core allocation.
///
/// Tasks queue in submission order, with energy and exchange tasks ahead of
/// MD. Dispatch happens once every event at the current instant has been
/// handled, so all tasks started together share one launch-overhead batch.
pub struct Scheduler<X: Executor> {
    total_cores: u32,
    free_cores: u32,
    walltime: Option<f64>,
    model: DurationModel,
    faults: FaultInjector,
    seed: u64,
    clock: f64,
    next_id: u64,
    seq: u64,
    queue: BTreeMap<(u8, u64), Queued>,
    heap: BinaryHeap<Pending>,
    running: HashMap<TaskId, Queued>,
    records: HashMap<TaskId, TaskRecord>,
    events: Vec<Event>,
    executor: X,
    truncated: bool,
    md_core_seconds: f64,
    last_end: Option<(TaskId, f64)>,
}

impl<X: Executor> Scheduler<X> {
    pub fn new(pilot: &PilotSpec, faults: FaultPolicy, seed: u64, executor: X) -> Result<Self> {
        pilot.validate()?;
        faults.validate()?;
        Ok(Scheduler {
            total_cores: pilot.total_cores,
            free_cores: pilot.total_cores,
            walltime: pilot.walltime,
            model: pilot.durations.clone(),
            faults: FaultInjector::new(faults, seed),
            seed,
            clock: 0.0,
            next_id: 0,
            seq: 0,
            queue: BTreeMap::new(),
            heap: BinaryHeap::new(),
            running: HashMap::new(),
            records: HashMap::new(),
            events: Vec::new(),
            executor,
            truncated: false,
            md_core_seconds: 0.0,
            last_end: None,
        })
    }

    /// Continues the clock and id sequence of an earlier run.
    /// Continues a previous pilot's clock. The walltime budget counts from
    /// `clock`, as for a freshly acquired allocation.
    pub fn resume_at(mut self, clock: f64, next_id: u64) -> Self {
        self.walltime = self.walltime.map(|w| w + clock - self.clock);
        self.clock = clock;
        self.next_id = next_id;
        self
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn next_task_id(&self) -> u64 {
        self.next_id
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn md_core_seconds(&self) -> f64 {
        self.md_core_seconds
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn model(&self) -> &DurationModel {
        &self.model
    }

    pub fn record(&self, task: TaskId) -> Option<&TaskRecord> {
        self.records.get(&task)
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.running.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    fn push_event(&mut self, event: EventKind, spec: Option<&TaskSpec>, cycle: Option<u64>) {
        self.events.push(Event {
            t: self.clock,
            event,
            task: spec.map(|s| s.id.0),
            replica: spec.and_then(|s| s.replica),
            cores: spec.map_or(0, |s| s.cores),
            kind: spec.map(|s| s.kind),
            cycle,
        });
    }

    /// Records a phase marker (barrier or exchange) at the current time.
    pub fn mark(&mut self, event: EventKind, cycle: Option<u64>) {
        self.push_event(event, None, cycle);
    }

    pub fn submit(
        &mut self,
        replica: Option<usize>,
        kind: TaskKind,
        cores: u32,
        payload: Payload,
        cycle: Option<u64>,
    ) -> Result<TaskId> {
        if cores == 0 || cores > self.total_cores {
            return Err(Error::InvalidTask(format!(
                "task needs {cores} cores, pilot has {}",
                self.total_cores
            )));
        }
        let id = TaskId(self.next_id);
        self.next_id += 1;
        let spec = TaskSpec { id, replica, kind, cores, payload };
        self.enqueue(Queued { spec, cycle, attempt: 0, original: id });
        Ok(id)
    }

    fn enqueue(&mut self, q: Queued) {
        self.push_event(EventKind::Submit, Some(&q.spec), q.cycle);
        let class = if q.spec.kind == TaskKind::Md { 1 } else { 0 };
        self.seq += 1;
        self.queue.insert((class, self.seq), q);
    }

    /// Schedules a timer; its token is returned by [`Scheduler::next_event`].
    pub fn set_timer(&mut self, at: f64, token: u64) {
        self.seq += 1;
        self.heap.push(Pending {
            time: at.max(self.clock),
            seq: self.seq,
            item: Item::Timer(token),
        });
    }

    /// Moves the clock forward while nothing is pending. Returns `false`
    /// (and flags truncation) when the walltime would be exceeded.
    pub fn advance(&mut self, dt: f64) -> Result<bool> {
        if !self.heap.is_empty() || !self.queue.is_empty() {
            return Err(Error::InvalidTask("clock advanced with work pending".into()));
        }
        let t = self.clock + dt;
        if self.walltime.is_some_and(|w| t > w) {
            self.truncated = true;
            return Ok(false);
        }
        self.clock = t;
        Ok(true)
    }

    fn dispatch(&mut self) {
        let mut batch = Vec::new();
        while let Some(entry) = self.queue.first_entry() {
            if entry.get().spec.cores > self.free_cores {
                break;
            }
            let q = entry.remove();
            self.free_cores -= q.spec.cores;
            batch.push(q);
        }
        if batch.is_empty() {
            return;
        }
        let overhead =
            self.model.launch_overhead + self.model.launch_overhead_per_task * batch.len() as f64;
        let predecessor = self
            .last_end
            .filter(|&(_, t)| t == self.clock)
            .map(|(id, _)| id);
        for q in batch {
            let id = q.spec.id;
            let duration = self.model.sample(q.spec.kind, q.spec.replica, self.seed, id);
            let end = self.clock + overhead + duration;
            self.push_event(EventKind::Start, Some(&q.spec), q.cycle);
            self.executor.launch(&q.spec);
            self.records.insert(
                id,
                TaskRecord {
                    kind: q.spec.kind,
                    replica: q.spec.replica,
                    cores: q.spec.cores,
                    start: self.clock,
                    end,
                    overhead,
                    duration,
                    predecessor,
                },
            );
            self.seq += 1;
            self.heap.push(Pending { time: end, seq: self.seq, item: Item::Task(id) });
            self.running.insert(id, q);
        }
    }

    /// Advances to the next completion or timer. `None` when nothing is left
    /// or the walltime ran out (see [`Scheduler::truncated`]).
    pub fn next_event(&mut self) -> Option<SchedEvent> {
        loop {
            if self.truncated {
                return None;
            }
            let same_instant = self.heap.peek().is_some_and(|p| p.time <= self.clock);
            if !same_instant {
                self.dispatch();
            }
            let p = self.heap.pop()?;
            if self.walltime.is_some_and(|w| p.time > w) {
                self.truncated = true;
                self.clock = self.walltime.unwrap_or(self.clock);
                return None;
            }
            self.clock = p.time;
            let id = match p.item {
                Item::Timer(token) => return Some(SchedEvent::Timer(token)),
                Item::Task(id) => id,
            };
            let q = self.running.remove(&id).expect("running task");
            self.free_cores += q.spec.cores;
            self.last_end = Some((id, self.clock));
            let result = self.executor.collect(id);
            let injected = q.spec.replica.is_some() && self.faults.fails(id);
            let failure = match (&result, injected) {
                (Err(e), _) => Some(e.to_string()),
                (Ok(_), true) => Some("injected failure".to_string()),
                (Ok(_), false) => None,
            };
            match failure {
                None => {
                    self.push_event(EventKind::End, Some(&q.spec), q.cycle);
                    if q.spec.kind == TaskKind::Md {
                        let rec = &self.records[&id];
                        self.md_core_seconds += rec.duration * rec.cores as f64;
                    }
                    return Some(SchedEvent::Completed(Completion {
                        task: id,
                        original: q.original,
                        replica: q.spec.replica,
                        kind: q.spec.kind,
                        cycle: q.cycle,
                        outcome: Outcome::Done(result.ok().flatten()),
                    }));
                }
                Some(reason) => {
                    self.push_event(EventKind::Fail, Some(&q.spec), q.cycle);
                    log::debug!("task {} failed: {reason}", id.0);
                    if self.faults.policy.may_retry(q.attempt) {
                        let fresh = TaskId(self.next_id);
                        self.next_id += 1;
                        let mut spec = q.spec;
                        spec.id = fresh;
                        self.enqueue(Queued {
                            spec,
                            cycle: q.cycle,
                            attempt: q.attempt + 1,
                            original: q.original,
                        });
                        continue;
                    }
                    return Some(SchedEvent::Completed(Completion {
                        task: id,
                        original: q.original,
                        replica: q.spec.replica,
                        kind: q.spec.kind,
                        cycle: q.cycle,
                        outcome: Outcome::Failed(reason),
                    }));
                }
            }
        }
    }

    /// Busy and launch-overhead time along the chain of tasks ending at
    /// `last`, going back through predecessors that started at or after
    /// `since`. The two sums add up to `end(last) - since` when the chain is
    /// unbroken.
    pub fn chain(&self, last: TaskId, since: f64) -> (f64, f64) {
        let (mut busy, mut overhead) = (0.0, 0.0);
        let mut cur = Some(last);
        while let Some(id) = cur {
            let Some(rec) = self.records.get(&id) else { break };
            if rec.start < since {
                break;
            }
            busy += rec.duration;
            overhead += rec.overhead;
            cur = rec.predecessor;
        }
        (busy, overhead)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadTask {
    pub replica: Option<usize>,
    pub kind: TaskKind,
    pub cores: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    pub events: Vec<Event>,
    pub makespan: f64,
    /// Integral of allocated cores over time, launch overhead included.
    pub core_seconds: f64,
}

/// Runs one batch of tasks, all submitted at time zero, on the virtual clock.
pub fn simulate_schedule(workload: &[WorkloadTask], pilot: &PilotSpec, seed: u64) -> Result<Schedule> {
    if pilot.backend != Backend::VirtualClock {
        return Err(Error::InvalidConfig("schedule simulation needs the virtual-clock backend".into()));
    }
    let mut sched = Scheduler::new(pilot, FaultPolicy::default(), seed, NullExecutor)?;
    for t in workload {
        sched.submit(t.replica, t.kind, t.cores, Payload::None, None)?;
    }
    while sched.next_event().is_some() {}
    let core_seconds = sched
        .records
        .values()
        .map(|r| (r.end - r.start) * r.cores as f64)
        .sum();
    Ok(Schedule {
        makespan: sched.clock(),
        core_seconds,
        events: sched.into_events(),
    })
}

/// Peak number of cores held by running tasks over an event trace.
pub fn max_concurrency_trace(events: &[Event]) -> u32 {
    let (mut now, mut peak) = (0i64, 0i64);
    for e in events {
        match e.event {
            EventKind::Start => now += e.cores as i64,
            EventKind::End | EventKind::Fail => now -= e.cores as i64,
            _ => {}
        }
        peak = peak.max(now);
    }
    peak as u32
}
