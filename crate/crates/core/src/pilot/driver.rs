use std::collections::{BTreeSet, HashMap, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::executor::{Executor, NullExecutor, WorkerPool};
use super::faults::FaultPolicy;
use super::scheduler::{Completion, Outcome, SchedEvent, Scheduler};
use super::{max_concurrency, Backend, Event, EventKind, Payload, PilotSpec, TaskId, TaskKind};
use crate::engine::{total_energy, EngineOutput, EngineRequest, EngineResult, MdSettings, PotentialSystem, RequestKind};
use crate::error::{Error, Result};
use crate::exchange::{
    active_dimension, apply_swaps, decide, exchange_rng, group_by_inactive, group_subset,
    local_energies, pair_neighbors, pairing_phase, CrossEnergies, ExchangeRecord,
};
use crate::metrics::{cycle_time, utilization, CycleTiming};
use crate::model::{derive_seed, ParamKind, ReplicaGrid, ReplicaStatus};

const MD_STREAM: u64 = 0x4D44;

/// Exchange gate of the asynchronous pattern.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AsyncCriterion {
    /// Every `n` arrivals exchange among themselves.
    FifoN { n: usize },
    /// Arrivals within `seconds` of the first one exchange together.
    TimeWindow { seconds: f64 },
}

impl AsyncCriterion {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AsyncCriterion::FifoN { n } if n < 1 => {
                Err(Error::InvalidConfig("FIFO gate size must be >= 1".into()))
            }
            AsyncCriterion::TimeWindow { seconds } if !(seconds > 0.0 && seconds.is_finite()) => {
                Err(Error::InvalidConfig(format!("time window {seconds} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Scheduler state carried across a restart.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Resume {
    pub clock: f64,
    pub next_task_id: u64,
    /// Exchange phases completed so far; drives dimension selection in the
    /// asynchronous pattern.
    pub exchanges: u64,
}

#[derive(Clone, Debug)]
pub struct RunSetup<'a> {
    pub system: &'a PotentialSystem,
    pub md: MdSettings,
    pub pilot: &'a PilotSpec,
    pub faults: FaultPolicy,
    pub seed: u64,
    /// Cycle count every replica should reach.
    pub target_cycles: u64,
    pub record_samples: bool,
    pub resume: Resume,
}

/// Trajectory frames of one MD segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub replica: usize,
    pub cycle: u64,
    pub coords: Vec<usize>,
    pub temperature: f64,
    pub lambda: f64,
    pub restrained: bool,
    pub frames: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub cycle: u64,
    pub dim: usize,
    pub timing: CycleTiming,
    pub t_c: f64,
    /// Host wall-clock seconds; the only non-deterministic field.
    pub wall_clock_s: f64,
}

/// Replicas gated into one asynchronous exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeSet {
    pub index: u64,
    pub t: f64,
    pub dim: usize,
    /// In arrival order.
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub events: Vec<Event>,
    pub exchanges: Vec<ExchangeRecord>,
    pub sets: Vec<ExchangeSet>,
    pub timings: Vec<TimingRow>,
    pub samples: Vec<SampleBatch>,
    pub truncated: bool,
    pub start_clock: f64,
    pub end_clock: f64,
    pub md_core_seconds: f64,
    pub total_cores: u32,
    /// MD waves per synchronous MD phase.
    pub waves: Vec<u64>,
    pub resume: Resume,
}

impl RunLog {
    pub fn span(&self) -> f64 {
        self.end_clock - self.start_clock
    }

    pub fn utilization(&self) -> Result<f64> {
        utilization(self.md_core_seconds, self.total_cores, self.span())
    }
}

fn prepare(grid: &mut ReplicaGrid, setup: &RunSetup) -> Result<()> {
    setup.pilot.validate()?;
    setup.faults.validate()?;
    grid.check_coords()?;
    let dims = setup.system.dims();
    for i in 0..grid.len() {
        let params = grid.params_of(i);
        let r = &mut grid.replicas[i];
        if r.positions.is_empty() {
            r.positions = setup.system.initial_positions();
        }
        if r.velocities.len() != dims {
            r.velocities = vec![0.0; dims];
        }
        r.energy = total_energy(setup.system, &r.positions, &params)?;
        if r.status != ReplicaStatus::Failed {
            r.status = ReplicaStatus::Idle;
        }
    }
    Ok(())
}

fn md_payload(grid: &ReplicaGrid, id: usize, setup: &RunSetup) -> Payload {
    let r = &grid.replicas[id];
    Payload::Engine(Box::new(EngineRequest {
        positions: r.positions.clone(),
        velocities: r.velocities.clone(),
        seed: derive_seed(r.seed, &[MD_STREAM, r.cycle]),
        params: grid.params_of(id),
        kind: RequestKind::MdSegment(setup.md),
    }))
}

fn apply_segment(grid: &mut ReplicaGrid, id: usize, res: EngineResult, setup: &RunSetup, samples: &mut Vec<SampleBatch>) {
    let params = grid.params_of(id);
    let r = &mut grid.replicas[id];
    if setup.record_samples {
        samples.push(SampleBatch {
            replica: id,
            cycle: r.cycle,
            coords: r.coords.clone(),
            temperature: params.temperature,
            lambda: params.lambda,
            restrained: !params.restraints.is_empty(),
            frames: res.trajectory.into_iter().skip(1).collect(),
        });
    }
    r.positions = res.positions;
    r.velocities = res.velocities;
    r.energy = res.energy;
}

/// Recomputes own-parameter energies after swaps changed parameters.
fn refresh_energies(grid: &mut ReplicaGrid, system: &PotentialSystem, record: &ExchangeRecord) -> Result<()> {
    for p in record.pairs.iter().filter(|p| p.accepted) {
        for id in [p.i, p.j] {
            let e = total_energy(system, &grid.replicas[id].positions, &grid.params_of(id))?;
            grid.replicas[id].energy = e;
        }
    }
    Ok(())
}

fn energy_payload(grid: &ReplicaGrid, config_of: usize, hamiltonian_of: usize) -> Payload {
    let r = &grid.replicas[config_of];
    Payload::Engine(Box::new(EngineRequest {
        positions: r.positions.clone(),
        velocities: Vec::new(),
        seed: 0,
        params: grid.params_of(config_of),
        kind: RequestKind::SinglePointEnergy { foreign: grid.params_of(hamiltonian_of) },
    }))
}

fn needs_energy_tasks(grid: &ReplicaGrid, dim: usize) -> bool {
    grid.dimensions()[dim].kind().param_kind() == ParamKind::HamiltonianScale
}

/// Runs the synchronous pattern: MD for every replica, global barrier,
/// exchange in one dimension, global barrier.
pub fn run_sync(grid: &mut ReplicaGrid, setup: &RunSetup) -> Result<RunLog> {
    match setup.pilot.backend {
        Backend::VirtualClock => run_sync_with(grid, setup, NullExecutor),
        Backend::RealWorkers { workers } => {
            run_sync_with(grid, setup, WorkerPool::new(*setup.system, workers))
        }
    }
}

/// Runs the asynchronous pattern under `criterion`.
pub fn run_async(grid: &mut ReplicaGrid, setup: &RunSetup, criterion: AsyncCriterion) -> Result<RunLog> {
    match setup.pilot.backend {
        Backend::VirtualClock => run_async_with(grid, setup, criterion, NullExecutor),
        Backend::RealWorkers { workers } => run_async_with(
            grid,
            setup,
            criterion,
            WorkerPool::new(*setup.system, workers),
        ),
    }
}

fn new_scheduler<X: Executor>(setup: &RunSetup, executor: X) -> Result<Scheduler<X>> {
    Ok(Scheduler::new(setup.pilot, setup.faults, setup.seed, executor)?
        .resume_at(setup.resume.clock, setup.resume.next_task_id))
}

/// Waits for `count` completions. Returns `false` on truncation.
fn drain<X: Executor>(
    sched: &mut Scheduler<X>,
    mut count: usize,
    mut on: impl FnMut(Completion) -> Result<()>,
) -> Result<bool> {
    while count > 0 {
        match sched.next_event() {
            Some(SchedEvent::Completed(c)) => {
                count -= 1;
                on(c)?;
            }
            Some(SchedEvent::Timer(_)) => {}
            None => return Ok(false),
        }
    }
    Ok(true)
}

fn finish(grid: &mut ReplicaGrid, target: u64) {
    for r in &mut grid.replicas {
        if r.status != ReplicaStatus::Failed {
            r.status = if r.cycle >= target { ReplicaStatus::Done } else { ReplicaStatus::Idle };
        }
    }
}

fn run_sync_with<X: Executor>(grid: &mut ReplicaGrid, setup: &RunSetup, executor: X) -> Result<RunLog> {
    prepare(grid, setup)?;
    let mut sched = new_scheduler(setup, executor)?;
    let model = setup.pilot.durations.clone();
    let cores = setup.pilot.cores_per_replica;
    let concurrency = max_concurrency(setup.pilot) as u64;
    let nd = grid.dimensions().len();
    let mut log = RunLog {
        start_clock: sched.clock(),
        total_cores: setup.pilot.total_cores,
        ..RunLog::default()
    };
    let mut exchanges_done = setup.resume.exchanges;
    let mut rollback: Option<(ReplicaGrid, Resume, usize)> = None;

    loop {
        let active: Vec<usize> = grid
            .replicas
            .iter()
            .filter(|r| r.status != ReplicaStatus::Failed)
            .map(|r| r.id)
            .collect();
        let Some(&first) = active.first() else { break };
        let cycle = grid.replicas[first].cycle;
        if cycle >= setup.target_cycles {
            break;
        }
        if active.iter().any(|&id| grid.replicas[id].cycle != cycle) {
            return Err(Error::InvalidConfig("synchronous run needs equal cycle counts".into()));
        }
        let wall = Instant::now();
        let cycle_start = sched.clock();
        // a cut-short cycle is undone so the restart state sits on a boundary
        let snapshot = (
            grid.clone(),
            Resume { clock: cycle_start, next_task_id: sched.next_task_id(), exchanges: exchanges_done },
            log.samples.len(),
        );
        if !sched.advance(model.framework_overhead)? {
            rollback = Some(snapshot);
            break;
        }

        // MD phase
        let md_start = sched.clock();
        for &id in &active {
            grid.replicas[id].status = ReplicaStatus::RunningMd;
            let payload = md_payload(grid, id, setup);
            sched.submit(Some(id), TaskKind::Md, cores, payload, Some(cycle))?;
        }
        log.waves.push((active.len() as u64).div_ceil(concurrency));
        let mut last = None;
        let complete = drain(&mut sched, active.len(), |c| {
            last = Some(c.task);
            let id = c.replica.expect("MD task has a replica");
            match c.outcome {
                Outcome::Done(Some(EngineOutput::Segment(res))) => {
                    apply_segment(grid, id, res, setup, &mut log.samples);
                    grid.replicas[id].status = ReplicaStatus::AwaitingExchange;
                }
                Outcome::Done(_) => grid.replicas[id].status = ReplicaStatus::AwaitingExchange,
                Outcome::Failed(reason) => {
                    log::warn!("replica {id} failed in cycle {cycle}: {reason}");
                    grid.replicas[id].status = ReplicaStatus::Failed;
                }
            }
            Ok(())
        })?;
        if !complete {
            rollback = Some(snapshot);
            break;
        }
        sched.mark(EventKind::Barrier, Some(cycle));
        let (t_md, mut t_launch) = last.map_or((0.0, 0.0), |t| sched.chain(t, md_start));

        // exchange phase
        let dim = active_dimension(cycle, nd)?;
        let phase = pairing_phase(cycle, nd);
        let mut pairs: Vec<(usize, usize)> = group_by_inactive(grid, dim)
            .iter()
            .flat_map(|g| pair_neighbors(g, phase))
            .collect();
        let mut t_ex = 0.0;
        let energies = if needs_energy_tasks(grid, dim) && !pairs.is_empty() {
            let ex_start = sched.clock();
            let mut cross = CrossEnergies::default();
            let mut owners = HashMap::new();
            for &(i, j) in &pairs {
                for (config_of, hamiltonian_of) in [(i, j), (j, i)] {
                    let id = sched.submit(
                        Some(config_of),
                        TaskKind::EnergyEval,
                        cores,
                        energy_payload(grid, config_of, hamiltonian_of),
                        Some(cycle),
                    )?;
                    owners.insert(id, hamiltonian_of);
                }
            }
            let mut last = None;
            let complete = drain(&mut sched, pairs.len() * 2, |c| {
                last = Some(c.task);
                let config_of = c.replica.expect("energy task has a replica");
                let hamiltonian_of = owners[&c.original];
                match c.outcome {
                    Outcome::Done(Some(EngineOutput::Energy(e))) => cross.insert(hamiltonian_of, config_of, e),
                    Outcome::Done(_) => {
                        let e = total_energy(
                            setup.system,
                            &grid.replicas[config_of].positions,
                            &grid.params_of(hamiltonian_of),
                        )?;
                        cross.insert(hamiltonian_of, config_of, e);
                    }
                    Outcome::Failed(reason) => {
                        log::warn!("replica {config_of} failed evaluating energy: {reason}");
                        grid.replicas[config_of].status = ReplicaStatus::Failed;
                    }
                }
                Ok(())
            })?;
            if !complete {
                rollback = Some(snapshot);
                break;
            }
            let (busy, over) = last.map_or((0.0, 0.0), |t| sched.chain(t, ex_start));
            t_ex += busy;
            t_launch += over;
            pairs.retain(|&(i, j)| {
                grid.replicas[i].status != ReplicaStatus::Failed
                    && grid.replicas[j].status != ReplicaStatus::Failed
            });
            for &(i, j) in &pairs {
                cross.insert(i, i, grid.replicas[i].energy);
                cross.insert(j, j, grid.replicas[j].energy);
            }
            cross
        } else {
            local_energies(grid, setup.system, &pairs)?
        };

        let compute = sched.submit(None, TaskKind::ExchangeCompute, 1, Payload::None, Some(cycle))?;
        if !drain(&mut sched, 1, |_| Ok(()))? {
            rollback = Some(snapshot);
            break;
        }
        let rec = *sched.record(compute).expect("exchange task record");
        t_ex += rec.duration;
        t_launch += rec.overhead;
        let mut rng = exchange_rng(setup.seed, cycle, dim);
        let record = decide(grid, cycle, dim, &pairs, &energies, &mut rng)?;
        apply_swaps(grid, &record)?;
        refresh_energies(grid, setup.system, &record)?;
        sched.mark(EventKind::Exchange, Some(cycle));
        log.exchanges.push(record);
        exchanges_done += 1;
        for r in grid.replicas.iter_mut().filter(|r| r.status != ReplicaStatus::Failed) {
            r.cycle += 1;
            r.status = ReplicaStatus::Idle;
        }

        let data_ok = sched.advance(model.data)?;
        if data_ok {
            sched.mark(EventKind::Barrier, Some(cycle));
        }
        let timing = CycleTiming {
            t_md,
            t_ex,
            t_data: model.data,
            t_framework_over: model.framework_overhead,
            t_launch_over: t_launch,
        };
        let t_c = cycle_time(&timing)?;
        debug_assert!(!data_ok || (t_c - (sched.clock() - cycle_start)).abs() < 1e-6 * (1.0 + t_c));
        log.timings.push(TimingRow {
            cycle,
            dim,
            timing,
            t_c,
            wall_clock_s: wall.elapsed().as_secs_f64(),
        });
        if !data_ok {
            break;
        }
    }

    log.resume = Resume {
        clock: sched.clock(),
        next_task_id: sched.next_task_id(),
        exchanges: exchanges_done,
    };
    if let Some((saved, resume, samples)) = rollback {
        *grid = saved;
        log.resume = resume;
        log.samples.truncate(samples);
    }
    finish(grid, setup.target_cycles);
    log.truncated = sched.truncated();
    log.end_clock = sched.clock();
    log.md_core_seconds = sched.md_core_seconds();
    log.events = sched.into_events();
    Ok(log)
}

enum Owner {
    Md(usize),
    Energy { set: u64, hamiltonian_of: usize },
    Compute(u64),
}

struct InFlight {
    index: u64,
    dim: usize,
    members: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    cross: CrossEnergies,
    pending_energy: usize,
    md_busy: f64,
    md_launch: f64,
    energy_busy: f64,
    energy_launch: f64,
    wall: f64,
}

struct AsyncRun<'s, 'a, X: Executor> {
    grid: &'s mut ReplicaGrid,
    setup: &'s RunSetup<'a>,
    sched: Scheduler<X>,
    criterion: AsyncCriterion,
    log: RunLog,
    owners: HashMap<TaskId, Owner>,
    waiting: VecDeque<usize>,
    sets: HashMap<u64, InFlight>,
    releases: HashMap<u64, Vec<usize>>,
    next_timer: u64,
    window: Option<u64>,
    exchanges: u64,
    last_md: HashMap<usize, TaskId>,
    started: Instant,
}

const WINDOW_BIT: u64 = 1 << 63;

impl<X: Executor> AsyncRun<'_, '_, X> {
    fn launch_md(&mut self, id: usize) -> Result<()> {
        let r = &mut self.grid.replicas[id];
        if r.cycle >= self.setup.target_cycles {
            r.status = ReplicaStatus::Done;
            return Ok(());
        }
        r.status = ReplicaStatus::RunningMd;
        let cycle = r.cycle;
        let payload = md_payload(self.grid, id, self.setup);
        let task = self.sched.submit(
            Some(id),
            TaskKind::Md,
            self.setup.pilot.cores_per_replica,
            payload,
            Some(cycle),
        )?;
        self.owners.insert(task, Owner::Md(id));
        Ok(())
    }

    fn release(&mut self, id: usize) -> Result<()> {
        if self.grid.replicas[id].status == ReplicaStatus::Failed {
            return Ok(());
        }
        self.grid.replicas[id].cycle += 1;
        self.launch_md(id)
    }

    fn on_completion(&mut self, c: Completion) -> Result<()> {
        let owner = self.owners.remove(&c.original).expect("task owner");
        match owner {
            Owner::Md(id) => {
                self.last_md.insert(id, c.task);
                match c.outcome {
                    Outcome::Done(out) => {
                        if let Some(EngineOutput::Segment(res)) = out {
                            apply_segment(self.grid, id, res, self.setup, &mut self.log.samples);
                        }
                        self.grid.replicas[id].status = ReplicaStatus::AwaitingExchange;
                        self.waiting.push_back(id);
                    }
                    Outcome::Failed(reason) => {
                        log::warn!("replica {id} failed: {reason}");
                        self.grid.replicas[id].status = ReplicaStatus::Failed;
                    }
                }
            }
            Owner::Energy { set, hamiltonian_of } => {
                let config_of = c.replica.expect("energy task has a replica");
                if let Some(rec) = self.sched.record(c.task) {
                    let s = self.sets.get_mut(&set).expect("set in flight");
                    s.energy_busy = s.energy_busy.max(rec.duration);
                    s.energy_launch = s.energy_launch.max(rec.overhead);
                }
                match c.outcome {
                    Outcome::Done(Some(EngineOutput::Energy(e))) => {
                        self.sets.get_mut(&set).expect("set in flight").cross.insert(hamiltonian_of, config_of, e);
                    }
                    Outcome::Done(_) => {
                        let e = total_energy(
                            self.setup.system,
                            &self.grid.replicas[config_of].positions,
                            &self.grid.params_of(hamiltonian_of),
                        )?;
                        self.sets.get_mut(&set).expect("set in flight").cross.insert(hamiltonian_of, config_of, e);
                    }
                    Outcome::Failed(reason) => {
                        log::warn!("replica {config_of} failed evaluating energy: {reason}");
                        self.grid.replicas[config_of].status = ReplicaStatus::Failed;
                    }
                }
                let s = self.sets.get_mut(&set).expect("set in flight");
                s.pending_energy -= 1;
                if s.pending_energy == 0 {
                    self.submit_compute(set)?;
                }
            }
            Owner::Compute(set) => self.complete_set(set, c.task)?,
        }
        Ok(())
    }

    fn submit_compute(&mut self, set: u64) -> Result<()> {
        let task = self.sched.submit(None, TaskKind::ExchangeCompute, 1, Payload::None, Some(set))?;
        self.owners.insert(task, Owner::Compute(set));
        Ok(())
    }

    fn form_set(&mut self, members: Vec<usize>) -> Result<()> {
        let k = self.exchanges;
        self.exchanges += 1;
        let nd = self.grid.dimensions().len();
        let dim = active_dimension(k, nd)?;
        let phase = pairing_phase(k, nd);
        self.log.sets.push(ExchangeSet { index: k, t: self.sched.clock(), dim, members: members.clone() });
        let pairs: Vec<(usize, usize)> = group_subset(self.grid, dim, &members)
            .iter()
            .flat_map(|g| pair_neighbors(g, phase))
            .collect();
        let paired: BTreeSet<usize> = pairs.iter().flat_map(|&(i, j)| [i, j]).collect();
        // unpaired members go straight back to MD
        for &id in members.iter().filter(|id| !paired.contains(id)) {
            self.release(id)?;
        }
        if pairs.is_empty() {
            self.sched.mark(EventKind::Exchange, Some(k));
            self.log.exchanges.push(ExchangeRecord { cycle: k, dim, pairs: Vec::new() });
            return Ok(());
        }
        let (mut md_busy, mut md_launch) = (0.0f64, 0.0f64);
        for &id in &paired {
            self.grid.replicas[id].status = ReplicaStatus::InExchange;
            if let Some(rec) = self.last_md.get(&id).and_then(|t| self.sched.record(*t)) {
                md_busy = md_busy.max(rec.duration);
                md_launch = md_launch.max(rec.overhead);
            }
        }
        let energy_tasks = needs_energy_tasks(self.grid, dim);
        let mut flight = InFlight {
            index: k,
            dim,
            members: paired.iter().copied().collect(),
            pairs,
            cross: CrossEnergies::default(),
            pending_energy: 0,
            md_busy,
            md_launch,
            energy_busy: 0.0,
            energy_launch: 0.0,
            wall: self.started.elapsed().as_secs_f64(),
        };
        if energy_tasks {
            for &(i, j) in &flight.pairs {
                for (config_of, hamiltonian_of) in [(i, j), (j, i)] {
                    let task = self.sched.submit(
                        Some(config_of),
                        TaskKind::EnergyEval,
                        self.setup.pilot.cores_per_replica,
                        energy_payload(self.grid, config_of, hamiltonian_of),
                        Some(k),
                    )?;
                    self.owners.insert(task, Owner::Energy { set: k, hamiltonian_of });
                    flight.pending_energy += 1;
                }
            }
            self.sets.insert(k, flight);
        } else {
            self.sets.insert(k, flight);
            self.submit_compute(k)?;
        }
        Ok(())
    }

    fn complete_set(&mut self, set: u64, compute: TaskId) -> Result<()> {
        let mut s = self.sets.remove(&set).expect("set in flight");
        let grid = &*self.grid;
        s.pairs.retain(|&(i, j)| {
            grid.replicas[i].status != ReplicaStatus::Failed && grid.replicas[j].status != ReplicaStatus::Failed
        });
        let energies = if needs_energy_tasks(grid, s.dim) {
            for &(i, j) in &s.pairs {
                s.cross.insert(i, i, grid.replicas[i].energy);
                s.cross.insert(j, j, grid.replicas[j].energy);
            }
            std::mem::take(&mut s.cross)
        } else {
            local_energies(grid, self.setup.system, &s.pairs)?
        };
        let mut rng = exchange_rng(self.setup.seed, s.index, s.dim);
        let record = decide(grid, s.index, s.dim, &s.pairs, &energies, &mut rng)?;
        apply_swaps(self.grid, &record)?;
        refresh_energies(self.grid, self.setup.system, &record)?;
        self.sched.mark(EventKind::Exchange, Some(s.index));
        self.log.exchanges.push(record);

        let model = self.sched.model();
        let rec = *self.sched.record(compute).expect("exchange task record");
        let timing = CycleTiming {
            t_md: s.md_busy,
            t_ex: s.energy_busy + rec.duration,
            t_data: model.data,
            t_framework_over: model.framework_overhead,
            t_launch_over: s.md_launch + s.energy_launch + rec.overhead,
        };
        let delay = model.data + model.framework_overhead;
        self.log.timings.push(TimingRow {
            cycle: s.index,
            dim: s.dim,
            t_c: cycle_time(&timing)?,
            timing,
            wall_clock_s: self.started.elapsed().as_secs_f64() - s.wall,
        });
        for &id in &s.members {
            if self.grid.replicas[id].status == ReplicaStatus::InExchange {
                self.grid.replicas[id].status = ReplicaStatus::Idle;
            }
        }
        let token = self.next_timer;
        self.next_timer += 1;
        self.releases.insert(token, s.members);
        let at = self.sched.clock() + delay;
        self.sched.set_timer(at, token);
        Ok(())
    }

    fn on_timer(&mut self, token: u64) -> Result<()> {
        if token & WINDOW_BIT != 0 {
            self.window = None;
            let members: Vec<usize> = self.waiting.drain(..).collect();
            if !members.is_empty() {
                self.form_set(members)?;
            }
            return Ok(());
        }
        let members = self.releases.remove(&token).expect("release timer");
        for id in members {
            self.release(id)?;
        }
        Ok(())
    }

    fn gate(&mut self) -> Result<()> {
        match self.criterion {
            AsyncCriterion::FifoN { n } => {
                while self.waiting.len() >= n {
                    let members: Vec<usize> = self.waiting.drain(..n).collect();
                    self.form_set(members)?;
                }
                // Nothing else can arrive: exchange whoever is left.
                let quiet = self.sets.is_empty()
                    && self.releases.is_empty()
                    && !self
                        .grid
                        .replicas
                        .iter()
                        .any(|r| r.status == ReplicaStatus::RunningMd);
                if quiet && !self.waiting.is_empty() {
                    let members: Vec<usize> = self.waiting.drain(..).collect();
                    self.form_set(members)?;
                }
            }
            AsyncCriterion::TimeWindow { seconds } => {
                if self.window.is_none() && !self.waiting.is_empty() {
                    let token = WINDOW_BIT | self.next_timer;
                    self.next_timer += 1;
                    self.window = Some(token);
                    let at = self.sched.clock() + seconds;
                    self.sched.set_timer(at, token);
                }
            }
        }
        Ok(())
    }
}

fn run_async_with<X: Executor>(
    grid: &mut ReplicaGrid,
    setup: &RunSetup,
    criterion: AsyncCriterion,
    executor: X,
) -> Result<RunLog> {
    criterion.validate()?;
    prepare(grid, setup)?;
    let sched = new_scheduler(setup, executor)?;
    let log = RunLog {
        start_clock: sched.clock(),
        total_cores: setup.pilot.total_cores,
        ..RunLog::default()
    };
    let mut run = AsyncRun {
        grid,
        setup,
        sched,
        criterion,
        log,
        owners: HashMap::new(),
        waiting: VecDeque::new(),
        sets: HashMap::new(),
        releases: HashMap::new(),
        next_timer: 0,
        window: None,
        exchanges: setup.resume.exchanges,
        last_md: HashMap::new(),
        started: Instant::now(),
    };
    for id in 0..run.grid.len() {
        if run.grid.replicas[id].status != ReplicaStatus::Failed {
            run.launch_md(id)?;
        }
    }
    while let Some(ev) = run.sched.next_event() {
        match ev {
            SchedEvent::Completed(c) => run.on_completion(c)?,
            SchedEvent::Timer(token) => run.on_timer(token)?,
        }
        run.gate()?;
    }
    let truncated = run.sched.truncated();
    if !truncated {
        if let Some(r) = run.grid.replicas.iter().find(|r| r.is_active()) {
            return Err(Error::InvalidTask(format!(
                "asynchronous run stalled with replica {} at cycle {}",
                r.id, r.cycle
            )));
        }
    }
    let AsyncRun { grid, sched, mut log, exchanges, .. } = run;
    finish(grid, setup.target_cycles);
    log.truncated = truncated;
    log.end_clock = sched.clock();
    log.md_core_seconds = sched.md_core_seconds();
    log.resume = Resume {
        clock: sched.clock(),
        next_task_id: sched.next_task_id(),
        exchanges,
    };
    log.events = sched.into_events();
    Ok(log)
}
