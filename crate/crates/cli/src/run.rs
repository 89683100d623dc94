use std::fs::{self, File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};

use repex_core::config::{load_config, Pattern, SimulationConfig};
use repex_core::io::{
    decode_restart, encode_restart, write_jsonl, write_key_values, write_timings, RestartFile, CONFIG_FILE,
    EVENTS_FILE, EXCHANGES_FILE, RESTART_FILE, SAMPLES_FILE, SUMMARY_FILE, TIMINGS_FILE,
};
use repex_core::model::{ReplicaGrid, ReplicaStatus};
use repex_core::pilot::{execution_mode, max_concurrency, run_async, run_sync, Backend, Resume, RunLog, RunSetup};

use crate::Common;

fn configured(common: &Common) -> Result<SimulationConfig> {
    let path = common.config.as_deref().context("--config is required")?;
    let mut config = load_config(path).with_context(|| format!("loading {}", path.display()))?;
    apply_overrides(&mut config, common);
    Ok(config)
}

fn apply_overrides(config: &mut SimulationConfig, common: &Common) {
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
}

pub fn execute(config: &SimulationConfig, grid: &mut ReplicaGrid, resume: Resume) -> Result<RunLog> {
    let system = config.system();
    let pilot = config.pilot_spec()?;
    let setup = RunSetup {
        system: &system,
        md: config.md_settings(),
        pilot: &pilot,
        faults: config.faults,
        seed: config.seed,
        target_cycles: config.cycles,
        record_samples: config.record_samples,
        resume,
    };
    let log = match config.pattern {
        Pattern::Sync => run_sync(grid, &setup)?,
        Pattern::Async { criterion } => run_async(grid, &setup, criterion)?,
    };
    Ok(log)
}

/// Everything that must agree between a restart file and the configuration
/// used to continue it.
fn fingerprint(config: &SimulationConfig) -> SimulationConfig {
    let mut c = config.clone();
    c.cycles = 0;
    c.output_dir = PathBuf::new();
    c.pilot.walltime = None;
    c
}

pub fn cmd_run(common: &Common, resume: Option<&Path>) -> Result<bool> {
    let (config, mut grid, state, append) = match resume {
        None => {
            let config = configured(common)?;
            let grid = config.build_grid()?;
            (config, grid, Resume::default(), false)
        }
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let restart = decode_restart(&text).with_context(|| format!("decoding {}", path.display()))?;
            let mut config = match &common.config {
                Some(_) => configured(common)?,
                None => {
                    let mut c = restart.config.clone();
                    apply_overrides(&mut c, common);
                    c
                }
            };
            if common.out.is_none() && common.config.is_none() {
                config.output_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
            }
            ensure!(
                fingerprint(&config) == fingerprint(&restart.config),
                "configuration differs from the one stored in {} (only cycles, output_dir and pilot.walltime may change)",
                path.display()
            );
            let grid = restart.grid()?;
            (config, grid, restart.resume, true)
        }
    };
    if matches!(config.pilot.backend, Backend::VirtualClock) {
        warn!("virtual-clock backend: no MD is executed; use `simulate` for scheduling studies");
    }
    let log = execute(&config, &mut grid, state)?;
    write_artifacts(&config, &grid, &log, append, true)?;
    report(&config, &grid, &log);
    Ok(true)
}

pub fn cmd_simulate(common: &Common) -> Result<bool> {
    let config = configured(common)?;
    if !matches!(config.pilot.backend, Backend::VirtualClock) {
        bail!(
            "simulate needs the virtual clock backend; hint: set \"pilot\": {{\"backend\": {{\"kind\": \"virtual_clock\"}}}} or use `run`"
        );
    }
    let mut grid = config.build_grid()?;
    let log = execute(&config, &mut grid, Resume::default())?;
    write_artifacts(&config, &grid, &log, false, false)?;
    report(&config, &grid, &log);
    Ok(true)
}

fn open(dir: &Path, name: &str, append: bool) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = if append {
        OpenOptions::new().create(true).append(true).open(&path)
    } else {
        File::create(&path)
    };
    Ok(BufWriter::new(file.with_context(|| format!("opening {}", path.display()))?))
}

fn summary(config: &SimulationConfig, grid: &ReplicaGrid, log: &RunLog) -> Result<Vec<(String, String)>> {
    let pilot = config.pilot_spec()?;
    let concurrency = max_concurrency(&pilot);
    let failed = grid.replicas.iter().filter(|r| r.status == ReplicaStatus::Failed).count();
    let completed = grid
        .replicas
        .iter()
        .filter(|r| r.status != ReplicaStatus::Failed)
        .map(|r| r.cycle)
        .min()
        .unwrap_or(0);
    let utilization = match log.utilization() {
        Ok(u) => format!("{u}"),
        Err(_) => "n/a".into(),
    };
    let waves = log.waves.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let pattern = match config.pattern {
        Pattern::Sync => "sync".to_string(),
        Pattern::Async { criterion } => format!("async {criterion:?}"),
    };
    let rows = [
        ("replicas", grid.len().to_string()),
        ("total_cores", log.total_cores.to_string()),
        ("cores_per_replica", pilot.cores_per_replica.to_string()),
        ("max_concurrency", concurrency.to_string()),
        ("execution_mode", format!("{:?}", execution_mode(&pilot, grid.len()))),
        ("md_waves", (grid.len() as u64).div_ceil(concurrency as u64).to_string()),
        ("waves_per_phase", waves),
        ("pattern", pattern),
        ("exchange_phases", log.exchanges.len().to_string()),
        ("cycles_completed", completed.to_string()),
        ("failed_replicas", failed.to_string()),
        ("start_clock", log.start_clock.to_string()),
        ("makespan", log.end_clock.to_string()),
        ("span", log.span().to_string()),
        ("md_core_seconds", log.md_core_seconds.to_string()),
        ("utilization_percent", utilization),
        ("truncated", log.truncated.to_string()),
    ];
    Ok(rows.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

fn write_artifacts(
    config: &SimulationConfig,
    grid: &ReplicaGrid,
    log: &RunLog,
    append: bool,
    restart: bool,
) -> Result<()> {
    let dir = &config.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_FILE), config.to_json())?;
    write_jsonl(open(dir, EXCHANGES_FILE, append)?, &log.exchanges)?;
    write_jsonl(open(dir, EVENTS_FILE, append)?, &log.events)?;
    let header = !(append && dir.join(TIMINGS_FILE).exists());
    write_timings(open(dir, TIMINGS_FILE, !header)?, &log.timings, header)?;
    if restart {
        write_jsonl(open(dir, SAMPLES_FILE, append)?, &log.samples)?;
    }
    write_key_values(File::create(dir.join(SUMMARY_FILE))?, &summary(config, grid, log)?)?;
    if restart {
        let file = RestartFile::new(config, grid, log.resume, log.truncated);
        fs::write(dir.join(RESTART_FILE), encode_restart(&file))?;
    }
    Ok(())
}

fn report(config: &SimulationConfig, grid: &ReplicaGrid, log: &RunLog) {
    info!(
        "{} replicas, {} exchange phases, span {:.3} s{}; artifacts in {}",
        grid.len(),
        log.exchanges.len(),
        log.span(),
        if log.truncated { " (truncated at walltime)" } else { "" },
        config.output_dir.display()
    );
}
