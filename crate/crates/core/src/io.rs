//! Run artifacts: JSONL streams, CSV tables and the versioned restart file.
//!
//! Every decoder takes the full file text and validates what it reads, so
//! the same entry points back the CLI and the fuzz targets.

use std::io::Write;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::error::{Error, Result};
use crate::exchange::ExchangeRecord;
use crate::metrics::{cycle_time, CycleTiming};
use crate::model::{ReplicaGrid, ReplicaState};
use crate::pilot::{Event, EventKind, Resume, SampleBatch, TimingRow};

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const EXCHANGES_FILE: &str = "exchanges.jsonl";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RESTART_FILE: &str = "restart.json";

pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses one JSON value per non-blank line. Errors carry the line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line).map_err(|e| Error::key(format!("line {}", n + 1), e.to_string()))
        })
        .collect()
}

pub fn parse_exchanges(text: &str) -> Result<Vec<ExchangeRecord>> {
    let records: Vec<ExchangeRecord> = parse_jsonl(text)?;
    for (n, r) in records.iter().enumerate() {
        for p in &r.pairs {
            let ok = p.i != p.j && !p.delta.is_nan() && (0.0..1.0).contains(&p.u);
            if !ok {
                return Err(Error::InvalidRecord(format!(
                    "record {}: bad pair ({}, {}) with delta {} and u {}",
                    n + 1,
                    p.i,
                    p.j,
                    p.delta,
                    p.u
                )));
            }
        }
    }
    Ok(records)
}

pub fn parse_events(text: &str) -> Result<Vec<Event>> {
    let events: Vec<Event> = parse_jsonl(text)?;
    let mut last = f64::NEG_INFINITY;
    for (n, e) in events.iter().enumerate() {
        if !(e.t.is_finite() && e.t >= 0.0) {
            return Err(Error::key(format!("line {}", n + 1), format!("time {} is invalid", e.t)));
        }
        if e.t < last {
            return Err(Error::key(format!("line {}", n + 1), "event times go backwards"));
        }
        let is_task = matches!(e.event, EventKind::Submit | EventKind::Start | EventKind::End | EventKind::Fail);
        if is_task && (e.task.is_none() || e.cores == 0) {
            return Err(Error::key(format!("line {}", n + 1), "task event without task id or cores"));
        }
        last = e.t;
    }
    Ok(events)
}

pub fn parse_samples(text: &str) -> Result<Vec<SampleBatch>> {
    parse_jsonl(text)
}

pub const TIMING_HEADER: [&str; 9] = [
    "cycle",
    "dim",
    "t_md",
    "t_ex",
    "t_data",
    "t_framework_over",
    "t_launch_over",
    "t_c",
    "wall_clock_s",
];

#[derive(Serialize, Deserialize)]
struct TimingCsv {
    cycle: u64,
    dim: usize,
    t_md: f64,
    t_ex: f64,
    t_data: f64,
    t_framework_over: f64,
    t_launch_over: f64,
    t_c: f64,
    wall_clock_s: f64,
}

/// Writes timing rows; `header` controls whether the header line is emitted,
/// so appending to an existing file works.
pub fn write_timings(w: impl Write, rows: &[TimingRow], header: bool) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    if header {
        out.write_record(TIMING_HEADER)?;
    }
    for r in rows {
        out.serialize(TimingCsv {
            cycle: r.cycle,
            dim: r.dim,
            t_md: r.timing.t_md,
            t_ex: r.timing.t_ex,
            t_data: r.timing.t_data,
            t_framework_over: r.timing.t_framework_over,
            t_launch_over: r.timing.t_launch_over,
            t_c: r.t_c,
            wall_clock_s: r.wall_clock_s,
        })?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_timings(text: &str) -> Result<Vec<TimingRow>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().ne(TIMING_HEADER) {
        return Err(Error::Format(format!("unexpected timing header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, rec) in reader.deserialize::<TimingCsv>().enumerate() {
        let r = rec?;
        let timing = CycleTiming {
            t_md: r.t_md,
            t_ex: r.t_ex,
            t_data: r.t_data,
            t_framework_over: r.t_framework_over,
            t_launch_over: r.t_launch_over,
        };
        let total = cycle_time(&timing)?;
        if !((total - r.t_c).abs() <= 1e-6 * (1.0 + total.abs())) {
            return Err(Error::InvalidTiming(format!(
                "row {}: t_c {} differs from component sum {total}",
                n + 1,
                r.t_c
            )));
        }
        rows.push(TimingRow {
            cycle: r.cycle,
            dim: r.dim,
            timing,
            t_c: r.t_c,
            wall_clock_s: r.wall_clock_s,
        });
    }
    Ok(rows)
}

/// Two-column `key,value` table.
pub fn write_key_values(w: impl Write, rows: &[(String, String)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["key", "value"])?;
    for (k, v) in rows {
        out.write_record([k, v])?;
    }
    out.flush()?;
    Ok(())
}

pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    if reader.headers()?.iter().ne(["key", "value"]) {
        return Err(Error::Format("expected a key,value table".into()));
    }
    reader
        .records()
        .map(|r| {
            let r = r?;
            Ok((r[0].to_string(), r[1].to_string()))
        })
        .collect()
}

pub const RESTART_FORMAT: &str = "repex-restart";
pub const RESTART_VERSION: u32 = 1;

/// Everything needed to continue a run: the resolved configuration, every
/// replica's state (per-replica seeds define all further random streams) and
/// the scheduler clock.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartFile {
    pub format: String,
    pub version: u32,
    pub config: SimulationConfig,
    pub replicas: Vec<ReplicaState>,
    pub resume: Resume,
    pub truncated: bool,
}

impl RestartFile {
    pub fn new(config: &SimulationConfig, grid: &ReplicaGrid, resume: Resume, truncated: bool) -> Self {
        RestartFile {
            format: RESTART_FORMAT.into(),
            version: RESTART_VERSION,
            config: config.clone(),
            replicas: grid.replicas.clone(),
            resume,
            truncated,
        }
    }

    /// Grid of the stored configuration carrying the stored replica states.
    pub fn grid(&self) -> Result<ReplicaGrid> {
        let mut grid = self.config.build_grid()?;
        if grid.len() != self.replicas.len() {
            return Err(Error::Format(format!(
                "restart holds {} replicas, configuration defines {}",
                self.replicas.len(),
                grid.len()
            )));
        }
        let dims = self.config.system().dims();
        for (i, r) in self.replicas.iter().enumerate() {
            if r.id != i {
                return Err(Error::Format(format!("replica {i} stored with id {}", r.id)));
            }
            if r.positions.len() != dims || r.velocities.len() != dims {
                return Err(Error::Format(format!("replica {i} has the wrong number of coordinates")));
            }
            if r.positions.iter().chain(&r.velocities).any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("replica {i} has non-finite state")));
            }
        }
        grid.replicas = self.replicas.clone();
        grid.check_coords().map_err(|e| Error::Format(e.to_string()))?;
        Ok(grid)
    }
}

pub fn encode_restart(restart: &RestartFile) -> String {
    serde_json::to_string_pretty(restart).expect("restart serializes")
}

/// Decodes a restart file, refusing other formats and unknown versions.
pub fn decode_restart(text: &str) -> Result<RestartFile> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(RESTART_FORMAT) => {}
        other => return Err(Error::Format(format!("not a restart file (format {other:?})"))),
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == RESTART_VERSION as u64 => {}
        other => return Err(Error::Format(format!("unsupported restart version {other:?}"))),
    }
    let restart: RestartFile = serde_path_to_error::deserialize(value)
        .map_err(|e| Error::key(e.path().to_string(), e.into_inner().to_string()))?;
    restart.config.validate()?;
    restart.grid()?;
    Ok(restart)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::exchange::PairAttempt;
    use crate::pilot::TaskKind;
    use proptest::prelude::*;

    const CONFIG: &str = r#"{
        "system": {"kind": "double_well", "a": 1.0, "b": 2.0},
        "dimensions": [{"kind": "temperature", "ladder": [280, 300, 330]}],
        "cycles": 2
    }"#;

    #[test]
    fn exchange_lines_match_schema() {
        let rec = ExchangeRecord {
            cycle: 3,
            dim: 1,
            pairs: vec![PairAttempt { i: 0, j: 4, delta: 0.25, u: 0.5, accepted: true }],
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(
            line,
            "{\"cycle\":3,\"dim\":1,\"pairs\":[{\"i\":0,\"j\":4,\"delta\":0.25,\"u\":0.5,\"accepted\":true}]}\n"
        );
        assert_eq!(parse_exchanges(&line).unwrap(), vec![rec]);
    }

    #[test]
    fn exchange_errors_name_the_line() {
        let text = "{\"cycle\":0,\"dim\":0,\"pairs\":[]}\n{\"cycle\":1}\n";
        match parse_exchanges(text) {
            Err(Error::Key { path, .. }) => assert_eq!(path, "line 2"),
            other => panic!("{other:?}"),
        }
        let bad_u = "{\"cycle\":0,\"dim\":0,\"pairs\":[{\"i\":0,\"j\":1,\"delta\":1,\"u\":1.5,\"accepted\":false}]}";
        assert!(matches!(parse_exchanges(bad_u), Err(Error::InvalidRecord(_))));
    }

    #[test]
    fn event_lines_carry_trace_fields() {
        let e = Event {
            t: 1.5,
            event: EventKind::Start,
            task: Some(7),
            replica: Some(2),
            cores: 1,
            kind: Some(TaskKind::Md),
            cycle: Some(0),
        };
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&e)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        for key in ["t", "event", "task", "replica", "cores"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(parse_events(&text).unwrap(), vec![e]);
        let backwards = "{\"t\":2,\"event\":\"barrier\",\"task\":null,\"replica\":null,\"cores\":0}\n{\"t\":1,\"event\":\"barrier\",\"task\":null,\"replica\":null,\"cores\":0}";
        assert!(parse_events(backwards).is_err());
    }

    #[test]
    fn timings_header_only_and_round_trip() {
        let mut buf = Vec::new();
        write_timings(&mut buf, &[], true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "cycle,dim,t_md,t_ex,t_data,t_framework_over,t_launch_over,t_c,wall_clock_s\n");
        assert!(parse_timings(&text).unwrap().is_empty());

        let timing = CycleTiming { t_md: 139.6, t_ex: 5.0, t_data: 6.3, t_framework_over: 2.0, t_launch_over: 10.0 };
        let row = TimingRow { cycle: 0, dim: 0, timing, t_c: cycle_time(&timing).unwrap(), wall_clock_s: 0.01 };
        write_timings(&mut buf, std::slice::from_ref(&row), false).unwrap();
        let parsed = parse_timings(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(parsed, vec![row]);
    }

    #[test]
    fn timings_reject_inconsistent_total() {
        let text = "cycle,dim,t_md,t_ex,t_data,t_framework_over,t_launch_over,t_c,wall_clock_s\n0,0,1,1,1,1,1,9,0\n";
        assert!(matches!(parse_timings(text), Err(Error::InvalidTiming(_))));
        let neg = "cycle,dim,t_md,t_ex,t_data,t_framework_over,t_launch_over,t_c,wall_clock_s\n0,0,-1,1,0,0,0,0,0\n";
        assert!(matches!(parse_timings(neg), Err(Error::InvalidTiming(_))));
    }

    #[test]
    fn key_values_round_trip() {
        let rows = vec![("replicas".to_string(), "8".to_string()), ("mode".into(), "ModeI".into())];
        let mut buf = Vec::new();
        write_key_values(&mut buf, &rows).unwrap();
        assert_eq!(parse_key_values(std::str::from_utf8(&buf).unwrap()).unwrap(), rows);
    }

    #[test]
    fn restart_round_trip_and_version_guard() {
        let config = parse_config(CONFIG).unwrap();
        let mut grid = config.build_grid().unwrap();
        grid.replicas[1].positions = vec![0.123456789012345];
        grid.replicas[1].cycle = 4;
        let restart = RestartFile::new(&config, &grid, Resume { clock: 12.5, next_task_id: 40, exchanges: 4 }, false);
        let text = encode_restart(&restart);
        let back = decode_restart(&text).unwrap();
        assert_eq!(back, restart);
        assert_eq!(back.grid().unwrap(), grid);

        let v2 = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(decode_restart(&v2), Err(Error::Format(_))));
        let other = text.replace(RESTART_FORMAT, "something-else");
        assert!(matches!(decode_restart(&other), Err(Error::Format(_))));
    }

    #[test]
    fn restart_rejects_mismatched_replicas() {
        let config = parse_config(CONFIG).unwrap();
        let mut grid = config.build_grid().unwrap();
        grid.replicas.pop();
        let restart = RestartFile::new(&config, &grid, Resume::default(), false);
        assert!(decode_restart(&encode_restart(&restart)).is_err());
    }

    proptest! {
        #[test]
        fn exchange_jsonl_round_trips(
            recs in proptest::collection::vec(
                (0u64..1000, 0usize..3, proptest::collection::vec(
                    (0usize..100, 100usize..200, -1e3f64..1e3, 0.0f64..1.0, any::<bool>()), 0..5)),
                0..6)
        ) {
            let records: Vec<ExchangeRecord> = recs
                .into_iter()
                .map(|(cycle, dim, pairs)| ExchangeRecord {
                    cycle,
                    dim,
                    pairs: pairs
                        .into_iter()
                        .map(|(i, j, delta, u, accepted)| PairAttempt { i, j, delta, u, accepted })
                        .collect(),
                })
                .collect();
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &records).unwrap();
            prop_assert_eq!(parse_exchanges(std::str::from_utf8(&buf).unwrap()).unwrap(), records);
        }

        #[test]
        fn decoders_never_panic(text in "\\PC{0,200}") {
            let _ = parse_exchanges(&text);
            let _ = parse_events(&text);
            let _ = parse_timings(&text);
            let _ = decode_restart(&text);
            let _ = crate::config::parse_config(&text);
        }
    }
}
