//! Replays the checked-in fuzz corpus through the decoders with the same
//! round-trip properties the fuzz targets assert.

use std::fs;
use std::path::PathBuf;

use repex_core::config::parse_config;
use repex_core::io::{decode_restart, encode_restart, parse_events, parse_exchanges, parse_timings, write_jsonl, write_timings};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "empty corpus for {target}");
    out
}

#[test]
fn config_seeds() {
    let mut accepted = 0;
    for (name, text) in seeds("config") {
        match parse_config(&text) {
            Ok(c) => {
                accepted += 1;
                assert_eq!(parse_config(&c.to_json()).unwrap(), c, "{name}");
                c.build_grid().unwrap();
            }
            Err(e) => assert!(name.starts_with("negative"), "{name}: {e}"),
        }
    }
    assert_eq!(accepted, 3);
}

#[test]
fn restart_seeds() {
    for (name, text) in seeds("restart") {
        let r = decode_restart(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(decode_restart(&encode_restart(&r)).unwrap(), r, "{name}");
    }
}

#[test]
fn exchange_seeds() {
    for (name, text) in seeds("exchange_jsonl") {
        match parse_exchanges(&text) {
            Ok(records) => {
                let mut buf = Vec::new();
                write_jsonl(&mut buf, &records).unwrap();
                assert_eq!(parse_exchanges(std::str::from_utf8(&buf).unwrap()).unwrap(), records, "{name}");
            }
            Err(_) => assert_eq!(name, "self_pair.jsonl"),
        }
    }
}

#[test]
fn event_seeds() {
    for (name, text) in seeds("event_jsonl") {
        match parse_events(&text) {
            Ok(events) => {
                let mut buf = Vec::new();
                write_jsonl(&mut buf, &events).unwrap();
                assert_eq!(buf, text.as_bytes(), "{name}");
            }
            Err(_) => assert_eq!(name, "backwards.jsonl"),
        }
    }
}

#[test]
fn timing_seeds() {
    for (name, text) in seeds("timing_csv") {
        match parse_timings(&text) {
            Ok(rows) => {
                let mut buf = Vec::new();
                write_timings(&mut buf, &rows, true).unwrap();
                assert_eq!(parse_timings(std::str::from_utf8(&buf).unwrap()).unwrap(), rows, "{name}");
            }
            Err(_) => assert_eq!(name, "bad_total.csv"),
        }
    }
}
