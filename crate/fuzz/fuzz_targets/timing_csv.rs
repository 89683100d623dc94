#![no_main]

use libfuzzer_sys::fuzz_target;
use repex_core::io::{parse_timings, write_timings};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_timings(text) {
        let mut buf = Vec::new();
        write_timings(&mut buf, &rows, true).unwrap();
        assert_eq!(parse_timings(std::str::from_utf8(&buf).unwrap()).unwrap(), rows);
    }
});
