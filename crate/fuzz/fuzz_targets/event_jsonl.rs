#![no_main]

use libfuzzer_sys::fuzz_target;
use repex_core::io::{parse_events, write_jsonl};
use repex_core::pilot::max_concurrency_trace;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(events) = parse_events(text) {
        let _ = max_concurrency_trace(&events);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &events).unwrap();
        assert_eq!(parse_events(std::str::from_utf8(&buf).unwrap()).unwrap(), events);
    }
});
