#![no_main]

use libfuzzer_sys::fuzz_target;
use repex_core::io::{parse_exchanges, write_jsonl};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(records) = parse_exchanges(text) {
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &records).unwrap();
        let again = parse_exchanges(std::str::from_utf8(&buf).unwrap()).expect("written records parse");
        assert_eq!(again, records);
    }
});
