#![no_main]

use libfuzzer_sys::fuzz_target;
use repex_core::io::{decode_restart, encode_restart};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(restart) = decode_restart(text) {
        let again = decode_restart(&encode_restart(&restart)).expect("encoded restart decodes");
        assert_eq!(again, restart);
    }
});
