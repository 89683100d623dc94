#![no_main]

use libfuzzer_sys::fuzz_target;
use repex_core::config::parse_config;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = parse_config(text) {
        // the resolved dump must parse back to the same configuration
        let again = parse_config(&config.to_json()).expect("resolved config reparses");
        assert_eq!(again, config);
        let _ = config.build_grid();
    }
});
