//! Scenario TOML loading must reject arbitrary input gracefully.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shardsim::scenario::parse_scenario;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_scenario(text, "fuzz", &[]);
    }
});
