//! Command-line overrides splice arbitrary strings into a scenario
//! document; they must fail cleanly, never panic.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shardsim::scenario::apply_override;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut doc = toml::Value::Table(Default::default());
    for spec in text.split('\n') {
        let _ = apply_override(&mut doc, spec);
    }
});
