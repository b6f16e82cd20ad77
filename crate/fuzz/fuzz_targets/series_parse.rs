//! Height-series CSV parsing is total, and accepted series round-trip
//! through the renderer.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shardsim::metrics::{parse_series, render_series};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(series) = parse_series(text) {
        let rendered = render_series(&series);
        assert_eq!(parse_series(&rendered).expect("re-rendered series parses"), series);
    }
});
