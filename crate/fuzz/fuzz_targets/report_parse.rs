//! Report JSON is read back from disk by the report command; parsing is
//! total and accepted reports round-trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shardsim::metrics::MetricsReport;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = MetricsReport::from_json(text) {
        let again = MetricsReport::from_json(&report.to_json()).expect("re-encoded report parses");
        assert_eq!(again.to_json(), report.to_json());
    }
});
