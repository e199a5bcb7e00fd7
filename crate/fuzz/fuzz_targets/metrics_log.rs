#![no_main]

use ibgs_core::train::MetricRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    for line in text.lines() {
        if let Ok(r) = serde_json::from_str::<MetricRecord>(line) {
            let _ = serde_json::to_string(&r);
        }
    }
});
