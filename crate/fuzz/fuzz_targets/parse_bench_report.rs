#![no_main]

use int4q::bench::{compare_report, BenchReport};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = BenchReport::from_json(text) {
        let _ = compare_report(&r, &r).map(|c| c.render_table());
    }
});
