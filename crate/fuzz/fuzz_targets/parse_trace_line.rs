#![no_main]

use libfuzzer_sys::fuzz_target;
use partial_ot::harness::io::{parse_trace, parse_trace_line};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(line) = parse_trace_line(text) {
        // Non-finite floats serialize as null and cannot round-trip.
        let _ = parse_trace_line(&line.to_json());
    }
    let _ = parse_trace(text);
});
