#![no_main]

use libfuzzer_sys::fuzz_target;
use partial_ot::harness::io::{parse_cost, write_cost};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(c) = parse_cost(text) {
        let back = parse_cost(&write_cost(&c)).expect("written costs parse");
        assert_eq!(back.dim(), c.dim());
    }
});
