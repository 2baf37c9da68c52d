#![no_main]

use libfuzzer_sys::fuzz_target;
use partial_ot::harness::io::{parse_marginal, write_marginal};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(v) = parse_marginal(text) {
        let back = parse_marginal(&write_marginal(&v)).expect("written marginals parse");
        assert!(v.iter().zip(back.iter()).all(|(a, b)| a.to_bits() == b.to_bits() || (*a == 0.0 && *b == 0.0)));
    }
});
