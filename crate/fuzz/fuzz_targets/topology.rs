//! Fuzz the feeder edge-list parser and the grid builder: arbitrary text
//! must produce either a grid or an error, never a panic.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = aggsim::grid::parse_topology(text);
    // exercise the full builder against a minimal dataset as well
    let _ = aggsim::grid::build_test_feeder(text, "1 0.5\n2 0.25 0.1 5.0 0.0 2.0\n");
});
