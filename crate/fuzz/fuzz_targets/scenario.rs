//! Fuzz the strict scenario-file parser: arbitrary JSON-ish input must be
//! rejected cleanly or produce a validated config.

#![no_main]

use libfuzzer_sys::fuzz_target;
use std::path::PathBuf;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = aggsim::scenario::parse_scenario(text, PathBuf::new()) {
        // validated configs uphold their invariants
        assert!(config.epsilon > 0.0);
        for &k in &config.granularities {
            assert!(config.max_iterations.contains_key(&k));
        }
        for &(_, _, start, end) in &config.schedule_entries {
            assert!(1 <= start && start < end);
        }
    }
});
