//! Fuzz the node dataset parser: loads, generator columns, comment and
//! whitespace handling.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(nodes) = aggsim::grid::parse_dataset(text) {
        // parsed nodes must satisfy their own invariants
        for node in &nodes {
            if let Some(gen) = node.generator {
                assert!(gen.cost_quadratic > 0.0);
                assert!(gen.p_min <= gen.p_max);
            }
        }
    }
});
