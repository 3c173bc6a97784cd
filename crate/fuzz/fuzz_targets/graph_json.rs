#![no_main]

use libfuzzer_sys::fuzz_target;
use return_entropy::io::{graph_to_json, parse_graph_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(loaded) = parse_graph_json(text) else {
        return;
    };
    // accepted graphs are already normalized, so they round-trip unchanged
    let again = parse_graph_json(&graph_to_json(&loaded.graph, &loaded.pi))
        .expect("serialized graph should parse");
    assert_eq!(again.graph, loaded.graph);
    assert_eq!(again.gcd_factor, 1);
});
