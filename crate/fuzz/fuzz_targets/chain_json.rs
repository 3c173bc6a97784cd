#![no_main]

use libfuzzer_sys::fuzz_target;
use return_entropy::io::{chain_to_json, parse_chain_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(p) = parse_chain_json(text) {
        let again = parse_chain_json(&chain_to_json(&p)).expect("serialized chain should parse");
        assert_eq!(again, p);
    }
});
