#![no_main]

use libfuzzer_sys::fuzz_target;
use return_entropy::graphs::GraphKind;

fuzz_target!(|text: &str| {
    if let Ok(kind) = text.parse::<GraphKind>() {
        let shown = kind.to_string();
        assert_eq!(shown.parse::<GraphKind>().ok(), Some(kind));
    }
});
