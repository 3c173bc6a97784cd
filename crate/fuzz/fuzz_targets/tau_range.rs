#![no_main]

use libfuzzer_sys::fuzz_target;
use return_entropy::io::parse_tau_range;

fuzz_target!(|text: &str| {
    if let Ok(taus) = parse_tau_range(text) {
        assert!(!taus.is_empty());
        assert!(taus[0] >= 1);
        assert!(taus.windows(2).all(|w| w[1] == w[0] + 1));
    }
});
