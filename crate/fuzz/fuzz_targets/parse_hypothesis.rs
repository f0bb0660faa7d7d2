#![no_main]

use lgsparse::formats::parse_hypothesis;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(h) = parse_hypothesis(data) {
        let _ = h.evaluate(&[1, 2, 1, 2]);
    }
});
