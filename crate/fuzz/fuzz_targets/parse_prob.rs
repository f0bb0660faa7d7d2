#![no_main]

use lgsparse::domain::{format_prob, parse_prob};
use lgsparse::TOL;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(p) = parse_prob(data) {
        assert!((0.0..=1.0 + TOL).contains(&p));
        assert_eq!(parse_prob(&format_prob(p)).unwrap(), p);
    }
});
