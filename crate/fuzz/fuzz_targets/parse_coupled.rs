#![no_main]

use lgsparse::formats::parse_coupled;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(ens) = parse_coupled(data) {
        for len in 1..=6 {
            let _ = ens.law(len);
        }
    }
});
