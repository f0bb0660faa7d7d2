#![no_main]

use lgsparse::formats::parse_family;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(fam) = parse_family(data) else { return };
    let k = fam.k();
    if k <= 3 {
        let x = vec![1; k + 2];
        let _ = fam.evaluate_all(&x);
    }
});
