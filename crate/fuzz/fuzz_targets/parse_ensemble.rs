#![no_main]

use lgsparse::ensembles::Ensemble;
use lgsparse::formats::{ensemble_to_json, parse_ensemble};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(ens) = parse_ensemble(data) else { return };
    for len in 1..=6 {
        let _ = ens.position_law(len);
    }
    // Whatever serializes must parse back.
    if let Ok(json) = ensemble_to_json(&ens, 1..=6) {
        parse_ensemble(&json).expect("serialized ensemble reparses");
    }
});
