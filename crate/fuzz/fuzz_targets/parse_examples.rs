#![no_main]

use lgsparse::formats::{example_to_line, parse_example_line, parse_examples};
use lgsparse::taskgen::variable_vocab;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let vocab = variable_vocab(16).expect("fixed vocabulary");
    let Ok(examples) = parse_examples(data, &vocab) else { return };
    for ex in examples {
        let line = example_to_line(&ex, &vocab).expect("parsed example serializes");
        let again = parse_example_line(&line, &vocab).expect("line reparses");
        assert_eq!(
            (again.tokens, again.position_ids, again.predict_from),
            (ex.tokens, ex.position_ids, ex.predict_from)
        );
    }
});
