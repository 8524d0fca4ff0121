#![no_main]

use crossmax::formats::{parse_logits, write_logits};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(file) = parse_logits(text) {
        let again = write_logits(&file).unwrap();
        assert_eq!(parse_logits(&again).unwrap(), file);
    }
});
