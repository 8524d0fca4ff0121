#![no_main]

use crossmax::formats::{parse_scores, write_scores};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(rows) = parse_scores(text) {
        let again = write_scores(&rows).unwrap();
        assert_eq!(parse_scores(&again).unwrap(), rows);
    }
});
