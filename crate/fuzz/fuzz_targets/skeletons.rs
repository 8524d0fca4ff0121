#![no_main]

use crossmax::formats::{parse_skeletons, write_skeletons};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(records) = parse_skeletons(text) {
        let again = write_skeletons(&records).unwrap();
        assert_eq!(parse_skeletons(&again).unwrap(), records);
    }
});
