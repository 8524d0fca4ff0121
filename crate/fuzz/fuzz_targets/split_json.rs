#![no_main]

use crossmax::SplitSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(split) = SplitSpec::from_json(text) {
        let again = split.to_json(None).unwrap();
        assert_eq!(SplitSpec::from_json(&again).unwrap(), split);
    }
});
