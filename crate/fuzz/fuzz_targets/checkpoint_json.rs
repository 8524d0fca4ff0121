#![no_main]

use crossmax::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = Checkpoint::from_json(text);
});
