#![no_main]

use crossmax::report::MetricsDocument;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    let _ = MetricsDocument::from_json(text);
});
