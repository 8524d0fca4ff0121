#![no_main]

use crossmax::formats::{parse_embeddings, write_embeddings};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(batch) = parse_embeddings(text) {
        assert_eq!(parse_embeddings(&write_embeddings(&batch)).unwrap(), batch);
    }
});
