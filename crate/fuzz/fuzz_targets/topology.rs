#![no_main]

use crossmax::formats::{parse_topology, write_topology};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(topo) = parse_topology(text) {
        assert_eq!(parse_topology(&write_topology(&topo)).unwrap(), topo);
    }
});
