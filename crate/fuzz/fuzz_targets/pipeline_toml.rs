#![no_main]

use crossmax::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = PipelineConfig::from_toml(text) {
        let _ = cfg.validate(std::path::Path::new("."));
    }
});
