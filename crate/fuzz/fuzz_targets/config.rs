#![no_main]

use libfuzzer_sys::fuzz_target;
use offside_core::load_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = load_config(text) {
            assert!(cfg.validate().is_ok());
        }
    }
});
