#![no_main]

use libfuzzer_sys::fuzz_target;
use offside_core::synth::load_scene_description;

// Rendering is too slow per input; only parsing and validation are exercised.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = load_scene_description(text);
    }
});
