#![no_main]

use libfuzzer_sys::fuzz_target;
use offside_core::load_annotations;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ann) = load_annotations(text) {
        let again = load_annotations(&ann.to_json()).expect("serialized annotations reload");
        assert_eq!(again.players.len(), ann.players.len());
    }
});
