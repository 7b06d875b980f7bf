#![no_main]

use libfuzzer_sys::fuzz_target;
use offside_core::io::decode_png;

fuzz_target!(|data: &[u8]| {
    let _ = decode_png(data);
});
