#![no_main]

use libfuzzer_sys::fuzz_target;
use offside_core::io::{decode_ppm, encode_ppm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_ppm(data) {
        let again = decode_ppm(&encode_ppm(&img)).expect("encoded PPM decodes");
        assert_eq!((again.width(), again.height(), again.channels()), (img.width(), img.height(), img.channels()));
    }
});
