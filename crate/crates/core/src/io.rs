//! PNG and binary PPM (P6, maxval 255) load/save.
//!
//! Samples are `value / 255` on load and `round(value * 255)` clamped on save.

use std::path::Path;

use thiserror::Error;

use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PPM: {0}")]
    Ppm(String),
    #[error("PNG decode failed: {0}")]
    Png(String),
    #[error("unsupported image format")]
    UnknownFormat,
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Decodes a binary `P6` PPM with maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<Raster, ImageIoError> {
    let bad = |m: &str| ImageIoError::Ppm(m.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(bad("missing P6 magic"));
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        // whitespace and '#' comments between header tokens
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(bad("expected a number in header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("bad header"))?;
        *field = text.parse().map_err(|_| bad("header number overflow"))?;
    }
    let [width, height, maxval] = header;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(bad("missing separator after header")),
    }
    let len = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let body = bytes
        .get(pos..)
        .filter(|b| b.len() >= len)
        .ok_or_else(|| bad("truncated pixel data"))?;
    let data = body[..len].iter().map(|&b| b as f32 / 255.0).collect();
    Raster::new(width, height, 3, data).map_err(|e| ImageIoError::Ppm(e.to_string()))
}

/// Encodes as `P6`; single-channel rasters are replicated to gray RGB.
pub fn encode_ppm(img: &Raster) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    if img.channels() == 3 {
        out.extend(img.data().iter().map(|&v| to_byte(v)));
    } else {
        for &v in img.data() {
            let b = to_byte(v);
            out.extend_from_slice(&[b, b, b]);
        }
    }
    out
}

/// Decodes PNG; gray(+alpha) becomes 1 channel, everything else RGB with alpha dropped.
pub fn decode_png(bytes: &[u8]) -> Result<Raster, ImageIoError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| ImageIoError::Png(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img.color() {
        image::ColorType::L8 | image::ColorType::La8 | image::ColorType::L16 | image::ColorType::La16 => {
            (1, img.to_luma8().into_raw())
        }
        _ => (3, img.to_rgb8().into_raw()),
    };
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    Raster::new(w, h, channels, data).map_err(|e| ImageIoError::Png(e.to_string()))
}

pub fn encode_png(img: &Raster) -> Result<Vec<u8>, ImageIoError> {
    let bytes: Vec<u8> = img.data().iter().map(|&v| to_byte(v)).collect();
    let color = if img.channels() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    let mut out = Vec::new();
    image::ImageEncoder::write_image(
        image::codecs::png::PngEncoder::new(&mut out),
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
    )
    .map_err(|e| ImageIoError::Png(e.to_string()))?;
    Ok(out)
}

/// Sniffs the format from the leading bytes.
pub fn decode_image(bytes: &[u8]) -> Result<Raster, ImageIoError> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(bytes)
    } else {
        Err(ImageIoError::UnknownFormat)
    }
}

pub fn load_image(path: &Path) -> Result<Raster, ImageIoError> {
    decode_image(&std::fs::read(path)?)
}

/// Saves as PPM when the extension is `.ppm`, PNG otherwise.
pub fn save_image(img: &Raster, path: &Path) -> Result<(), ImageIoError> {
    let is_ppm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let bytes = if is_ppm { encode_ppm(img) } else { encode_png(img)? };
    std::fs::write(path, bytes)?;
    Ok(())
}
