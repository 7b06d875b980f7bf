//! Playing-surface isolation: HSV threshold, external contours, filled-contour
//! mask and mask application.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{rgb_to_hsv, Raster};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("mask is {mask_w}x{mask_h} but frame is {frame_w}x{frame_h}")]
    DimensionMismatch {
        mask_w: usize,
        mask_h: usize,
        frame_w: usize,
        frame_h: usize,
    },
    #[error("green_mask needs an RGB frame")]
    NotRgb,
    #[error("invalid green range: {0}")]
    BadRange(String),
    #[error("min_area_frac must lie in [0, 1], got {0}")]
    BadAreaFraction(f64),
}

/// HSV box for "pitch green". `h_lo > h_hi` means the hue interval wraps through 0°.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenRange {
    pub h_lo: f64,
    pub h_hi: f64,
    pub s_lo: f64,
    pub s_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl Default for GreenRange {
    fn default() -> Self {
        Self {
            h_lo: 70.0,
            h_hi: 170.0,
            s_lo: 0.25,
            s_hi: 1.0,
            v_lo: 0.15,
            v_hi: 1.0,
        }
    }
}

impl GreenRange {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        let hue_ok = |h: f64| (0.0..360.0).contains(&h);
        if !hue_ok(self.h_lo) || !hue_ok(self.h_hi) {
            return Err(SegmentationError::BadRange("hue bounds must lie in [0, 360)".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.s_lo) && unit(self.s_hi) && unit(self.v_lo) && unit(self.v_hi)) {
            return Err(SegmentationError::BadRange("s/v bounds must lie in [0, 1]".into()));
        }
        if self.s_lo > self.s_hi || self.v_lo > self.v_hi {
            return Err(SegmentationError::BadRange("lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    pub fn contains(&self, h: f64, s: f64, v: f64) -> bool {
        let hue = if self.h_lo <= self.h_hi {
            h >= self.h_lo && h <= self.h_hi
        } else {
            h >= self.h_lo || h <= self.h_hi
        };
        hue && s >= self.s_lo && s <= self.s_hi && v >= self.v_lo && v <= self.v_hi
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-bounds coordinates read as background.
    pub fn get_i(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.bits[y as usize * self.width + x as usize]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }
}

/// An outer boundary traced through foreground pixel centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    pub points: Vec<(i64, i64)>,
    /// Shoelace area of the pixel-center polygon.
    pub area: f64,
}

impl Contour {
    fn new(points: Vec<(i64, i64)>) -> Self {
        let area = shoelace(&points);
        Self { points, area }
    }
}

fn shoelace(points: &[(i64, i64)]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let twice: i64 = points
        .iter()
        .zip(points.iter().cycle().skip(1))
        .map(|(&(x0, y0), &(x1, y1))| x0 * y1 - x1 * y0)
        .sum();
    twice.abs() as f64 / 2.0
}

pub fn green_mask(frame: &Raster, range: &GreenRange) -> Result<BinaryMask, SegmentationError> {
    if frame.channels() != 3 {
        return Err(SegmentationError::NotRgb);
    }
    let bits = frame
        .data()
        .chunks_exact(3)
        .map(|px| {
            let c = rgb_to_hsv(px[0] as f64, px[1] as f64, px[2] as f64);
            range.contains(c.h, c.s, c.v)
        })
        .collect();
    Ok(BinaryMask {
        width: frame.width(),
        height: frame.height(),
        bits,
    })
}

// Clockwise in image coordinates (y down), starting west.
const RING: [(i64, i64); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn ring_index(d: (i64, i64)) -> usize {
    RING.iter().position(|&r| r == d).expect("offset is a ring neighbor")
}

/// Moore-neighbor trace of the outer boundary starting at the topmost-leftmost pixel.
fn trace(mask: &BinaryMask, start: (i64, i64)) -> Vec<(i64, i64)> {
    let mut points = vec![start];
    let mut cur = start;
    // West of the topmost-leftmost pixel is always background.
    let mut back = 0usize;
    let mut first_move: Option<(i64, i64)> = None;
    loop {
        let mut found = None;
        for k in 1..=8 {
            let d = (back + k) % 8;
            let n = (cur.0 + RING[d].0, cur.1 + RING[d].1);
            if mask.get_i(n.0, n.1) {
                found = Some((d, n));
                break;
            }
        }
        let Some((d, next)) = found else {
            break; // isolated pixel
        };
        if cur == start {
            match first_move {
                None => first_move = Some(next),
                Some(f) if f == next => break,
                Some(_) => {}
            }
        }
        let prev = RING[(d + 7) % 8];
        let b = (cur.0 + prev.0 - next.0, cur.1 + prev.1 - next.1);
        back = ring_index(b);
        cur = next;
        points.push(cur);
    }
    if points.len() > 1 && points.last() == Some(&start) {
        points.pop();
    }
    points
}

/// One outer contour per 8-connected foreground component, ordered by the
/// component's topmost-leftmost pixel. Holes are ignored.
pub fn external_contours(mask: &BinaryMask) -> Vec<Contour> {
    let (w, h) = (mask.width, mask.height);
    let mut seen = vec![false; w * h];
    let mut contours = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for &(dx, dy) in &RING {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_i(nx, ny) {
                    let j = ny as usize * w + nx as usize;
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        let p = ((start % w) as i64, (start / w) as i64);
        contours.push(Contour::new(trace(mask, p)));
    }
    contours
}

/// Even-odd scanline fill of each contour whose area is at least
/// `min_area_frac * width * height`; boundary pixels are always set.
pub fn fill_contours(
    contours: &[Contour],
    min_area_frac: f64,
    width: usize,
    height: usize,
) -> Result<BinaryMask, SegmentationError> {
    if !(0.0..=1.0).contains(&min_area_frac) {
        return Err(SegmentationError::BadAreaFraction(min_area_frac));
    }
    let min_area = min_area_frac * (width * height) as f64;
    let mut mask = BinaryMask::new(width, height);
    let mut xs: Vec<f64> = Vec::new();
    for c in contours.iter().filter(|c| c.area >= min_area) {
        let pts = &c.points;
        let (ymin, ymax) = pts
            .iter()
            .fold((i64::MAX, i64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
        for row in ymin.max(0)..=ymax.min(height as i64 - 1) {
            xs.clear();
            let y = row as f64;
            for (a, b) in pts.iter().zip(pts.iter().cycle().skip(1)) {
                let (y0, y1) = (a.1 as f64, b.1 as f64);
                // half-open rule keeps vertex crossings consistent
                if (y0 <= y && y < y1) || (y1 <= y && y < y0) {
                    let t = (y - y0) / (y1 - y0);
                    xs.push(a.0 as f64 + t * (b.0 - a.0) as f64);
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                let lo = pair[0].ceil().max(0.0) as i64;
                let hi = pair[1].floor().min(width as f64 - 1.0) as i64;
                for x in lo..=hi {
                    mask.set(x as usize, row as usize, true);
                }
            }
        }
        for &(x, y) in pts {
            if x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
    Ok(mask)
}

/// Keeps pixels under the mask and blacks out the rest.
pub fn apply_mask(frame: &Raster, mask: &BinaryMask) -> Result<Raster, SegmentationError> {
    if !frame.same_dims(mask.width, mask.height) {
        return Err(SegmentationError::DimensionMismatch {
            mask_w: mask.width,
            mask_h: mask.height,
            frame_w: frame.width(),
            frame_h: frame.height(),
        });
    }
    let c = frame.channels();
    let data = frame
        .data()
        .chunks_exact(c)
        .zip(&mask.bits)
        .flat_map(|(px, &keep)| px.iter().map(move |&v| if keep { v } else { 0.0 }))
        .collect();
    Ok(Raster::new(frame.width(), frame.height(), c, data).expect("masking keeps samples in range"))
}

/// Full segmentation: threshold, external contours, area filter and fill.
pub fn field_mask(
    frame: &Raster,
    range: &GreenRange,
    min_area_frac: f64,
) -> Result<BinaryMask, SegmentationError> {
    let raw = green_mask(frame, range)?;
    let contours = external_contours(&raw);
    fill_contours(&contours, min_area_frac, frame.width(), frame.height())
}
