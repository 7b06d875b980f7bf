//! Annotated frame rendering.

use serde::{Deserialize, Serialize};

use crate::engine::{VerdictStatus, VirtualLine};
use crate::pipeline::FrameResult;
use crate::raster::Raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlayConfig {
    /// Whether the pipeline renders an overlay at all.
    pub enabled: bool,
    pub segments: bool,
    pub virtual_lines: bool,
    pub offside_line: bool,
    pub keypoints: bool,
    pub verdicts: bool,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            segments: true,
            virtual_lines: true,
            offside_line: true,
            keypoints: true,
            verdicts: true,
        }
    }
}

impl OverlayConfig {
    pub fn none() -> Self {
        Self {
            enabled: true,
            segments: false,
            virtual_lines: false,
            offside_line: false,
            keypoints: false,
            verdicts: false,
        }
    }
}

const SEGMENT: [f32; 3] = [0.0, 1.0, 1.0];
const VIRTUAL: [f32; 3] = [1.0, 1.0, 0.6];
const OFFSIDE: [f32; 3] = [1.0, 0.0, 1.0];
const KEYPOINT: [f32; 3] = [1.0, 1.0, 1.0];
const ONSIDE: [f32; 3] = [0.0, 0.9, 0.0];
const FLAGGED: [f32; 3] = [1.0, 0.0, 0.0];

/// Liang-Barsky clip of `p → q` to `[0, w-1] × [0, h-1]`.
pub fn clip_segment(p: (f64, f64), q: (f64, f64), w: usize, h: usize) -> Option<((f64, f64), (f64, f64))> {
    let (dx, dy) = (q.0 - p.0, q.1 - p.1);
    let (xmax, ymax) = (w as f64 - 1.0, h as f64 - 1.0);
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (denom, num) in [(-dx, p.0), (dx, xmax - p.0), (-dy, p.1), (dy, ymax - p.1)] {
        if denom == 0.0 {
            if num < 0.0 {
                return None;
            }
        } else {
            let t = num / denom;
            if denom < 0.0 {
                t0 = t0.max(t);
            } else {
                t1 = t1.min(t);
            }
        }
    }
    (t0 <= t1 && p.0.is_finite() && p.1.is_finite())
        .then_some(((p.0 + t0 * dx, p.1 + t0 * dy), (p.0 + t1 * dx, p.1 + t1 * dy)))
}

/// Integer line stepping between rounded endpoints, clipped first.
pub fn draw_line(img: &mut Raster, p: (f64, f64), q: (f64, f64), color: &[f32]) {
    let Some((a, b)) = clip_segment(p, q, img.width(), img.height()) else {
        return;
    };
    let (mut x, mut y) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let (dx, dy) = ((x1 - x).abs(), -(y1 - y).abs());
    let (sx, sy) = (if x < x1 { 1 } else { -1 }, if y < y1 { 1 } else { -1 });
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn put(img: &mut Raster, x: i64, y: i64, color: &[f32]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.set_pixel(x as usize, y as usize, color);
    }
}

fn fill_rect(img: &mut Raster, x0: i64, y0: i64, x1: i64, y1: i64, color: &[f32]) {
    for y in y0..=y1 {
        for x in x0..=x1 {
            put(img, x, y, color);
        }
    }
}

/// From the vanishing point down to the bottom row, or to the frame edge for
/// horizontal lines.
fn draw_virtual(img: &mut Raster, vp: (f64, f64), l: &VirtualLine, color: &[f32]) {
    let bottom = img.height() as f64 - 1.0;
    let end = if l.x_bottom.is_finite() {
        (l.x_bottom, bottom)
    } else {
        let reach = 4.0 * (img.width() + img.height()) as f64;
        (vp.0 + l.x_bottom.signum() * reach, vp.1)
    };
    draw_line(img, vp, end, color);
}

pub fn draw_overlay(frame: &Raster, result: &FrameResult, cfg: &OverlayConfig) -> Raster {
    let mut img = if frame.channels() == 3 {
        frame.clone()
    } else {
        Raster::from_fn_rgb(frame.width(), frame.height(), |x, y| [frame.get(x, y, 0); 3])
    };
    if cfg.segments {
        for s in &result.stripe_lines {
            draw_line(&mut img, s.p1, s.p2, &SEGMENT);
        }
    }
    let vp = result.verdict.vanishing_point.map(|[x, y]| (x, y));
    if let Some(vp) = vp {
        if cfg.virtual_lines {
            for l in &result.virtual_lines {
                draw_virtual(&mut img, vp, l, &VIRTUAL);
            }
        }
        if cfg.offside_line {
            if let Some(l) = &result.offside_line {
                draw_virtual(&mut img, vp, l, &OFFSIDE);
            }
        }
    }
    if cfg.keypoints {
        for k in result.players.iter().flat_map(|p| &p.keypoints) {
            let (x, y) = (k.x.round() as i64, k.y.round() as i64);
            for d in -2..=2 {
                put(&mut img, x + d, y, &KEYPOINT);
                put(&mut img, x, y + d, &KEYPOINT);
            }
        }
    }
    if cfg.verdicts {
        for v in &result.verdict.verdicts {
            let color = match v.status {
                VerdictStatus::Offside => FLAGGED,
                VerdictStatus::Onside => ONSIDE,
                VerdictStatus::NotApplicable => continue,
            };
            if let Some(p) = result.players.iter().find(|p| p.player_id == v.player_id) {
                let (cx, top) = ((p.bbox[0] + p.bbox[2] / 2.0).round() as i64, p.bbox[1].round() as i64);
                fill_rect(&mut img, cx - 3, top - 10, cx + 3, top - 4, &color);
            }
        }
    }
    img
}
