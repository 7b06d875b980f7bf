//! Pitch-stripe line detection: Canny edges, Hough voting, segment
//! extraction and the slope-angle window.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{gaussian_blur, saturation_plane, sobel, Raster, RasterError};
use crate::segmentation::BinaryMask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineError {
    #[error("canny thresholds must satisfy 0 <= t_low <= t_high (got {t_low}, {t_high})")]
    BadThresholds { t_low: f64, t_high: f64 },
    #[error("hough parameters must be strictly positive")]
    BadHoughParams,
    #[error("angle window must satisfy 0 <= min < max < 90 (got {min_deg}, {max_deg})")]
    BadAngleWindow { min_deg: f64, max_deg: f64 },
    #[error("segment endpoints coincide")]
    DegenerateSegment,
    #[error("invalid stripe-plane parameters: {0}")]
    BadStripeParams(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
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

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Edge pixel coordinates in raster order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| ((i % self.width) as f64, (i / self.width) as f64))
            .collect()
    }
}

/// Line in normal form `x cos(theta) + y sin(theta) = rho`, `theta ∈ [0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarLine {
    pub rho: f64,
    pub theta: f64,
}

impl PolarLine {
    pub fn new(rho: f64, theta: f64) -> Self {
        let mut line = Self { rho, theta };
        line.canonicalize();
        line
    }

    fn canonicalize(&mut self) {
        self.theta = self.theta.rem_euclid(2.0 * PI);
        if self.theta >= PI {
            self.theta -= PI;
            self.rho = -self.rho;
        }
        if self.theta >= PI {
            // rounding at the top of the range
            self.theta = 0.0;
        }
    }

    pub fn distance(&self, x: f64, y: f64) -> f64 {
        (x * self.theta.cos() + y * self.theta.sin() - self.rho).abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannyParams {
    pub sigma: f64,
    pub t_low: f64,
    pub t_high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            t_low: 0.06,
            t_high: 0.16,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), LineError> {
        if !(self.t_low >= 0.0 && self.t_low <= self.t_high) {
            return Err(LineError::BadThresholds {
                t_low: self.t_low,
                t_high: self.t_high,
            });
        }
        if self.sigma.is_nan() || self.sigma < 0.0 {
            return Err(RasterError::NegativeSigma(self.sigma).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HoughParams {
    pub rho_res: f64,
    pub theta_res: f64,
    pub votes_min: u32,
    pub max_gap: f64,
    pub min_len: f64,
    /// Least-squares refinement of each peak against its supporting edge pixels.
    pub refine: bool,
}

impl Default for HoughParams {
    fn default() -> Self {
        Self {
            rho_res: 1.0,
            theta_res: PI / 180.0,
            votes_min: 120,
            max_gap: 8.0,
            min_len: 60.0,
            refine: true,
        }
    }
}

impl HoughParams {
    pub fn validate(&self) -> Result<(), LineError> {
        let ok = self.rho_res > 0.0
            && self.theta_res > 0.0
            && self.theta_res <= PI
            && self.votes_min > 0
            && self.max_gap > 0.0
            && self.min_len > 0.0;
        if ok {
            Ok(())
        } else {
            Err(LineError::BadHoughParams)
        }
    }
}

/// Directed segment with its slope angle folded into `[0, 180)` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub angle_deg: f64,
}

impl Segment {
    pub fn new(p1: (f64, f64), p2: (f64, f64)) -> Result<Self, LineError> {
        if p1 == p2 {
            return Err(LineError::DegenerateSegment);
        }
        let mut angle_deg = (p2.1 - p1.1).atan2(p2.0 - p1.0).to_degrees();
        if angle_deg < 0.0 {
            angle_deg += 180.0;
        }
        if angle_deg >= 180.0 {
            angle_deg -= 180.0;
        }
        Ok(Self { p1, p2, angle_deg })
    }

    pub fn length(&self) -> f64 {
        (self.p2.0 - self.p1.0).hypot(self.p2.1 - self.p1.1)
    }

    /// Slope angle folded to `[0, 90]`.
    pub fn folded_angle(&self) -> f64 {
        if self.angle_deg > 90.0 {
            180.0 - self.angle_deg
        } else {
            self.angle_deg
        }
    }
}

// Direction bins: 0 = horizontal gradient, 1 = 45°, 2 = vertical, 3 = 135° (y down).
fn quantize(gx: f32, gy: f32) -> usize {
    let mut a = gy.atan2(gx).to_degrees();
    if a < 0.0 {
        a += 180.0;
    }
    if !(22.5..157.5).contains(&a) {
        0
    } else if a < 67.5 {
        1
    } else if a < 112.5 {
        2
    } else {
        3
    }
}

const NMS_STEP: [(i64, i64); 4] = [(1, 0), (1, 1), (0, 1), (-1, 1)];

/// Non-maximum suppression along the quantized gradient direction.
///
/// A pixel survives when strictly greater than its backward neighbor and no
/// smaller than its forward neighbor, so two-pixel plateaus thin to one.
pub fn non_max_suppression(width: usize, height: usize, gx: &[f32], gy: &[f32], mag: &[f32]) -> Vec<f32> {
    let at = |x: i64, y: i64| -> f32 {
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            0.0
        } else {
            mag[y as usize * width + x as usize]
        }
    };
    let mut out = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let m = mag[i];
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = NMS_STEP[quantize(gx[i], gy[i])];
            let (xi, yi) = (x as i64, y as i64);
            if m > at(xi - dx, yi - dy) && m >= at(xi + dx, yi + dy) {
                out[i] = m;
            }
        }
    }
    out
}

/// Double-threshold hysteresis: pixels `>= t_high` seed, pixels `>= t_low`
/// are kept when 8-connected to a seed.
pub fn hysteresis(width: usize, height: usize, mag: &[f32], t_low: f64, t_high: f64) -> EdgeMap {
    let mut edges = EdgeMap::new(width, height);
    let mut stack = Vec::new();
    let weak = |i: usize| mag[i] > 0.0 && mag[i] as f64 >= t_low;
    for (i, &m) in mag.iter().enumerate() {
        if m > 0.0 && m as f64 >= t_high && !edges.bits[i] {
            edges.bits[i] = true;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (x, y) = ((j % width) as i64, (j / width) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                            continue;
                        }
                        let k = ny as usize * width + nx as usize;
                        if !edges.bits[k] && weak(k) {
                            edges.bits[k] = true;
                            stack.push(k);
                        }
                    }
                }
            }
        }
    }
    edges
}

/// Canny edges on a single-channel image. Thresholds apply to the raw Sobel
/// magnitude of the blurred image.
pub fn canny(img: &Raster, params: &CannyParams) -> Result<EdgeMap, LineError> {
    params.validate()?;
    let blurred = gaussian_blur(img, params.sigma)?;
    let g = sobel(&blurred)?;
    let thin = non_max_suppression(g.width, g.height, &g.gx, &g.gy, &g.magnitude);
    Ok(hysteresis(g.width, g.height, &thin, params.t_low, params.t_high))
}

/// An accumulator maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoughPeak {
    /// Center of the winning accumulator cell.
    pub cell: PolarLine,
    /// `cell` after least-squares refinement (equal to `cell` when disabled).
    pub line: PolarLine,
    pub votes: u32,
    pub theta_bin: usize,
    pub rho_bin: usize,
}

struct Accumulator {
    n_theta: usize,
    n_rho: usize,
    rho_offset: usize,
    votes: Vec<u32>,
}

impl Accumulator {
    fn at(&self, t: usize, r: usize) -> u32 {
        self.votes[t * self.n_rho + r]
    }

    /// Neighbor in theta with wraparound: stepping past π mirrors rho.
    fn neighbor(&self, t: usize, r: usize, dt: i64, dr: i64) -> Option<(usize, usize)> {
        let mut nt = t as i64 + dt;
        let mut nr = r as i64 + dr;
        if nt < 0 || nt >= self.n_theta as i64 {
            nt = nt.rem_euclid(self.n_theta as i64);
            nr = self.n_rho as i64 - 1 - nr;
        }
        if nr < 0 || nr >= self.n_rho as i64 {
            return None;
        }
        Some((nt as usize, nr as usize))
    }

    /// Bin distance in (theta, rho) with the wraparound mirror.
    fn bin_distance(&self, a: (usize, usize), b: (usize, usize)) -> (usize, usize) {
        let direct = (a.0.abs_diff(b.0), a.1.abs_diff(b.1));
        let wrapped = (
            self.n_theta - a.0.abs_diff(b.0),
            a.1.abs_diff(self.n_rho - 1 - b.1),
        );
        if wrapped.0 < direct.0 {
            wrapped
        } else {
            direct
        }
    }
}

fn accumulate(points: &[(f64, f64)], width: usize, height: usize, params: &HoughParams) -> Accumulator {
    let n_theta = ((PI / params.theta_res).round() as usize).max(1);
    let diag = ((width * width + height * height) as f64).sqrt();
    let rho_offset = (diag / params.rho_res).ceil() as usize;
    let n_rho = 2 * rho_offset + 1;
    let mut votes = vec![0u32; n_theta * n_rho];
    let trig: Vec<(f64, f64)> = (0..n_theta)
        .map(|t| {
            let th = t as f64 * params.theta_res;
            (th.cos() / params.rho_res, th.sin() / params.rho_res)
        })
        .collect();
    for &(x, y) in points {
        for (t, &(c, s)) in trig.iter().enumerate() {
            let r = (x * c + y * s).round() as i64 + rho_offset as i64;
            votes[t * n_rho + r as usize] += 1;
        }
    }
    Accumulator {
        n_theta,
        n_rho,
        rho_offset,
        votes,
    }
}

const SUPPRESS_BINS: usize = 2;

/// Hough voting; returns de-duplicated local maxima with at least
/// `votes_min` votes, strongest first.
///
/// A cell is a maximum when it beats every 8-neighbor, equal neighbors
/// losing to the cell with the lower theta bin, then the lower rho bin.
/// Peaks within 2×2 bins of a stronger peak are dropped.
pub fn hough_accumulate(edges: &EdgeMap, params: &HoughParams) -> Result<Vec<HoughPeak>, LineError> {
    params.validate()?;
    let points = edges.points();
    Ok(hough_from_points(&points, edges.width, edges.height, params))
}

pub(crate) fn hough_from_points(
    points: &[(f64, f64)],
    width: usize,
    height: usize,
    params: &HoughParams,
) -> Vec<HoughPeak> {
    if points.is_empty() {
        return vec![];
    }
    let acc = accumulate(points, width, height, params);
    let mut cells = Vec::new();
    for t in 0..acc.n_theta {
        for r in 0..acc.n_rho {
            let v = acc.at(t, r);
            if v < params.votes_min {
                continue;
            }
            let mut is_max = true;
            'nb: for dt in -1..=1 {
                for dr in -1..=1 {
                    if dt == 0 && dr == 0 {
                        continue;
                    }
                    if let Some((nt, nr)) = acc.neighbor(t, r, dt, dr) {
                        let nv = acc.at(nt, nr);
                        if nv > v || (nv == v && (nt, nr) < (t, r)) {
                            is_max = false;
                            break 'nb;
                        }
                    }
                }
            }
            if is_max {
                cells.push((v, t, r));
            }
        }
    }
    cells.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut kept: Vec<(u32, usize, usize)> = Vec::new();
    for c in cells {
        let clash = kept.iter().any(|k| {
            let (dt, dr) = acc.bin_distance((k.1, k.2), (c.1, c.2));
            dt <= SUPPRESS_BINS && dr <= SUPPRESS_BINS
        });
        if !clash {
            kept.push(c);
        }
    }

    let mut peaks: Vec<HoughPeak> = Vec::with_capacity(kept.len());
    for (votes, t, r) in kept {
        let cell = PolarLine::new(
            (r as f64 - acc.rho_offset as f64) * params.rho_res,
            t as f64 * params.theta_res,
        );
        let line = if params.refine {
            refine_line(points, &cell, params.rho_res)
        } else {
            cell
        };
        // refinement can pull two cells onto the same edge run
        let duplicate = params.refine
            && peaks.iter().any(|p| {
                let dth = angle_between(p.line.theta, line.theta);
                dth < params.theta_res && line_gap(&p.line, &line, width, height) < 2.0 * params.rho_res
            });
        if !duplicate {
            peaks.push(HoughPeak {
                cell,
                line,
                votes,
                theta_bin: t,
                rho_bin: r,
            });
        }
    }
    peaks
}

/// Smallest angle between two undirected line normals.
fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

/// Largest separation of two lines measured at the image corners' span.
fn line_gap(a: &PolarLine, b: &PolarLine, width: usize, height: usize) -> f64 {
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    // signed distance of b's foot (nearest the image center) to a
    let t = -cx * b.theta.sin() + cy * b.theta.cos();
    let fx = b.rho * b.theta.cos() - t * b.theta.sin();
    let fy = b.rho * b.theta.sin() + t * b.theta.cos();
    a.distance(fx, fy)
}

const BAND: f64 = 1.5;

/// Total-least-squares fit of the edge pixels supporting `seed`.
///
/// Starts from the pixels inside the seed cell's rho bin and re-collects
/// everything within 1.5 px of the current fit for a few rounds.
pub fn refine_line(points: &[(f64, f64)], seed: &PolarLine, rho_res: f64) -> PolarLine {
    let mut line = *seed;
    let mut band = rho_res / 2.0;
    for _ in 0..4 {
        let (c, s) = (line.theta.cos(), line.theta.sin());
        let support: Vec<(f64, f64)> = points
            .iter()
            .copied()
            .filter(|&(x, y)| (x * c + y * s - line.rho).abs() <= band)
            .collect();
        match fit_line(&support) {
            Some(fit) => line = fit,
            None => break,
        }
        band = BAND;
    }
    line
}

fn fit_line(points: &[(f64, f64)]) -> Option<PolarLine> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / n, b + y / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx + syy == 0.0 {
        return None;
    }
    let dir = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let theta = dir + PI / 2.0;
    Some(PolarLine::new(mx * theta.cos() + my * theta.sin(), theta))
}

/// Splits the edge pixels within 1.5 px of `line` into runs along the line.
///
/// Runs break at gaps larger than `max_gap`; runs shorter than `min_len` are
/// dropped. Endpoints are the extreme pixels projected onto the line.
pub fn extract_segments(edges: &EdgeMap, line: &PolarLine, params: &HoughParams) -> Result<Vec<Segment>, LineError> {
    params.validate()?;
    Ok(segments_from_points(&edges.points(), line, params))
}

pub(crate) fn segments_from_points(points: &[(f64, f64)], line: &PolarLine, params: &HoughParams) -> Vec<Segment> {
    let (c, s) = (line.theta.cos(), line.theta.sin());
    let mut along: Vec<f64> = points
        .iter()
        .filter(|&&(x, y)| (x * c + y * s - line.rho).abs() <= BAND)
        .map(|&(x, y)| -x * s + y * c)
        .collect();
    along.sort_by(f64::total_cmp);
    let foot = |t: f64| (line.rho * c - t * s, line.rho * s + t * c);
    let mut out = Vec::new();
    let mut emit = |a: f64, b: f64| {
        if b - a >= params.min_len {
            if let Ok(seg) = Segment::new(foot(a), foot(b)) {
                out.push(seg);
            }
        }
    };
    let Some(&first) = along.first() else {
        return out;
    };
    let (mut start, mut prev) = (first, first);
    for &t in &along[1..] {
        if t - prev > params.max_gap {
            emit(start, prev);
            start = t;
        }
        prev = t;
    }
    emit(start, prev);
    out
}

/// Folded-angle comparisons tolerate this much floating-point noise.
const ANGLE_EPS: f64 = 1e-9;

/// Keeps segments whose slope angle, folded to `[0, 90]`, lies in `[min_deg, max_deg]`.
pub fn filter_by_angle(segments: &[Segment], min_deg: f64, max_deg: f64) -> Result<Vec<Segment>, LineError> {
    if !(min_deg >= 0.0 && min_deg < max_deg && max_deg < 90.0) {
        return Err(LineError::BadAngleWindow { min_deg, max_deg });
    }
    Ok(segments
        .iter()
        .filter(|s| {
            let a = s.folded_angle();
            a >= min_deg - ANGLE_EPS && a <= max_deg + ANGLE_EPS
        })
        .copied()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AngleWindow {
    pub min_deg: f64,
    pub max_deg: f64,
}

impl Default for AngleWindow {
    fn default() -> Self {
        Self {
            min_deg: 18.0,
            max_deg: 89.0,
        }
    }
}

/// How the saturation plane is prepared before Canny.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StripePlaneParams {
    /// Stretch in-field saturation between two percentiles onto `[0, 1]`.
    pub contrast_stretch: bool,
    pub low_pct: f64,
    pub high_pct: f64,
    /// Below this percentile spread the plane is left unstretched.
    pub min_contrast: f64,
    /// Edges closer than this (Chebyshev, px) to the field-mask boundary are dropped.
    pub border_margin_px: usize,
}

impl Default for StripePlaneParams {
    fn default() -> Self {
        Self {
            contrast_stretch: true,
            low_pct: 0.02,
            high_pct: 0.98,
            min_contrast: 0.01,
            border_margin_px: 7,
        }
    }
}

impl StripePlaneParams {
    pub fn validate(&self) -> Result<(), LineError> {
        if !(0.0..=1.0).contains(&self.low_pct)
            || !(0.0..=1.0).contains(&self.high_pct)
            || self.low_pct >= self.high_pct
        {
            return Err(LineError::BadStripeParams(
                "percentiles must satisfy 0 <= low_pct < high_pct <= 1".into(),
            ));
        }
        if self.min_contrast.is_nan() || self.min_contrast < 0.0 {
            return Err(LineError::BadStripeParams("min_contrast must be >= 0".into()));
        }
        Ok(())
    }
}

/// Saturation plane of the masked frame, contrast-stretched over the field.
/// Pixels outside the mask are 0.
pub fn stripe_plane(masked: &Raster, mask: &BinaryMask, params: &StripePlaneParams) -> Result<Raster, LineError> {
    params.validate()?;
    let sat = saturation_plane(masked)?;
    if !params.contrast_stretch {
        return Ok(sat);
    }
    let mut inside: Vec<f32> = sat
        .data()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    if inside.is_empty() {
        return Ok(sat);
    }
    inside.sort_by(f32::total_cmp);
    let pick = |p: f64| inside[((inside.len() - 1) as f64 * p).round() as usize];
    let (lo, hi) = (pick(params.low_pct), pick(params.high_pct));
    if ((hi - lo) as f64) < params.min_contrast {
        return Ok(sat);
    }
    let span = hi - lo;
    let data = sat
        .data()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    Ok(Raster::from_clamped(sat.width(), sat.height(), 1, data))
}

/// Clears edges within `margin` px (Chebyshev) of a background pixel of
/// `mask`. The image border itself does not count as background.
pub fn suppress_mask_border(edges: &mut EdgeMap, mask: &BinaryMask, margin: usize) {
    if margin == 0 {
        return;
    }
    let near_bg = dilate_background(mask, margin);
    for (bit, &near) in edges.bits.iter_mut().zip(&near_bg) {
        if near {
            *bit = false;
        }
    }
}

fn dilate_background(mask: &BinaryMask, r: usize) -> Vec<bool> {
    let (w, h) = (mask.width(), mask.height());
    let window = |line: &[bool], out: &mut [bool]| {
        let n = line.len();
        let mut prefix = vec![0u32; n + 1];
        for (i, &b) in line.iter().enumerate() {
            prefix[i + 1] = prefix[i] + b as u32;
        }
        for (i, o) in out.iter_mut().enumerate() {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(n);
            *o = prefix[hi] > prefix[lo];
        }
    };
    let bg: Vec<bool> = mask.bits().iter().map(|&b| !b).collect();
    let mut horiz = vec![false; w * h];
    for y in 0..h {
        window(&bg[y * w..(y + 1) * w], &mut horiz[y * w..(y + 1) * w]);
    }
    let mut out = vec![false; w * h];
    let mut col = vec![false; h];
    let mut col_out = vec![false; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = horiz[y * w + x];
        }
        window(&col, &mut col_out);
        for y in 0..h {
            out[y * w + x] = col_out[y];
        }
    }
    out
}

/// Everything the line stage produced for one frame.
#[derive(Debug, Clone)]
pub struct LineDetection {
    pub edges: EdgeMap,
    pub peaks: Vec<HoughPeak>,
    /// Segments of every peak, before the angle window.
    pub segments: Vec<Segment>,
    /// Angle-filtered segments grouped by peak, merged into one span each.
    pub stripe_lines: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct LineConfig {
    pub canny: CannyParams,
    pub hough: HoughParams,
    pub angle: AngleWindow,
    pub stripe: StripePlaneParams,
}

impl LineConfig {
    pub fn validate(&self) -> Result<(), LineError> {
        self.canny.validate()?;
        self.hough.validate()?;
        self.stripe.validate()?;
        let (lo, hi) = (self.angle.min_deg, self.angle.max_deg);
        if !(lo >= 0.0 && lo < hi && hi < 90.0) {
            return Err(LineError::BadAngleWindow { min_deg: lo, max_deg: hi });
        }
        Ok(())
    }
}

/// Edges from a prepared single-channel plane, with the mask border removed.
pub fn stripe_edges(plane: &Raster, mask: &BinaryMask, cfg: &LineConfig) -> Result<EdgeMap, LineError> {
    let mut edges = canny(plane, &cfg.canny)?;
    suppress_mask_border(&mut edges, mask, cfg.stripe.border_margin_px);
    Ok(edges)
}

/// Hough, segment extraction and angle filtering over an edge map.
pub fn lines_from_edges(edges: EdgeMap, cfg: &LineConfig) -> Result<LineDetection, LineError> {
    cfg.validate()?;
    let points = edges.points();
    let peaks = hough_from_points(&points, edges.width, edges.height, &cfg.hough);
    let mut segments = Vec::new();
    let mut stripe_lines = Vec::new();
    for peak in &peaks {
        let segs = segments_from_points(&points, &peak.line, &cfg.hough);
        let kept = filter_by_angle(&segs, cfg.angle.min_deg, cfg.angle.max_deg)?;
        if let (Some(first), Some(last)) = (kept.first(), kept.last()) {
            let span = if kept.len() == 1 {
                *first
            } else {
                Segment::new(first.p1, last.p2)?
            };
            stripe_lines.push(span);
        }
        segments.extend(segs);
    }
    Ok(LineDetection {
        edges,
        peaks,
        segments,
        stripe_lines,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Bresenham rasterization, the test oracle for synthetic edge maps.
    pub(crate) fn raster_line(map: &mut EdgeMap, (x0, y0): (i64, i64), (x1, y1): (i64, i64)) -> usize {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        let mut n = 0;
        loop {
            if x >= 0 && y >= 0 && (x as usize) < map.width() && (y as usize) < map.height() && !map.get(x as usize, y as usize) {
                map.set(x as usize, y as usize, true);
                n += 1;
            }
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
        n
    }

    fn truth(p: (f64, f64), q: (f64, f64)) -> PolarLine {
        let dir = (q.1 - p.1).atan2(q.0 - p.0);
        let theta = dir + PI / 2.0;
        PolarLine::new(p.0 * theta.cos() + p.1 * theta.sin(), theta)
    }

    fn bins_off(a: &PolarLine, b: &PolarLine, params: &HoughParams) -> (f64, f64) {
        // compare with the (rho, theta) ~ (-rho, theta ± π) alias
        let direct = ((a.theta - b.theta).abs(), (a.rho - b.rho).abs());
        let wrapped = (PI - (a.theta - b.theta).abs(), (a.rho + b.rho).abs());
        let (dt, dr) = if wrapped.0 < direct.0 { wrapped } else { direct };
        (dt / params.theta_res, dr / params.rho_res)
    }

    #[test]
    fn canny_constant_is_empty() {
        let img = Raster::filled(20, 20, &[0.4]).unwrap();
        assert_eq!(canny(&img, &CannyParams::default()).unwrap().count(), 0);
    }

    #[test]
    fn canny_bad_thresholds() {
        let img = Raster::filled(5, 5, &[0.4]).unwrap();
        let p = CannyParams { sigma: 1.0, t_low: 0.5, t_high: 0.1 };
        assert!(matches!(canny(&img, &p), Err(LineError::BadThresholds { .. })));
    }

    #[test]
    fn canny_step_is_single_column() {
        let (w, h) = (20, 12);
        let img = Raster::from_fn_gray(w, h, |x, _| if x >= 10 { 1.0 } else { 0.0 });
        let p = CannyParams { sigma: 1.0, t_low: 0.05, t_high: 0.05 };
        let e = canny(&img, &p).unwrap();
        let first: Vec<usize> = (0..w).filter(|&x| e.get(x, 0)).collect();
        assert_eq!(first.len(), 1);
        assert!(first[0] == 9 || first[0] == 10);
        for y in 0..h {
            let cols: Vec<usize> = (0..w).filter(|&x| e.get(x, y)).collect();
            assert_eq!(cols, first, "row {y}");
        }
    }

    #[test]
    fn hysteresis_ring_connectivity() {
        let (w, h) = (12, 12);
        let mut mag = vec![0.0f32; w * h];
        let ring: Vec<(usize, usize)> = (3..9)
            .flat_map(|i| [(i, 3), (i, 8), (3, i), (8, i)])
            .collect();
        for &(x, y) in &ring {
            mag[y * w + x] = 0.3;
        }
        let e = hysteresis(w, h, &mag, 0.2, 0.5);
        assert_eq!(e.count(), 0);

        mag[3 * w + 5] = 0.9;
        let e = hysteresis(w, h, &mag, 0.2, 0.5);
        assert!(ring.iter().all(|&(x, y)| e.get(x, y)));
        assert_eq!(e.count(), 20);
    }

    #[test]
    fn hough_empty() {
        let e = EdgeMap::new(30, 30);
        assert!(hough_accumulate(&e, &HoughParams::default()).unwrap().is_empty());
    }

    #[test]
    fn hough_diagonal() {
        let mut e = EdgeMap::new(200, 200);
        let n = raster_line(&mut e, (0, 0), (199, 199));
        let params = HoughParams { votes_min: (n / 2) as u32, ..HoughParams::default() };
        let peaks = hough_accumulate(&e, &params).unwrap();
        assert_eq!(peaks.len(), 1);
        let t = truth((0.0, 0.0), (199.0, 199.0));
        assert!((t.theta - 135f64.to_radians()).abs() < 1e-9);
        for line in [peaks[0].cell, peaks[0].line] {
            let (dt, dr) = bins_off(&line, &t, &params);
            assert!(dt <= 1.0 && dr <= 1.0, "{line:?} vs {t:?}");
        }
        assert!((peaks[0].votes as i64 - n as i64).abs() <= 2);
    }

    #[test]
    fn hough_two_perpendicular_lines() {
        let mut e = EdgeMap::new(300, 300);
        let a = ((20.0, 40.0), (260.0, 280.0));
        let b = ((40.0, 270.0), (270.0, 40.0));
        let na = raster_line(&mut e, (20, 40), (260, 280));
        raster_line(&mut e, (40, 270), (270, 40));
        let params = HoughParams { votes_min: (na / 2) as u32, refine: false, ..HoughParams::default() };
        let peaks = hough_accumulate(&e, &params).unwrap();
        assert_eq!(peaks.len(), 2);
        for t in [truth(a.0, a.1), truth(b.0, b.1)] {
            assert!(peaks.iter().any(|p| {
                let (dt, dr) = bins_off(&p.cell, &t, &params);
                dt <= 1.0 && dr <= 1.0
            }));
        }
    }

    #[test]
    fn hough_votes_match_pixel_count_on_aligned_lines() {
        for (p, q) in [((5, 17), (180, 17)), ((33, 2), (33, 150)), ((10, 10), (150, 150))] {
            let mut e = EdgeMap::new(200, 200);
            let n = raster_line(&mut e, p, q);
            let params = HoughParams { votes_min: 10, ..HoughParams::default() };
            let peaks = hough_accumulate(&e, &params).unwrap();
            assert!((peaks[0].votes as i64 - n as i64).abs() <= 2);
        }
    }

    #[test]
    fn refinement_recovers_long_oblique_line() {
        let mut e = EdgeMap::new(640, 480);
        raster_line(&mut e, (30, 400), (610, 95));
        let params = HoughParams { votes_min: 50, ..HoughParams::default() };
        let peaks = hough_accumulate(&e, &params).unwrap();
        let t = truth((30.0, 400.0), (610.0, 95.0));
        let (dt, dr) = bins_off(&peaks[0].line, &t, &params);
        assert!(dt < 0.2 && dr < 0.5, "{dt} {dr}");
    }

    #[test]
    fn segments_span_and_gap() {
        let mut e = EdgeMap::new(300, 200);
        raster_line(&mut e, (20, 150), (260, 30));
        let line = truth((20.0, 150.0), (260.0, 30.0));
        let params = HoughParams::default();
        let segs = extract_segments(&e, &line, &params).unwrap();
        assert_eq!(segs.len(), 1);
        let s = segs[0];
        let near = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1) <= 2.0;
        assert!(near(s.p1, (20.0, 150.0)) || near(s.p1, (260.0, 30.0)));
        assert!(near(s.p2, (20.0, 150.0)) || near(s.p2, (260.0, 30.0)));

        // gap of max_gap + 2 along x in the middle
        let gap = params.max_gap + 2.0;
        let mut g = e.clone();
        for x in 0..300 {
            for y in 0..200 {
                let xf = x as f64;
                if xf >= 140.0 && xf < 140.0 + gap {
                    g.set(x, y, false);
                }
            }
        }
        assert_eq!(extract_segments(&g, &line, &params).unwrap().len(), 2);

        let mut short = EdgeMap::new(100, 100);
        raster_line(&mut short, (10, 10), (40, 10));
        let l = truth((10.0, 10.0), (40.0, 10.0));
        assert!(extract_segments(&short, &l, &params).unwrap().is_empty());
    }

    fn seg_at(deg: f64) -> Segment {
        let r = deg.to_radians();
        Segment::new((100.0, 100.0), (100.0 + 50.0 * r.cos(), 100.0 + 50.0 * r.sin())).unwrap()
    }

    #[test]
    fn angle_filter_examples() {
        let kept = filter_by_angle(&[seg_at(45.0), seg_at(5.0), seg_at(90.0)], 18.0, 89.0).unwrap();
        assert_eq!(kept.len(), 1);
        assert!((kept[0].angle_deg - 45.0).abs() < 1e-9);
        assert!(matches!(filter_by_angle(&[], 30.0, 20.0), Err(LineError::BadAngleWindow { .. })));
        assert!(matches!(filter_by_angle(&[], 10.0, 90.0), Err(LineError::BadAngleWindow { .. })));
        assert!(matches!(Segment::new((1.0, 1.0), (1.0, 1.0)), Err(LineError::DegenerateSegment)));
    }

    #[test]
    fn border_suppression() {
        let mask = BinaryMask::from_fn(30, 20, |_, y| y >= 5);
        let mut e = EdgeMap::new(30, 20);
        for x in 0..30 {
            for y in 0..20 {
                e.set(x, y, true);
            }
        }
        suppress_mask_border(&mut e, &mask, 3);
        for y in 0..20 {
            assert_eq!(e.get(0, y), y >= 8, "row {y}");
            assert_eq!(e.get(29, y), y >= 8);
        }
    }

    #[test]
    fn stripe_plane_stretches_inside_mask() {
        let frame = Raster::from_fn_rgb(40, 10, |x, y| {
            if y < 2 {
                [0.0, 0.0, 0.0]
            } else if x < 20 {
                [0.36, 0.65, 0.30]
            } else {
                [0.22, 0.48, 0.20]
            }
        });
        let mask = BinaryMask::from_fn(40, 10, |_, y| y >= 2);
        let p = stripe_plane(&frame, &mask, &StripePlaneParams::default()).unwrap();
        assert_eq!(p.get(5, 5, 0), 0.0);
        assert_eq!(p.get(30, 5, 0), 1.0);
        assert_eq!(p.get(30, 0, 0), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn angle_filter_idempotent(angles in prop::collection::vec(0.0f64..180.0, 0..20), lo in 0.0f64..45.0, span in 1.0f64..44.0) {
            let segs: Vec<Segment> = angles.iter().map(|&a| seg_at(a)).collect();
            let hi = lo + span;
            let once = filter_by_angle(&segs, lo, hi).unwrap();
            prop_assert_eq!(&filter_by_angle(&once, lo, hi).unwrap(), &once);
            // subset, order preserved
            let mut it = segs.iter();
            for s in &once {
                prop_assert!(it.any(|x| x == s));
            }
        }
    }

    fn arb_blobby() -> impl Strategy<Value = Raster> {
        (prop::collection::vec((0usize..32, 0usize..24, 1usize..8, 0.0f32..=1.0), 1..6), 0.0f32..0.3)
            .prop_map(|(rects, base)| {
                Raster::from_fn_gray(32, 24, |x, y| {
                    rects.iter().fold(base, |v, &(rx, ry, s, val)| {
                        if x >= rx && x < rx + s * 2 && y >= ry && y < ry + s {
                            val
                        } else {
                            v
                        }
                    })
                })
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn canny_thin_and_subset(img in arb_blobby(), sigma in 0.5f64..2.0, lo in 0.05f64..0.5, extra in 0.0f64..1.0) {
            let p = CannyParams { sigma, t_low: lo, t_high: lo + extra };
            let e = canny(&img, &p).unwrap();
            let g = sobel(&gaussian_blur(&img, sigma).unwrap()).unwrap();
            let (w, h) = (g.width as i64, g.height as i64);
            for y in 0..h {
                for x in 0..w {
                    let i = (y * w + x) as usize;
                    if !e.bits()[i] {
                        continue;
                    }
                    prop_assert!(g.magnitude[i] as f64 >= lo);
                    let (dx, dy) = NMS_STEP[quantize(g.gx[i], g.gy[i])];
                    for (nx, ny) in [(x + dx, y + dy), (x - dx, y - dy)] {
                        if nx >= 0 && ny >= 0 && nx < w && ny < h {
                            prop_assert!(g.magnitude[(ny * w + nx) as usize] <= g.magnitude[i]);
                        }
                    }
                }
            }
        }
    }
}
