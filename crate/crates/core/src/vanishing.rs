//! Vanishing-point estimation for a pencil of 3D-parallel lines.
//!
//! All pairwise intersections of the detected lines are collected, then a
//! RANSAC loop repeatedly fits a *line* through two sampled intersection
//! points, counts the intersections within `inlier_dist` of it and keeps the
//! best round. The estimate is the mean of the best inlier set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lines::Segment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VpError {
    #[error("segment endpoints coincide")]
    DegenerateSegment,
    #[error("need at least 2 lines, got {0}")]
    TooFewLines(usize),
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("no vanishing point: fewer than 2 usable intersections")]
    NoVanishingPoint,
    #[error("invalid ransac parameters: {0}")]
    BadParams(String),
}

/// `a x + b y + c = 0` with `a² + b² = 1` and the first nonzero of `(a, b)` positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HomogLine {
    /// Normalizes `(a, b, c)`; `None` when `a` and `b` are both zero.
    pub fn new(a: f64, b: f64, c: f64) -> Option<Self> {
        let n = a.hypot(b);
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        let sign = if a > 0.0 || (a == 0.0 && b > 0.0) { 1.0 } else { -1.0 };
        let k = sign / n;
        Some(Self {
            a: a * k,
            b: b * k,
            c: c * k,
        })
    }

    /// The line through two distinct points.
    pub fn through(p: (f64, f64), q: (f64, f64)) -> Option<Self> {
        if p == q {
            return None;
        }
        Self::new(p.1 - q.1, q.0 - p.0, p.0 * q.1 - q.0 * p.1)
    }

    /// Residual `a x + b y + c`; the signed Euclidean distance.
    pub fn eval(&self, p: (f64, f64)) -> f64 {
        self.a * p.0 + self.b * p.1 + self.c
    }

    /// `x` where the line crosses the horizontal `y`; infinite for horizontal lines.
    pub fn x_at(&self, y: f64) -> f64 {
        -(self.b * y + self.c) / self.a
    }
}

pub fn segment_to_homog(seg: &Segment) -> Result<HomogLine, VpError> {
    HomogLine::through(seg.p1, seg.p2).ok_or(VpError::DegenerateSegment)
}

pub fn point_line_distance(p: (f64, f64), l: &HomogLine) -> f64 {
    l.eval(p).abs()
}

/// Cross-product intersections of every unordered pair, in lexicographic
/// pair order. Pairs with `|w| < parallel_eps` are skipped.
pub fn pairwise_intersections(lines: &[HomogLine], parallel_eps: f64) -> Result<Vec<(f64, f64)>, VpError> {
    if lines.len() < 2 {
        return Err(VpError::TooFewLines(lines.len()));
    }
    let mut out = Vec::with_capacity(lines.len() * (lines.len() - 1) / 2);
    for (i, l1) in lines.iter().enumerate() {
        for l2 in &lines[i + 1..] {
            let w = l1.a * l2.b - l2.a * l1.b;
            if w.abs() < parallel_eps {
                continue;
            }
            let x = (l1.b * l2.c - l2.b * l1.c) / w;
            let y = (l1.c * l2.a - l2.c * l1.a) / w;
            out.push((x, y));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacParams {
    pub iterations: u32,
    pub inlier_dist: f64,
    pub early_exit_frac: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 1000,
            inlier_dist: 20.0,
            early_exit_frac: 0.6,
            seed: 0,
        }
    }
}

impl RansacParams {
    pub fn validate(&self) -> Result<(), VpError> {
        if self.iterations == 0 {
            return Err(VpError::BadParams("iterations must be >= 1".into()));
        }
        if self.inlier_dist.is_nan() || self.inlier_dist <= 0.0 {
            return Err(VpError::BadParams("inlier_dist must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.early_exit_frac) {
            return Err(VpError::BadParams("early_exit_frac must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanishingPoint {
    pub x: f64,
    pub y: f64,
    pub inlier_count: usize,
    pub total_points: usize,
}

impl VanishingPoint {
    pub fn confidence(&self) -> f64 {
        if self.total_points == 0 {
            0.0
        } else {
            self.inlier_count as f64 / self.total_points as f64
        }
    }
}

/// Points closer than this are treated as the same point.
const COINCIDENT: f64 = 1e-6;

fn coincident(p: (f64, f64), q: (f64, f64)) -> bool {
    (p.0 - q.0).hypot(p.1 - q.1) < COINCIDENT
}

fn mean_of(points: impl Iterator<Item = (f64, f64)>) -> (f64, f64, usize) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (x, y) in points {
        sx += x;
        sy += y;
        n += 1;
    }
    (sx / n as f64, sy / n as f64, n)
}

/// Seeded RANSAC over intersection points with a line model.
///
/// Ties between rounds keep the earliest. Sampled pairs that coincide are
/// redrawn; if every point coincides, that point is returned with all
/// points as inliers.
pub fn ransac_vanishing_point(points: &[(f64, f64)], params: &RansacParams) -> Result<VanishingPoint, VpError> {
    ransac_with_inliers(points, params).map(|(vp, _)| vp)
}

/// [`ransac_vanishing_point`] plus the inlier flag of every input point.
pub fn ransac_with_inliers(
    points: &[(f64, f64)],
    params: &RansacParams,
) -> Result<(VanishingPoint, Vec<bool>), VpError> {
    params.validate()?;
    let total = points.len();
    if total < 2 {
        return Err(VpError::TooFewPoints(total));
    }
    if points.iter().all(|&p| coincident(p, points[0])) {
        let (x, y, _) = mean_of(points.iter().copied());
        let vp = VanishingPoint {
            x,
            y,
            inlier_count: total,
            total_points: total,
        };
        return Ok((vp, vec![true; total]));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, HomogLine)> = None;
    for _ in 0..params.iterations {
        let model = loop {
            let i = rng.random_range(0..total);
            let offset = rng.random_range(1..total);
            // first point after the random offset that differs from points[i]
            let partner = (0..total)
                .map(|k| (i + offset + k) % total)
                .filter(|&j| j != i)
                .find(|&j| !coincident(points[i], points[j]));
            if let Some(j) = partner {
                break HomogLine::through(points[i], points[j]).expect("distinct points");
            }
        };
        let count = points
            .iter()
            .filter(|&&p| point_line_distance(p, &model) <= params.inlier_dist)
            .count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, model));
        }
        if count as f64 / total as f64 >= params.early_exit_frac {
            break;
        }
    }
    let (_, model) = best.expect("at least one iteration");
    let inliers: Vec<bool> = points
        .iter()
        .map(|&p| point_line_distance(p, &model) <= params.inlier_dist)
        .collect();
    let (x, y, n) = mean_of(points.iter().zip(&inliers).filter(|(_, &k)| k).map(|(&p, _)| p));
    let vp = VanishingPoint {
        x,
        y,
        inlier_count: n,
        total_points: total,
    };
    Ok((vp, inliers))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpParams {
    pub ransac: RansacParams,
    pub parallel_eps: f64,
    /// Intersections farther than this many image diagonals from the image
    /// center are treated as points at infinity and dropped.
    pub max_distance_diag: f64,
}

impl Default for VpParams {
    fn default() -> Self {
        Self {
            ransac: RansacParams::default(),
            parallel_eps: 1e-6,
            max_distance_diag: 4.0,
        }
    }
}

/// Lines → intersections → distance cut → RANSAC, for a `width × height` frame.
pub fn estimate_vanishing_point(
    segments: &[Segment],
    width: usize,
    height: usize,
    params: &VpParams,
) -> Result<VanishingPoint, VpError> {
    params.ransac.validate()?;
    if segments.len() < 2 {
        return Err(VpError::NoVanishingPoint);
    }
    let lines = segments
        .iter()
        .map(segment_to_homog)
        .collect::<Result<Vec<_>, _>>()?;
    let (cx, cy) = (width as f64 / 2.0, height as f64 / 2.0);
    let limit = params.max_distance_diag * (width as f64).hypot(height as f64);
    let points: Vec<(f64, f64)> = pairwise_intersections(&lines, params.parallel_eps)?
        .into_iter()
        .filter(|&(x, y)| (x - cx).hypot(y - cy) <= limit)
        .collect();
    if points.len() < 2 {
        return Err(VpError::NoVanishingPoint);
    }
    ransac_vanishing_point(&points, &params.ransac)
}
