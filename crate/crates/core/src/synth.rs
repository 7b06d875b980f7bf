//! Ground-truth scene generator.
//!
//! A pinhole camera looks at a striped pitch lying in the plane `z = 0`
//! (`x` along the length, `y` across the width, `z` up). Stripe boundaries are
//! the lines `x = const`, so every boundary shares the direction `(0, 1, 0)`
//! and the stripes' vanishing point is known in closed form. Players are
//! keypoint sets above ground points, drawn as small disks.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{FrameAnnotations, GoalSide, Keypoint, PlayerAnnotation, Role, Team, DEFAULT_DESIRED_IDS};
use crate::raster::Raster;
use crate::vanishing::HomogLine;

pub const SCENE_SCHEMA: &str = "offside-scene/1";

/// Direction shared by all stripe boundaries.
pub const STRIPE_DIRECTION: [f64; 3] = [0.0, 1.0, 0.0];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("direction vector is zero")]
    ZeroDirection,
    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid pitch: {0}")]
    InvalidPitch(String),
    #[error("invalid player: {0}")]
    InvalidPlayer(String),
    #[error("scene schema error: {0}")]
    Schema(String),
    #[error("scene sampling failed: {0}")]
    Sampling(String),
}

/// Pinhole camera: `x_cam = R · x_world + t`, then `u = fx·X/Z + cx`, `v = fy·Y/Z + cy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation, row-major.
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, r: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self, SceneError> {
        let cam = Self { fx, fy, cx, cy, r, t };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidCamera(m.to_string()));
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return bad("focal lengths must be positive");
        }
        if ![self.cx, self.cy].iter().chain(self.t.iter()).all(|v| v.is_finite()) {
            return bad("principal point and translation must be finite");
        }
        let r = self.rotation();
        if (r * r.transpose() - Matrix3::identity()).abs().max() > 1e-9 {
            return bad("rotation is not orthonormal");
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return bad("rotation determinant is not +1");
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.r[i][j])
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * Vector3::from(self.t))
    }

    pub fn to_camera(&self, world: [f64; 3]) -> Vector3<f64> {
        self.rotation() * Vector3::from(world) + Vector3::from(self.t)
    }

    /// World direction of the ray through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        self.rotation().transpose() * Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

pub fn project(cam: &CameraModel, world: [f64; 3]) -> Result<(f64, f64), SceneError> {
    let p = cam.to_camera(world);
    if p.z <= 0.0 {
        return Err(SceneError::BehindCamera);
    }
    Ok((cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TrueVp {
    Point { x: f64, y: f64 },
    AtInfinity,
}

impl TrueVp {
    pub fn point(&self) -> Option<(f64, f64)> {
        match *self {
            TrueVp::Point { x, y } => Some((x, y)),
            TrueVp::AtInfinity => None,
        }
    }
}

pub fn true_vanishing_point(cam: &CameraModel, direction: [f64; 3]) -> Result<TrueVp, SceneError> {
    let d = Vector3::from(direction);
    if d.norm() == 0.0 {
        return Err(SceneError::ZeroDirection);
    }
    let dc = cam.rotation() * d;
    if dc.z.abs() < 1e-9 {
        return Ok(TrueVp::AtInfinity);
    }
    Ok(TrueVp::Point {
        x: cam.fx * dc.x / dc.z + cam.cx,
        y: cam.fy * dc.y / dc.z + cam.cy,
    })
}

/// Camera placement by position and viewing angles.
///
/// Yaw 0 looks along `+y` (across the pitch from the `-y` sideline); positive
/// yaw turns toward `+x`. Tilt pitches the view down, roll spins the image
/// about the optical axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rig {
    pub position: [f64; 3],
    pub yaw_deg: f64,
    pub tilt_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
    pub focal_px: f64,
}

impl Rig {
    /// Camera with the principal point at the center of a `width × height` frame.
    pub fn camera(&self, width: usize, height: usize) -> Result<CameraModel, SceneError> {
        let (psi, theta, phi) = (
            self.yaw_deg.to_radians(),
            self.tilt_deg.to_radians(),
            self.roll_deg.to_radians(),
        );
        let f = Vector3::new(psi.sin() * theta.cos(), psi.cos() * theta.cos(), -theta.sin());
        let r = Vector3::new(psi.cos(), -psi.sin(), 0.0);
        let dn = f.cross(&r);
        let r2 = r * phi.cos() + dn * phi.sin();
        let dn2 = dn * phi.cos() - r * phi.sin();
        let rot = Matrix3::from_rows(&[r2.transpose(), dn2.transpose(), f.transpose()]);
        let t = -(rot * Vector3::from(self.position));
        CameraModel::new(
            self.focal_px,
            self.focal_px,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            std::array::from_fn(|i| std::array::from_fn(|j| rot[(i, j)])),
            [t.x, t.y, t.z],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PitchSpec {
    pub length: f64,
    pub width: f64,
    pub stripe_count: usize,
    pub light_rgb: [f32; 3],
    pub dark_rgb: [f32; 3],
    pub background_rgb: [f32; 3],
}

impl Default for PitchSpec {
    fn default() -> Self {
        Self {
            length: 105.0,
            width: 68.0,
            stripe_count: 18,
            light_rgb: [0.36, 0.65, 0.30],
            dark_rgb: [0.22, 0.48, 0.20],
            background_rgb: [0.5, 0.5, 0.5],
        }
    }
}

impl PitchSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.stripe_count < 2 {
            return Err(SceneError::InvalidPitch("stripe_count must be at least 2".into()));
        }
        if !(self.length > 0.0 && self.width > 0.0 && self.length.is_finite() && self.width.is_finite()) {
            return Err(SceneError::InvalidPitch("dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn stripe_width(&self) -> f64 {
        self.length / self.stripe_count as f64
    }

    /// World `x` of each interior stripe boundary.
    pub fn boundaries(&self) -> Vec<f64> {
        (1..self.stripe_count)
            .map(|i| -self.length / 2.0 + i as f64 * self.stripe_width())
            .collect()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.length / 2.0 && y.abs() <= self.width / 2.0
    }

    fn color_at(&self, x: f64, y: f64) -> [f32; 3] {
        if !self.contains(x, y) {
            return self.background_rgb;
        }
        let i = (((x + self.length / 2.0) / self.stripe_width()) as usize).min(self.stripe_count - 1);
        if i.is_multiple_of(2) {
            self.light_rgb
        } else {
            self.dark_rgb
        }
    }
}

/// Keypoint offsets for an upright player; `stride` splits the legs along
/// `x`, `lean` shifts the shoulders along `x`.
pub fn standard_body(stride: f64, lean: f64) -> BTreeMap<u8, [f64; 3]> {
    BTreeMap::from([
        (0, [lean, 0.0, 1.70]),
        (5, [lean, -0.20, 1.45]),
        (6, [lean, 0.20, 1.45]),
        (11, [lean / 2.0, -0.12, 0.95]),
        (12, [lean / 2.0, 0.12, 0.95]),
        (13, [stride / 4.0, -0.10, 0.50]),
        (14, [-stride / 4.0, 0.10, 0.50]),
        (15, [stride / 2.0, -0.10, 0.08]),
        (16, [-stride / 2.0, 0.10, 0.08]),
    ])
}

fn default_body() -> BTreeMap<u8, [f64; 3]> {
    standard_body(0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenePlayer {
    pub player_id: String,
    pub team: Team,
    pub role: Role,
    pub ground_xy: [f64; 2],
    #[serde(default = "default_body")]
    pub keypoint_offsets: BTreeMap<u8, [f64; 3]>,
}

impl ScenePlayer {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: String| Err(SceneError::InvalidPlayer(format!("{}: {m}", self.player_id)));
        if self.role == Role::Referee && self.team != Team::Neutral {
            return bad("referees must be neutral".into());
        }
        for (&id, off) in &self.keypoint_offsets {
            if id > 16 {
                return bad(format!("keypoint id {id} outside 0..=16"));
            }
            if off[2] < 0.0 || off.iter().any(|v| !v.is_finite()) {
                return bad(format!("keypoint {id} offset must be finite with nonnegative height"));
            }
        }
        Ok(())
    }

    pub fn keypoint_world(&self, id: u8) -> Option<[f64; 3]> {
        self.keypoint_offsets
            .get(&id)
            .map(|o| [self.ground_xy[0] + o[0], self.ground_xy[1] + o[1], o[2]])
    }

    fn is_defender(&self) -> bool {
        self.team == Team::Defending && self.role == Role::Outfield
    }

    fn is_attacker(&self) -> bool {
        self.team == Team::Attacking && self.role == Role::Outfield
    }

    /// Furthest value of `measure` over the desired keypoints, oriented toward goal.
    fn extreme(&self, desired: &BTreeSet<u8>, goal: WorldGoal, measure: impl Fn([f64; 3]) -> f64) -> Option<f64> {
        desired
            .iter()
            .filter_map(|&id| self.keypoint_world(id))
            .map(|p| goal.toward(measure(p)))
            .reduce(f64::max)
    }
}

/// Which end of the pitch the defending team guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WorldGoal {
    #[default]
    #[serde(rename = "+x")]
    PlusX,
    #[serde(rename = "-x")]
    MinusX,
}

impl WorldGoal {
    pub fn toward(self, x: f64) -> f64 {
        match self {
            WorldGoal::PlusX => x,
            WorldGoal::MinusX => -x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsideTruth {
    /// `None` when the defending side has no outfield player.
    pub last_defender_id: Option<String>,
    pub offside_flags: BTreeMap<String, bool>,
}

/// World-space offside flags: an attacker is offside when any desired
/// keypoint lies strictly beyond the last defender's furthest desired keypoint.
pub fn true_offside(players: &[ScenePlayer], goal: WorldGoal, desired: &BTreeSet<u8>) -> OffsideTruth {
    let last = players
        .iter()
        .filter(|p| p.is_defender())
        .filter_map(|p| p.extreme(desired, goal, |k| k[0]).map(|v| (p, v)))
        .fold(None::<(&ScenePlayer, f64)>, |best, (p, v)| match best {
            Some((bp, bv)) if bv > v || (bv == v && bp.player_id <= p.player_id) => best,
            _ => Some((p, v)),
        });
    let Some((defender, line)) = last else {
        return OffsideTruth {
            last_defender_id: None,
            offside_flags: BTreeMap::new(),
        };
    };
    let offside_flags = players
        .iter()
        .filter(|p| p.is_attacker())
        .filter_map(|p| p.extreme(desired, goal, |k| k[0]).map(|v| (p.player_id.clone(), v > line)))
        .collect();
    OffsideTruth {
        last_defender_id: Some(defender.player_id.clone()),
        offside_flags,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame_id: String,
    pub vp_true: TrueVp,
    /// Image-side goal direction matching the scene's world goal.
    pub goal_side: GoalSide,
    pub last_defender_id: Option<String>,
    pub offside_flags: BTreeMap<String, bool>,
}

#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub frame: Raster,
    pub annotations: FrameAnnotations,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub frame_id: String,
    pub width: usize,
    pub height: usize,
    pub camera: CameraModel,
    pub pitch: PitchSpec,
    pub players: Vec<ScenePlayer>,
    pub goal: WorldGoal,
    /// Samples per pixel along each axis.
    pub supersample: usize,
    pub disk_radius_px: f64,
}

fn disk_color(p: &ScenePlayer) -> [f32; 3] {
    match (p.team, p.role) {
        (_, Role::Referee) => [0.05, 0.05, 0.05],
        (_, Role::Goalkeeper) => [0.95, 0.85, 0.10],
        (Team::Attacking, _) => [0.85, 0.15, 0.15],
        (Team::Defending, _) => [0.15, 0.25, 0.85],
        (Team::Neutral, _) => [0.9, 0.9, 0.9],
    }
}

/// Image direction in which world `+x` advances along the bottom row.
fn image_goal_side(cam: &CameraModel, height: usize, goal: WorldGoal) -> Result<GoalSide, SceneError> {
    let bottom = height as f64 - 1.0;
    let x_bottom = |k: f64| -> Result<f64, SceneError> {
        let a = project(cam, [k, 0.0, 0.0])?;
        let b = project(cam, [k, 1.0, 0.0])?;
        let l = HomogLine::through(a, b).ok_or_else(|| SceneError::DegenerateCamera("stripe projects to a point".into()))?;
        Ok(l.x_at(bottom))
    };
    let plus_right = x_bottom(1.0)? > x_bottom(-1.0)?;
    Ok(match (plus_right, goal) {
        (true, WorldGoal::PlusX) | (false, WorldGoal::MinusX) => GoalSide::Right,
        _ => GoalSide::Left,
    })
}

impl Scene {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.camera.validate()?;
        self.pitch.validate()?;
        let mut ids = BTreeSet::new();
        for p in &self.players {
            p.validate()?;
            if !ids.insert(p.player_id.as_str()) {
                return Err(SceneError::InvalidPlayer(format!("duplicate player id {}", p.player_id)));
            }
        }
        if self.width < 3 || self.height < 3 || self.supersample == 0 {
            return Err(SceneError::Schema("frame must be at least 3×3 with supersample ≥ 1".into()));
        }
        if self.camera.center().z <= 0.0 {
            return Err(SceneError::DegenerateCamera("camera is not above the pitch".into()));
        }
        Ok(())
    }

    pub fn render(&self) -> Result<RenderedScene, SceneError> {
        self.validate()?;
        let (w, h) = (self.width, self.height);
        let cam = &self.camera;
        let center = cam.center();
        let rt = cam.rotation().transpose();
        let n = self.supersample;
        let offsets: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64 - 0.5).collect();
        let weight = 1.0 / (n * n) as f32;
        let mut data = vec![0.0f32; w * h * 3];
        let mut pitch_pixels = 0usize;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0f32; 3];
                let mut on_pitch = false;
                for &oy in &offsets {
                    for &ox in &offsets {
                        let u = x as f64 + ox;
                        let v = y as f64 + oy;
                        let d = rt * Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
                        let c = if d.z < 0.0 {
                            let s = -center.z / d.z;
                            let (gx, gy) = (center.x + s * d.x, center.y + s * d.y);
                            on_pitch |= self.pitch.contains(gx, gy);
                            self.pitch.color_at(gx, gy)
                        } else {
                            self.pitch.background_rgb
                        };
                        for k in 0..3 {
                            acc[k] += c[k] * weight;
                        }
                    }
                }
                pitch_pixels += on_pitch as usize;
                data[(y * w + x) * 3..][..3].copy_from_slice(&acc);
            }
        }
        if pitch_pixels == 0 {
            return Err(SceneError::DegenerateCamera("no pitch pixel is visible".into()));
        }
        let mut frame = Raster::new(w, h, 3, data).expect("rendered samples are in range");

        let mut players = Vec::new();
        for p in &self.players {
            let color = disk_color(p);
            let mut keypoints = Vec::new();
            for &id in p.keypoint_offsets.keys() {
                let Ok((u, v)) = project(cam, p.keypoint_world(id).expect("listed id")) else {
                    continue;
                };
                keypoints.push(Keypoint { id, x: u, y: v, confidence: 1.0 });
                draw_disk(&mut frame, (u, v), self.disk_radius_px, &color);
            }
            let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for k in &keypoints {
                (x0, y0, x1, y1) = (x0.min(k.x), y0.min(k.y), x1.max(k.x), y1.max(k.y));
            }
            let pad = self.disk_radius_px + 2.0;
            let bbox = if keypoints.is_empty() {
                [0.0; 4]
            } else {
                [x0 - pad, y0 - pad, x1 - x0 + 2.0 * pad, y1 - y0 + 2.0 * pad]
            };
            players.push(PlayerAnnotation {
                player_id: p.player_id.clone(),
                team: p.team,
                role: p.role,
                det_score: 1.0,
                bbox,
                keypoints,
            });
        }

        let desired: BTreeSet<u8> = DEFAULT_DESIRED_IDS.into_iter().collect();
        let offside = true_offside(&self.players, self.goal, &desired);
        let truth = GroundTruth {
            frame_id: self.frame_id.clone(),
            vp_true: true_vanishing_point(cam, STRIPE_DIRECTION)?,
            goal_side: image_goal_side(cam, h, self.goal)?,
            last_defender_id: offside.last_defender_id,
            offside_flags: offside.offside_flags,
        };
        Ok(RenderedScene {
            frame,
            annotations: FrameAnnotations {
                frame_id: self.frame_id.clone(),
                players,
            },
            truth,
        })
    }

    /// Image segments of the stripe boundaries, clipped to the visible part of
    /// the pitch in front of the camera.
    pub fn stripe_boundary_segments(&self) -> Vec<((f64, f64), (f64, f64))> {
        let cam = &self.camera;
        let half = self.pitch.width / 2.0;
        let mut out = Vec::new();
        for x in self.pitch.boundaries() {
            // walk the boundary and keep the longest run that projects inside the frame
            let steps = 400;
            let mut run: Vec<(f64, f64)> = Vec::new();
            let mut best: Vec<(f64, f64)> = Vec::new();
            for i in 0..=steps {
                let y = -half + self.pitch.width * i as f64 / steps as f64;
                let inside = project(cam, [x, y, 0.0])
                    .ok()
                    .filter(|&(u, v)| u >= 0.0 && v >= 0.0 && u <= self.width as f64 - 1.0 && v <= self.height as f64 - 1.0);
                match inside {
                    Some(p) => run.push(p),
                    None => {
                        if run.len() > best.len() {
                            best = std::mem::take(&mut run);
                        }
                        run.clear();
                    }
                }
            }
            if run.len() > best.len() {
                best = run;
            }
            if best.len() >= 2 {
                out.push((best[0], best[best.len() - 1]));
            }
        }
        out
    }
}

fn draw_disk(img: &mut Raster, (cx, cy): (f64, f64), r: f64, color: &[f32; 3]) {
    if !(cx.is_finite() && cy.is_finite()) {
        return;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x0 = (cx - r).floor().max(0.0);
    let x1 = (cx + r).ceil().min(w - 1.0);
    let y0 = (cy - r).floor().max(0.0);
    let y1 = (cy + r).ceil().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    for y in y0 as usize..=y1 as usize {
        for x in x0 as usize..=x1 as usize {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                img.set_pixel(x, y, color);
            }
        }
    }
}

/// Seeded scene sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerParams {
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
    /// Absolute yaw range; the sign is drawn separately.
    pub yaw_deg: [f64; 2],
    pub tilt_deg: [f64; 2],
    pub camera_height_m: [f64; 2],
    pub setback_m: [f64; 2],
    /// Camera looks along the pitch length so the stripes are parallel to the image plane.
    pub square_on: bool,
    pub players_per_side: [usize; 2],
    pub goalkeeper: bool,
    pub referee: bool,
    /// Minimum separation between an attacker and the offside line, and
    /// between the two furthest defenders, in meters.
    pub clearance_m: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            width: 1280,
            height: 720,
            focal_px: 1000.0,
            yaw_deg: [10.0, 45.0],
            tilt_deg: [15.0, 30.0],
            camera_height_m: [12.0, 25.0],
            setback_m: [8.0, 20.0],
            square_on: false,
            players_per_side: [3, 8],
            goalkeeper: true,
            referee: true,
            clearance_m: 0.5,
        }
    }
}

/// Ground line `x` on which the camera sees the keypoint's pencil line land.
///
/// A keypoint at height `h` and the vanishing point span the same image line
/// as the ground line through this `x`; it differs from the keypoint's own
/// `x` by parallax.
pub fn ground_equivalent_x(camera_center: Vector3<f64>, p: [f64; 3]) -> f64 {
    camera_center.x + (p[0] - camera_center.x) * camera_center.z / (camera_center.z - p[2])
}

fn sample_range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

pub fn sample_camera(params: &SamplerParams, pitch: &PitchSpec, rng: &mut ChaCha8Rng) -> Result<CameraModel, SceneError> {
    let height = sample_range(rng, params.camera_height_m);
    let setback = sample_range(rng, params.setback_m);
    let tilt = sample_range(rng, params.tilt_deg);
    let rig = if params.square_on {
        // behind the -x goal line, looking down the length
        Rig {
            position: [-pitch.length / 2.0 - setback, rng.random_range(-10.0..10.0), height],
            yaw_deg: 90.0,
            tilt_deg: tilt,
            roll_deg: 0.0,
            focal_px: params.focal_px,
        }
    } else {
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        Rig {
            position: [rng.random_range(-15.0..15.0), -pitch.width / 2.0 - setback, height],
            yaw_deg: sign * sample_range(rng, params.yaw_deg),
            tilt_deg: tilt,
            roll_deg: 0.0,
            focal_px: params.focal_px,
        }
    };
    rig.camera(params.width, params.height)
}

struct Placer<'a> {
    cam: &'a CameraModel,
    pitch: &'a PitchSpec,
    width: f64,
    height: f64,
}

impl Placer<'_> {
    /// A player at a random visible spot, all keypoints in frame.
    fn place(&self, rng: &mut ChaCha8Rng, id: String, team: Team, role: Role) -> Option<ScenePlayer> {
        let center = self.cam.center();
        for _ in 0..200 {
            let u = rng.random_range(40.0..self.width - 40.0);
            let v = rng.random_range(self.height * 0.3..self.height - 20.0);
            let d = self.cam.ray(u, v);
            if d.z >= 0.0 {
                continue;
            }
            let s = -center.z / d.z;
            let (gx, gy) = (center.x + s * d.x, center.y + s * d.y);
            let margin = 1.0;
            if gx.abs() > self.pitch.length / 2.0 - margin || gy.abs() > self.pitch.width / 2.0 - margin {
                continue;
            }
            let player = ScenePlayer {
                player_id: id.clone(),
                team,
                role,
                ground_xy: [gx, gy],
                keypoint_offsets: standard_body(rng.random_range(-0.5..0.5), rng.random_range(-0.15..0.15)),
            };
            let visible = player.keypoint_offsets.keys().all(|&k| {
                project(self.cam, player.keypoint_world(k).expect("listed id"))
                    .is_ok_and(|(u, v)| u >= 8.0 && v >= 8.0 && u <= self.width - 9.0 && v <= self.height - 9.0)
            });
            if visible {
                return Some(player);
            }
        }
        None
    }
}

/// Random camera and players with exact annotations.
///
/// Players are resampled until every attacker sits at least `clearance_m`
/// from the offside line, and the last defender leads the next defender by
/// the same margin, both in world `x` and in the ground-equivalent `x` the
/// image sees. Without this a raised keypoint can land on the other side of
/// the line in the image than on the pitch.
pub fn sample_scene(params: &SamplerParams, pitch: &PitchSpec, goal: WorldGoal, seed: u64) -> Result<Scene, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let desired: BTreeSet<u8> = DEFAULT_DESIRED_IDS.into_iter().collect();
    for _ in 0..50 {
        let cam = sample_camera(params, pitch, &mut rng)?;
        let placer = Placer {
            cam: &cam,
            pitch,
            width: params.width as f64,
            height: params.height as f64,
        };
        if let Some(players) = sample_players(params, &placer, goal, &desired, &mut rng) {
            return Ok(Scene {
                frame_id: format!("scene_{seed:016x}"),
                width: params.width,
                height: params.height,
                camera: cam,
                pitch: pitch.clone(),
                players,
                goal,
                supersample: 2,
                disk_radius_px: 3.0,
            });
        }
    }
    Err(SceneError::Sampling(format!("no valid scene for seed {seed}")))
}

fn sample_players(
    params: &SamplerParams,
    placer: &Placer,
    goal: WorldGoal,
    desired: &BTreeSet<u8>,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<ScenePlayer>> {
    let center = placer.cam.center();
    let world = |p: &ScenePlayer| p.extreme(desired, goal, |k| k[0]).expect("body has desired ids");
    let image = |p: &ScenePlayer| p.extreme(desired, goal, |k| ground_equivalent_x(center, k)).expect("body has desired ids");
    let clear = params.clearance_m;
    let [lo, hi] = params.players_per_side;
    let n_def = rng.random_range(lo..=hi.max(lo));
    let n_att = rng.random_range(lo..=hi.max(lo));

    let mut defenders = Vec::new();
    for i in 0..n_def {
        defenders.push(placer.place(rng, format!("def_{i:02}"), Team::Defending, Role::Outfield)?);
    }
    // the leading defender must be unambiguous in both measures
    let lead = |f: &dyn Fn(&ScenePlayer) -> f64| {
        let mut v: Vec<(f64, usize)> = defenders.iter().enumerate().map(|(i, p)| (f(p), i)).collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0));
        (v[0].1, v[0].0, v.get(1).map_or(f64::NEG_INFINITY, |s| s.0))
    };
    let (wi, wline, wsecond) = lead(&world);
    let (ii, iline, isecond) = lead(&image);
    if wi != ii || wline - wsecond <= clear || iline - isecond <= clear {
        return None;
    }

    let mut players = defenders;
    for i in 0..n_att {
        let id = format!("att_{i:02}");
        let attacker = (0..50).find_map(|_| {
            let p = placer.place(rng, id.clone(), Team::Attacking, Role::Outfield)?;
            let (mw, mi) = (world(&p) - wline, image(&p) - iline);
            (mw.signum() == mi.signum() && mw.abs() > clear && mi.abs() > clear).then_some(p)
        })?;
        players.push(attacker);
    }
    if params.goalkeeper {
        players.push(placer.place(rng, "gk".into(), Team::Defending, Role::Goalkeeper)?);
    }
    if params.referee {
        players.push(placer.place(rng, "ref".into(), Team::Neutral, Role::Referee)?);
    }
    Some(players)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraSpec {
    Explicit(CameraModel),
    Rig(Rig),
}

/// Scene description document. Missing camera or players are sampled from
/// `seed`; `frames > 1` produces a sequence with seeds `seed, seed + 1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDescription {
    pub schema: String,
    #[serde(default)]
    pub frame_id: Option<String>,
    #[serde(default)]
    pub camera: Option<CameraSpec>,
    #[serde(default)]
    pub pitch: PitchSpec,
    #[serde(default)]
    pub players: Option<Vec<ScenePlayer>>,
    #[serde(default)]
    pub goal_side_world: WorldGoal,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub frames: usize,
    #[serde(default)]
    pub sampler: SamplerParams,
    #[serde(default = "two")]
    pub supersample: usize,
    #[serde(default = "three")]
    pub disk_radius_px: f64,
}

fn one() -> usize {
    1
}

fn two() -> usize {
    2
}

fn three() -> f64 {
    3.0
}

pub fn load_scene_description(document: &str) -> Result<SceneDescription, SceneError> {
    let d: SceneDescription = serde_json::from_str(document).map_err(|e| SceneError::Schema(e.to_string()))?;
    if d.schema != SCENE_SCHEMA {
        return Err(SceneError::Schema(format!("expected schema {SCENE_SCHEMA:?}, got {:?}", d.schema)));
    }
    if d.frames == 0 || d.frames > 100_000 {
        return Err(SceneError::Schema("frames must be in 1..=100000".into()));
    }
    if d.sampler.width < 3 || d.sampler.height < 3 || d.sampler.width * d.sampler.height > 1 << 26 {
        return Err(SceneError::Schema("frame dimensions out of range".into()));
    }
    if d.supersample == 0 || d.supersample > 8 || !(d.disk_radius_px >= 0.0 && d.disk_radius_px <= 100.0) {
        return Err(SceneError::Schema("supersample must be 1..=8, disk radius 0..=100".into()));
    }
    d.pitch.validate()?;
    Ok(d)
}

impl SceneDescription {
    /// Concrete scenes, one per frame.
    pub fn scenes(&self) -> Result<Vec<Scene>, SceneError> {
        let (w, h) = (self.sampler.width, self.sampler.height);
        (0..self.frames)
            .map(|i| {
                let seed = self.seed.wrapping_add(i as u64);
                let sampled = if self.camera.is_none() || self.players.is_none() {
                    Some(sample_scene(&self.sampler, &self.pitch, self.goal_side_world, seed)?)
                } else {
                    None
                };
                let camera = match &self.camera {
                    Some(CameraSpec::Explicit(c)) => c.clone(),
                    Some(CameraSpec::Rig(r)) => r.camera(w, h)?,
                    None => sampled.as_ref().expect("sampled").camera.clone(),
                };
                let players = match &self.players {
                    Some(p) => p.clone(),
                    None => sampled.as_ref().expect("sampled").players.clone(),
                };
                let base = self.frame_id.clone().unwrap_or_else(|| "frame".into());
                let frame_id = if self.frames == 1 { base } else { format!("{base}_{i:04}") };
                let scene = Scene {
                    frame_id,
                    width: w,
                    height: h,
                    camera,
                    pitch: self.pitch.clone(),
                    players,
                    goal: self.goal_side_world,
                    supersample: self.supersample,
                    disk_radius_px: self.disk_radius_px,
                };
                scene.validate()?;
                Ok(scene)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn rig(yaw: f64) -> Rig {
        Rig { position: [0.0, -44.0, 15.0], yaw_deg: yaw, tilt_deg: 20.0, roll_deg: 0.0, focal_px: 1000.0 }
    }

    fn intersect(a: &HomogLine, b: &HomogLine) -> (f64, f64) {
        let w = a.a * b.b - a.b * b.a;
        ((a.b * b.c - a.c * b.b) / w, (a.c * b.a - a.a * b.c) / w)
    }

    #[test]
    fn projection_examples() {
        let cam = CameraModel::new(100.0, 100.0, 0.0, 0.0, IDENTITY, [0.0; 3]).unwrap();
        assert_eq!(project(&cam, [1.0, 2.0, 10.0]).unwrap(), (10.0, 20.0));
        assert_eq!(project(&cam, [0.0, 0.0, 5.0]).unwrap(), (0.0, 0.0));
        assert_eq!(project(&cam, [1.0, 1.0, 0.0]), Err(SceneError::BehindCamera));
        assert_eq!(project(&cam, [1.0, 1.0, -3.0]), Err(SceneError::BehindCamera));
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::new(0.0, 1.0, 0.0, 0.0, IDENTITY, [0.0; 3]).is_err());
        let mirror = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, mirror, [0.0; 3]).is_err());
        let skew = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(CameraModel::new(1.0, 1.0, 0.0, 0.0, skew, [0.0; 3]).is_err());
        for yaw in [-60.0, 0.0, 33.0, 90.0] {
            let cam = rig(yaw).camera(1280, 720).unwrap();
            assert!((cam.center() - Vector3::new(0.0, -44.0, 15.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn vanishing_point_examples() {
        let cam = CameraModel::new(100.0, 120.0, 64.0, 48.0, IDENTITY, [0.0; 3]).unwrap();
        assert_eq!(true_vanishing_point(&cam, [0.0, 0.0, 2.0]).unwrap(), TrueVp::Point { x: 64.0, y: 48.0 });
        assert_eq!(true_vanishing_point(&cam, [1.0, 1.0, 0.0]).unwrap(), TrueVp::AtInfinity);
        assert_eq!(true_vanishing_point(&cam, [0.0; 3]), Err(SceneError::ZeroDirection));
        let square = rig(90.0).camera(1280, 720).unwrap();
        assert_eq!(true_vanishing_point(&square, STRIPE_DIRECTION).unwrap(), TrueVp::AtInfinity);
    }

    #[test]
    fn two_routes_to_the_vanishing_point() {
        let cam = rig(30.0).camera(1280, 720).unwrap();
        let vp = true_vanishing_point(&cam, STRIPE_DIRECTION).unwrap().point().unwrap();
        let line = |x: f64| HomogLine::through(project(&cam, [x, -30.0, 0.0]).unwrap(), project(&cam, [x, 20.0, 0.0]).unwrap()).unwrap();
        let p = intersect(&line(-12.0), &line(7.0));
        assert!((p.0 - vp.0).abs() < 1e-6 && (p.1 - vp.1).abs() < 1e-6, "{p:?} vs {vp:?}");
    }

    #[test]
    fn rendered_boundaries_meet_at_the_vanishing_point() {
        let cam = rig(25.0).camera(1280, 720).unwrap();
        let scene = Scene {
            frame_id: "f".into(),
            width: 1280,
            height: 720,
            camera: cam.clone(),
            pitch: PitchSpec::default(),
            players: vec![],
            goal: WorldGoal::PlusX,
            supersample: 1,
            disk_radius_px: 3.0,
        };
        let r = scene.render().unwrap();
        assert!(r.annotations.players.is_empty() && r.truth.offside_flags.is_empty());
        assert_eq!(r.truth.goal_side, GoalSide::Right);
        let vp = r.truth.vp_true.point().unwrap();
        let segs = scene.stripe_boundary_segments();
        assert!(segs.len() >= 4, "{}", segs.len());
        let lines: Vec<HomogLine> = segs.iter().map(|&(a, b)| HomogLine::through(a, b).unwrap()).collect();
        for i in 0..lines.len() {
            for j in i + 1..lines.len() {
                let p = intersect(&lines[i], &lines[j]);
                let tol = 1e-6 * (1.0 + vp.0.abs().max(vp.1.abs()));
                assert!((p.0 - vp.0).abs() < tol && (p.1 - vp.1).abs() < tol, "{p:?} vs {vp:?}");
            }
        }
        // light and dark stripes both present, background gray where the pitch ends
        let px: BTreeSet<[u32; 3]> = r.frame.data().chunks(3).map(|c| [c[0].to_bits(), c[1].to_bits(), c[2].to_bits()]).collect();
        assert!(px.len() >= 3);
    }

    #[test]
    fn square_on_truth_is_at_infinity() {
        let params = SamplerParams { square_on: true, ..SamplerParams::default() };
        let scene = sample_scene(&params, &PitchSpec::default(), WorldGoal::PlusX, 3).unwrap();
        assert_eq!(scene.render().unwrap().truth.vp_true, TrueVp::AtInfinity);
    }

    fn sp(id: &str, team: Team, role: Role, x: f64) -> ScenePlayer {
        ScenePlayer {
            player_id: id.into(),
            team,
            role,
            ground_xy: [x, 0.0],
            keypoint_offsets: BTreeMap::from([(15, [0.0, 0.0, 0.0])]),
        }
    }

    #[test]
    fn true_offside_examples() {
        let desired: BTreeSet<u8> = DEFAULT_DESIRED_IDS.into_iter().collect();
        let players = vec![
            sp("a", Team::Attacking, Role::Outfield, 40.0),
            sp("b", Team::Attacking, Role::Outfield, 38.0),
            sp("d", Team::Defending, Role::Outfield, 38.0),
            sp("gk", Team::Defending, Role::Goalkeeper, 50.0),
        ];
        let t = true_offside(&players, WorldGoal::PlusX, &desired);
        assert_eq!(t.last_defender_id.as_deref(), Some("d"));
        assert!(t.offside_flags["a"]);
        assert!(!t.offside_flags["b"]);
        let t = true_offside(&players, WorldGoal::MinusX, &desired);
        assert!(!t.offside_flags["a"]);

        let only_gk = vec![players[0].clone(), players[3].clone()];
        let t = true_offside(&only_gk, WorldGoal::PlusX, &desired);
        assert!(t.last_defender_id.is_none() && t.offside_flags.is_empty());
    }

    #[test]
    fn sampled_scene_respects_clearance() {
        let params = SamplerParams::default();
        let desired: BTreeSet<u8> = DEFAULT_DESIRED_IDS.into_iter().collect();
        for seed in 0..5 {
            let scene = sample_scene(&params, &PitchSpec::default(), WorldGoal::PlusX, seed).unwrap();
            let n_att = scene.players.iter().filter(|p| p.is_attacker()).count();
            let n_def = scene.players.iter().filter(|p| p.is_defender()).count();
            assert!((3..=8).contains(&n_att) && (3..=8).contains(&n_def));
            let t = true_offside(&scene.players, scene.goal, &desired);
            assert_eq!(t.offside_flags.len(), n_att);
            assert_eq!(scene, sample_scene(&params, &PitchSpec::default(), WorldGoal::PlusX, seed).unwrap());
        }
    }

    #[test]
    fn scene_document_round_trip() {
        let doc = r#"{ "schema": "offside-scene/1", "seed": 4, "frames": 2,
            "sampler": { "width": 320, "height": 180, "focal_px": 250 } }"#;
        let d = load_scene_description(doc).unwrap();
        let scenes = d.scenes().unwrap();
        assert_eq!(scenes.len(), 2);
        assert_eq!(scenes[0].frame_id, "frame_0000");
        let text = serde_json::to_string(&d).unwrap();
        assert_eq!(load_scene_description(&text).unwrap(), d);

        let explicit = r#"{ "schema": "offside-scene/1",
            "camera": { "position": [0, -44, 15], "yaw_deg": 20, "tilt_deg": 20, "focal_px": 250 },
            "players": [ { "player_id": "p", "team": "attacking", "role": "outfield", "ground_xy": [1, 2] } ],
            "sampler": { "width": 320, "height": 180 } }"#;
        let s = load_scene_description(explicit).unwrap().scenes().unwrap();
        assert_eq!(s[0].players[0].keypoint_offsets.len(), 9);
        assert!(load_scene_description(&explicit.replace("offside-scene/1", "x")).is_err());
        assert!(load_scene_description(&explicit.replace("\"seed\"", "\"bogus\"").replace("\"players\"", "\"playerz\"")).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn projection_preserves_collinearity(
            yaw in -80.0f64..80.0, tilt in 5.0f64..60.0,
            p in prop::array::uniform3(-40.0f64..40.0), d in prop::array::uniform3(-1.0f64..1.0),
            s in 0.1f64..5.0,
        ) {
            let cam = Rig { position: [0.0, -80.0, 30.0], yaw_deg: yaw, tilt_deg: tilt, roll_deg: 0.0, focal_px: 800.0 }
                .camera(1280, 720).unwrap();
            let pts: Vec<[f64; 3]> = [0.0, s, 2.0 * s].iter().map(|&k| [p[0] + k * d[0], p[1] + k * d[1], p[2].abs() + k * d[2]]).collect();
            let img: Result<Vec<_>, _> = pts.iter().map(|&q| project(&cam, q)).collect();
            if let Ok(img) = img {
                if let Some(l) = HomogLine::through(img[0], img[2]) {
                    let scale = 1.0 + img.iter().map(|q| q.0.abs().max(q.1.abs())).fold(0.0, f64::max);
                    prop_assert!(l.eval(img[1]).abs() <= 1e-6 * scale);
                }
            }
        }

        #[test]
        fn two_route_consistency(yaw in -80.0f64..80.0, tilt in 5.0f64..60.0, roll in -20.0f64..20.0, x1 in -50.0f64..50.0, x2 in -50.0f64..50.0) {
            prop_assume!((x1 - x2).abs() > 1.0);
            let cam = Rig { position: [3.0, -50.0, 20.0], yaw_deg: yaw, tilt_deg: tilt, roll_deg: roll, focal_px: 900.0 }
                .camera(1280, 720).unwrap();
            if let TrueVp::Point { x, y } = true_vanishing_point(&cam, STRIPE_DIRECTION).unwrap() {
                let line = |k: f64| -> Option<HomogLine> {
                    HomogLine::through(project(&cam, [k, -10.0, 0.0]).ok()?, project(&cam, [k, 30.0, 0.0]).ok()?)
                };
                if let (Some(a), Some(b)) = (line(x1), line(x2)) {
                    let p = intersect(&a, &b);
                    let tol = 1e-6 * (1.0 + x.abs().max(y.abs()));
                    prop_assert!((p.0 - x).abs() <= tol && (p.1 - y).abs() <= tol, "{:?} vs {:?}", p, (x, y));
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let params = SamplerParams { width: 200, height: 120, focal_px: 180.0, ..SamplerParams::default() };
        let scene = sample_scene(&params, &PitchSpec::default(), WorldGoal::PlusX, 11).unwrap();
        let a = scene.render().unwrap();
        let b = scene.render().unwrap();
        assert_eq!(a.frame, b.frame);
        assert_eq!(a.annotations, b.annotations);
        assert_eq!(a.truth, b.truth);
    }
}
