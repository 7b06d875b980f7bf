//! Offside geometry on the image plane.
//!
//! Player keypoints arrive as annotation documents (team and role labels
//! included). Every relevant keypoint gets a virtual line through the
//! vanishing point; lines are ordered along the field by `x_bottom`, the
//! column where they cross the bottom image row.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vanishing::HomogLine;

pub const SCHEMA: &str = "offside/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("player {player_id} has keypoint {id} more than once")]
    DuplicateKeypoint { player_id: String, id: u8 },
    #[error("player id {0} appears more than once")]
    DuplicatePlayer(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("keypoint {keypoint_id} of {player_id} coincides with the vanishing point")]
    KeypointAtVanishingPoint { player_id: String, keypoint_id: u8 },
    #[error("no defending outfield player has a virtual line")]
    NoDefenders,
    #[error("empty line set")]
    EmptyLineSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Team {
    Attacking,
    Defending,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Outfield,
    Goalkeeper,
    Referee,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub id: u8,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerAnnotation {
    pub player_id: String,
    pub team: Team,
    pub role: Role,
    pub det_score: f64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub keypoints: Vec<Keypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotations {
    pub frame_id: String,
    pub players: Vec<PlayerAnnotation>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationDoc {
    schema: String,
    #[serde(flatten)]
    frame: FrameAnnotations,
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl FrameAnnotations {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let schema = |m: String| Err(AnnotationError::Schema(m));
        let mut ids = HashSet::new();
        for p in &self.players {
            if !ids.insert(p.player_id.as_str()) {
                return Err(AnnotationError::DuplicatePlayer(p.player_id.clone()));
            }
            if !unit(p.det_score) {
                return schema(format!("{}: det_score {} outside [0, 1]", p.player_id, p.det_score));
            }
            if p.role == Role::Referee && p.team != Team::Neutral {
                return schema(format!("{}: referees must be on the neutral team", p.player_id));
            }
            if p.bbox.iter().any(|v| !v.is_finite()) || p.bbox[2] < 0.0 || p.bbox[3] < 0.0 {
                return schema(format!("{}: bbox must be finite with w, h >= 0", p.player_id));
            }
            if p.keypoints.len() > 17 {
                return schema(format!("{}: more than 17 keypoints", p.player_id));
            }
            let mut seen = 0u32;
            for k in &p.keypoints {
                if k.id > 16 {
                    return schema(format!("{}: keypoint id {} outside 0..=16", p.player_id, k.id));
                }
                if !unit(k.confidence) {
                    return schema(format!(
                        "{}: keypoint {} confidence {} outside [0, 1]",
                        p.player_id, k.id, k.confidence
                    ));
                }
                if !k.x.is_finite() || !k.y.is_finite() {
                    return schema(format!("{}: keypoint {} is not finite", p.player_id, k.id));
                }
                if seen & (1 << k.id) != 0 {
                    return Err(AnnotationError::DuplicateKeypoint {
                        player_id: p.player_id.clone(),
                        id: k.id,
                    });
                }
                seen |= 1 << k.id;
            }
        }
        Ok(())
    }

    pub fn player(&self, id: &str) -> Option<&PlayerAnnotation> {
        self.players.iter().find(|p| p.player_id == id)
    }

    pub fn to_json(&self) -> String {
        let doc = AnnotationDoc {
            schema: SCHEMA.to_string(),
            frame: self.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("annotations serialize")
    }
}

/// Parses and validates an annotation document. Unknown fields are ignored.
pub fn load_annotations(document: &str) -> Result<FrameAnnotations, AnnotationError> {
    let doc: AnnotationDoc =
        serde_json::from_str(document).map_err(|e| AnnotationError::Schema(e.to_string()))?;
    if doc.schema != SCHEMA {
        return Err(AnnotationError::Schema(format!(
            "expected schema {SCHEMA:?}, got {:?}",
            doc.schema
        )));
    }
    doc.frame.validate()?;
    Ok(doc.frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalSide {
    Left,
    Right,
}

impl GoalSide {
    /// Larger is further toward the goal.
    pub fn toward(self, x: f64) -> f64 {
        match self {
            GoalSide::Right => x,
            GoalSide::Left => -x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    MinAbsSlope,
    BottomIntercept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub goal_side: GoalSide,
    pub det_thresh: f64,
    pub kp_thresh: f64,
    pub desired_ids: BTreeSet<u8>,
    pub selection_mode: SelectionMode,
}

/// Shoulders, knees and ankles in the COCO-17 layout.
pub const DEFAULT_DESIRED_IDS: [u8; 6] = [5, 6, 13, 14, 15, 16];

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            goal_side: GoalSide::Right,
            det_thresh: 0.7,
            kp_thresh: 0.5,
            desired_ids: DEFAULT_DESIRED_IDS.into_iter().collect(),
            selection_mode: SelectionMode::BottomIntercept,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.desired_ids.is_empty() || self.desired_ids.iter().any(|&i| i > 16) {
            return Err("desired_ids must be a non-empty subset of 0..=16".into());
        }
        if !unit(self.det_thresh) || !unit(self.kp_thresh) {
            return Err("thresholds must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Detection threshold, then keypoint threshold and id filter; players left
/// without keypoints are dropped.
pub fn filter_annotations(ann: &FrameAnnotations, cfg: &EngineConfig) -> FrameAnnotations {
    let players = ann
        .players
        .iter()
        .filter(|p| p.det_score >= cfg.det_thresh)
        .filter_map(|p| {
            let keypoints: Vec<Keypoint> = p
                .keypoints
                .iter()
                .filter(|k| k.confidence >= cfg.kp_thresh && cfg.desired_ids.contains(&k.id))
                .copied()
                .collect();
            (!keypoints.is_empty()).then(|| PlayerAnnotation {
                keypoints,
                ..p.clone()
            })
        })
        .collect();
    FrameAnnotations {
        frame_id: ann.frame_id.clone(),
        players,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slope {
    Finite(f64),
    Vertical,
}

impl Slope {
    pub fn abs(self) -> f64 {
        match self {
            Slope::Finite(s) => s.abs(),
            Slope::Vertical => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualLine {
    pub owner: String,
    pub keypoint_id: u8,
    pub keypoint: (f64, f64),
    pub line: HomogLine,
    pub slope: Slope,
    /// Column where the line meets the bottom row; ±∞ for horizontal lines.
    pub x_bottom: f64,
}

const AT_VP: f64 = 1e-9;

/// The virtual line from `vp` through one keypoint.
pub fn virtual_line(
    vp: (f64, f64),
    owner: &str,
    kp: &Keypoint,
    frame_height: usize,
) -> Result<VirtualLine, EngineError> {
    let (dx, dy) = (kp.x - vp.0, kp.y - vp.1);
    if dx.abs() < AT_VP && dy.abs() < AT_VP {
        return Err(EngineError::KeypointAtVanishingPoint {
            player_id: owner.to_string(),
            keypoint_id: kp.id,
        });
    }
    let line = HomogLine::through(vp, (kp.x, kp.y)).expect("distinct points");
    let slope = if dx.abs() < AT_VP {
        Slope::Vertical
    } else {
        Slope::Finite(dy / dx)
    };
    let x_bottom = if line.a == 0.0 {
        if dx > 0.0 {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        line.x_at(frame_height as f64 - 1.0)
    };
    Ok(VirtualLine {
        owner: owner.to_string(),
        keypoint_id: kp.id,
        keypoint: (kp.x, kp.y),
        line,
        slope,
        x_bottom,
    })
}

/// One virtual line per (player, keypoint) of already-filtered annotations.
pub fn lines_through_keypoints(
    vp: (f64, f64),
    ann: &FrameAnnotations,
    frame_height: usize,
) -> Result<Vec<VirtualLine>, EngineError> {
    ann.players
        .iter()
        .flat_map(|p| p.keypoints.iter().map(move |k| (p, k)))
        .map(|(p, k)| virtual_line(vp, &p.player_id, k, frame_height))
        .collect()
}

fn is_defender(p: &PlayerAnnotation) -> bool {
    p.team == Team::Defending && p.role == Role::Outfield
}

/// Lines of the defending outfield player whose extreme `x_bottom` lies
/// furthest toward the goal. Goalkeepers are ignored.
pub fn last_defender_lines(
    lines: &[VirtualLine],
    ann: &FrameAnnotations,
    cfg: &EngineConfig,
) -> Result<Vec<VirtualLine>, EngineError> {
    let defenders: HashSet<&str> = ann
        .players
        .iter()
        .filter(|p| is_defender(p))
        .map(|p| p.player_id.as_str())
        .collect();
    let mut extreme: BTreeMap<&str, f64> = BTreeMap::new();
    for l in lines.iter().filter(|l| defenders.contains(l.owner.as_str())) {
        let v = cfg.goal_side.toward(l.x_bottom);
        extreme
            .entry(l.owner.as_str())
            .and_modify(|e| *e = e.max(v))
            .or_insert(v);
    }
    // BTreeMap order makes ties resolve to the smallest player id
    let owner = extreme
        .iter()
        .fold(None::<(&str, f64)>, |best, (&id, &v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((id, v)),
        })
        .map(|(id, _)| id.to_string())
        .ok_or(EngineError::NoDefenders)?;
    Ok(lines.iter().filter(|l| l.owner == owner).cloned().collect())
}

/// Picks the offside line from one owner's lines.
///
/// `MinAbsSlope` takes the smallest |slope| (vertical counts as ∞), ties
/// going to the line further toward goal. `BottomIntercept` takes the line
/// furthest toward goal, ties going to the smaller |slope|. Remaining ties
/// fall to the lower keypoint id, so the result ignores input order.
pub fn select_offside_line(lines: &[VirtualLine], cfg: &EngineConfig) -> Result<VirtualLine, EngineError> {
    let goal = |l: &VirtualLine| cfg.goal_side.toward(l.x_bottom);
    let better = |a: &VirtualLine, b: &VirtualLine| -> bool {
        let (sa, sb) = (a.slope.abs(), b.slope.abs());
        let ord = match cfg.selection_mode {
            SelectionMode::MinAbsSlope => sb.total_cmp(&sa).then(goal(a).total_cmp(&goal(b))),
            SelectionMode::BottomIntercept => goal(a).total_cmp(&goal(b)).then(sb.total_cmp(&sa)),
        };
        ord.then(b.keypoint_id.cmp(&a.keypoint_id)).then(b.owner.cmp(&a.owner)).is_gt()
    };
    lines
        .iter()
        .fold(None::<&VirtualLine>, |best, l| match best {
            Some(b) if !better(l, b) => Some(b),
            _ => Some(l),
        })
        .cloned()
        .ok_or(EngineError::EmptyLineSet)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Onside,
    Offside,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerVerdict {
    pub player_id: String,
    pub status: VerdictStatus,
    /// Signed pixels along the bottom row; positive is beyond the offside
    /// line toward goal. `None` for players the rule does not apply to.
    pub margin_px: Option<f64>,
}

/// Verdicts for every player. Attacking outfield players are offside when
/// any relevant keypoint's line lies strictly beyond the offside line;
/// exactly level is onside.
pub fn classify_attackers(
    vp: (f64, f64),
    offside_line: &VirtualLine,
    ann: &FrameAnnotations,
    cfg: &EngineConfig,
    frame_height: usize,
) -> Vec<PlayerVerdict> {
    let reference = cfg.goal_side.toward(offside_line.x_bottom);
    ann.players
        .iter()
        .map(|p| {
            if p.team != Team::Attacking || p.role != Role::Outfield {
                return PlayerVerdict {
                    player_id: p.player_id.clone(),
                    status: VerdictStatus::NotApplicable,
                    margin_px: None,
                };
            }
            let margin = p
                .keypoints
                .iter()
                .filter(|k| cfg.desired_ids.contains(&k.id))
                .filter_map(|k| virtual_line(vp, &p.player_id, k, frame_height).ok())
                .map(|l| cfg.goal_side.toward(l.x_bottom) - reference)
                .fold(None::<f64>, |m, v| Some(m.map_or(v, |m| m.max(v))));
            match margin {
                Some(m) => PlayerVerdict {
                    player_id: p.player_id.clone(),
                    status: if m > 0.0 {
                        VerdictStatus::Offside
                    } else {
                        VerdictStatus::Onside
                    },
                    margin_px: Some(m),
                },
                None => PlayerVerdict {
                    player_id: p.player_id.clone(),
                    status: VerdictStatus::NotApplicable,
                    margin_px: None,
                },
            }
        })
        .collect()
}

/// Everything the engine derives for one frame with a known vanishing point.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub lines: Vec<VirtualLine>,
    pub defender_lines: Vec<VirtualLine>,
    pub offside_line: VirtualLine,
    pub verdicts: Vec<PlayerVerdict>,
}

/// Filter, build lines, pick the last defender and classify.
pub fn decide(
    vp: (f64, f64),
    ann: &FrameAnnotations,
    cfg: &EngineConfig,
    frame_height: usize,
) -> Result<Decision, EngineError> {
    let ann = filter_annotations(ann, cfg);
    let lines = lines_through_keypoints(vp, &ann, frame_height)?;
    let defender_lines = last_defender_lines(&lines, &ann, cfg)?;
    let offside_line = select_offside_line(&defender_lines, cfg)?;
    let verdicts = classify_attackers(vp, &offside_line, &ann, cfg, frame_height);
    Ok(Decision {
        lines,
        defender_lines,
        offside_line,
        verdicts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameStatus {
    Ok,
    Undecidable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsideLineDoc {
    pub owner: String,
    pub keypoint_id: u8,
    pub x_bottom: f64,
}

/// Per-frame output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictDocument {
    pub schema: String,
    pub frame_id: String,
    pub status: FrameStatus,
    /// Why the frame is undecidable (`no_field`, `no_vanishing_point`, `no_defenders`).
    pub reason: Option<String>,
    pub vanishing_point: Option<[f64; 2]>,
    pub offside_line: Option<OffsideLineDoc>,
    pub verdicts: Vec<PlayerVerdict>,
}

impl VerdictDocument {
    pub fn undecidable(frame_id: &str, reason: &str, vp: Option<(f64, f64)>) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            frame_id: frame_id.to_string(),
            status: FrameStatus::Undecidable,
            reason: Some(reason.to_string()),
            vanishing_point: vp.map(|(x, y)| [x, y]),
            offside_line: None,
            verdicts: vec![],
        }
    }

    pub fn from_decision(frame_id: &str, vp: (f64, f64), d: &Decision) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            frame_id: frame_id.to_string(),
            status: FrameStatus::Ok,
            reason: None,
            vanishing_point: Some([vp.0, vp.1]),
            offside_line: Some(OffsideLineDoc {
                owner: d.offside_line.owner.clone(),
                keypoint_id: d.offside_line.keypoint_id,
                x_bottom: d.offside_line.x_bottom,
            }),
            verdicts: d.verdicts.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("verdict serializes")
    }

    pub fn status_of(&self, player_id: &str) -> Option<VerdictStatus> {
        self.verdicts
            .iter()
            .find(|v| v.player_id == player_id)
            .map(|v| v.status)
    }
}

/// Engine verdict for a frame given an optional vanishing point.
pub fn verdict_for(
    frame_id: &str,
    vp: Option<(f64, f64)>,
    ann: &FrameAnnotations,
    cfg: &EngineConfig,
    frame_height: usize,
) -> Result<VerdictDocument, EngineError> {
    let Some(vp) = vp else {
        return Ok(VerdictDocument::undecidable(frame_id, "no_vanishing_point", None));
    };
    match decide(vp, ann, cfg, frame_height) {
        Ok(d) => Ok(VerdictDocument::from_decision(frame_id, vp, &d)),
        Err(EngineError::NoDefenders) => Ok(VerdictDocument::undecidable(frame_id, "no_defenders", Some(vp))),
        Err(e) => Err(e),
    }
}
