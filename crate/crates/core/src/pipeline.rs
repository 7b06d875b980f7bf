//! Per-frame composition of every stage, driven by one config document.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, EngineConfig, EngineError, FrameAnnotations, PlayerAnnotation, VerdictDocument, VirtualLine};
use crate::lines::{self, AngleWindow, CannyParams, HoughParams, LineConfig, LineDetection, Segment, StripePlaneParams};
use crate::overlay::{draw_overlay, OverlayConfig};
use crate::raster::Raster;
use crate::segmentation::{self, BinaryMask, GreenRange};
use crate::vanishing::{self, RansacParams, VanishingPoint, VpError, VpParams};

pub const CONFIG_SCHEMA: &str = "offside-config/1";

/// Stage names, in execution order.
pub const STAGES: [&str; 7] = ["segmentation", "stripe_plane", "edges", "lines", "vanishing_point", "engine", "overlay"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema: String,
    #[serde(default)]
    pub green_range: GreenRange,
    #[serde(default = "default_min_area_frac")]
    pub min_area_frac: f64,
    #[serde(default)]
    pub canny: CannyParams,
    #[serde(default)]
    pub hough: HoughParams,
    #[serde(default)]
    pub angle_window: AngleWindow,
    #[serde(default)]
    pub stripe_plane: StripePlaneParams,
    #[serde(default)]
    pub ransac: RansacParams,
    #[serde(default = "default_parallel_eps")]
    pub parallel_eps: f64,
    #[serde(default = "default_max_distance_diag")]
    pub max_distance_diag: f64,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub overlay: OverlayConfig,
}

fn default_min_area_frac() -> f64 {
    0.01
}

fn default_parallel_eps() -> f64 {
    VpParams::default().parallel_eps
}

fn default_max_distance_diag() -> f64 {
    VpParams::default().max_distance_diag
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.into(),
            green_range: GreenRange::default(),
            min_area_frac: default_min_area_frac(),
            canny: CannyParams::default(),
            hough: HoughParams::default(),
            angle_window: AngleWindow::default(),
            stripe_plane: StripePlaneParams::default(),
            ransac: RansacParams::default(),
            parallel_eps: default_parallel_eps(),
            max_distance_diag: default_max_distance_diag(),
            engine: EngineConfig::default(),
            overlay: OverlayConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn line_config(&self) -> LineConfig {
        LineConfig {
            canny: self.canny,
            hough: self.hough,
            angle: self.angle_window,
            stripe: self.stripe_plane,
        }
    }

    pub fn vp_params(&self) -> VpParams {
        VpParams {
            ransac: self.ransac,
            parallel_eps: self.parallel_eps,
            max_distance_diag: self.max_distance_diag,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: String| ConfigError::Invalid(e);
        if self.schema != CONFIG_SCHEMA {
            return Err(invalid(format!("expected schema {CONFIG_SCHEMA:?}, got {:?}", self.schema)));
        }
        self.green_range.validate().map_err(|e| invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.min_area_frac) {
            return Err(invalid("min_area_frac must lie in [0, 1]".into()));
        }
        self.line_config().validate().map_err(|e| invalid(e.to_string()))?;
        self.ransac.validate().map_err(|e| invalid(e.to_string()))?;
        if !(self.parallel_eps >= 0.0 && self.max_distance_diag > 0.0) {
            return Err(invalid("parallel_eps must be >= 0 and max_distance_diag > 0".into()));
        }
        self.engine.validate().map_err(invalid)?;
        Ok(())
    }
}

/// Parses and validates a config document; unknown keys are rejected.
pub fn load_config(document: &str) -> Result<PipelineConfig, ConfigError> {
    let cfg: PipelineConfig = serde_json::from_str(document).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("frame {frame_id}: stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub frame_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub ms: f64,
}

#[derive(Debug, Clone)]
pub struct FrameResult {
    pub frame_id: String,
    pub timings: Vec<StageTiming>,
    pub verdict: VerdictDocument,
    pub mask: Option<BinaryMask>,
    /// Angle-filtered stripe lines fed to the vanishing-point stage.
    pub stripe_lines: Vec<Segment>,
    pub vanishing_point: Option<VanishingPoint>,
    /// Filtered annotations the engine worked on.
    pub players: Vec<PlayerAnnotation>,
    pub virtual_lines: Vec<VirtualLine>,
    pub offside_line: Option<VirtualLine>,
    pub overlay: Option<Raster>,
}

impl FrameResult {
    pub fn total_ms(&self) -> f64 {
        self.timings.iter().map(|t| t.ms).sum()
    }
}

struct Clock {
    timings: Vec<StageTiming>,
}

impl Clock {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.push(StageTiming {
            stage: stage.to_string(),
            ms: start.elapsed().as_secs_f64() * 1e3,
        });
        out
    }
}

/// Field mask and, when the field is non-empty, the detected lines.
pub fn detect_lines(frame: &Raster, cfg: &PipelineConfig) -> Result<(BinaryMask, Option<LineDetection>), PipelineError> {
    let fail = |stage: &'static str, e: &dyn std::fmt::Display| PipelineError {
        stage,
        frame_id: String::new(),
        message: e.to_string(),
    };
    let mask = segmentation::field_mask(frame, &cfg.green_range, cfg.min_area_frac).map_err(|e| fail("segmentation", &e))?;
    if mask.is_empty() {
        return Ok((mask, None));
    }
    let line_cfg = cfg.line_config();
    let masked = segmentation::apply_mask(frame, &mask).map_err(|e| fail("stripe_plane", &e))?;
    let plane = lines::stripe_plane(&masked, &mask, &line_cfg.stripe).map_err(|e| fail("stripe_plane", &e))?;
    let edges = lines::stripe_edges(&plane, &mask, &line_cfg).map_err(|e| fail("edges", &e))?;
    let detection = lines::lines_from_edges(edges, &line_cfg).map_err(|e| fail("lines", &e))?;
    Ok((mask, Some(detection)))
}

/// Runs every stage on one frame. Degenerate outcomes (no field, no
/// vanishing point, no defenders) end the frame as undecidable with the
/// artifacts computed so far.
pub fn run_pipeline(frame: &Raster, annotations: &FrameAnnotations, cfg: &PipelineConfig) -> Result<FrameResult, PipelineError> {
    let frame_id = annotations.frame_id.clone();
    let fail = |stage: &'static str| {
        let frame_id = frame_id.clone();
        move |e: &dyn std::fmt::Display| PipelineError {
            stage,
            frame_id: frame_id.clone(),
            message: e.to_string(),
        }
    };
    let mut clock = Clock { timings: Vec::new() };
    let mut result = FrameResult {
        frame_id: frame_id.clone(),
        timings: Vec::new(),
        verdict: VerdictDocument::undecidable(&frame_id, "no_field", None),
        mask: None,
        stripe_lines: Vec::new(),
        vanishing_point: None,
        players: Vec::new(),
        virtual_lines: Vec::new(),
        offside_line: None,
        overlay: None,
    };

    let mask = clock
        .time("segmentation", || segmentation::field_mask(frame, &cfg.green_range, cfg.min_area_frac))
        .map_err(|e| fail("segmentation")(&e))?;
    let has_field = !mask.is_empty();
    result.mask = Some(mask);

    if has_field {
        let line_cfg = cfg.line_config();
        let mask = result.mask.as_ref().expect("set above");
        let plane = clock
            .time("stripe_plane", || {
                let masked = segmentation::apply_mask(frame, mask).map_err(|e| e.to_string())?;
                lines::stripe_plane(&masked, mask, &line_cfg.stripe).map_err(|e| e.to_string())
            })
            .map_err(|e| fail("stripe_plane")(&e))?;
        let edges = clock
            .time("edges", || lines::stripe_edges(&plane, mask, &line_cfg))
            .map_err(|e| fail("edges")(&e))?;
        let detection = clock
            .time("lines", || lines::lines_from_edges(edges, &line_cfg))
            .map_err(|e| fail("lines")(&e))?;
        result.stripe_lines = detection.stripe_lines;

        let vp = clock.time("vanishing_point", || {
            vanishing::estimate_vanishing_point(&result.stripe_lines, frame.width(), frame.height(), &cfg.vp_params())
        });
        match vp {
            Ok(vp) => result.vanishing_point = Some(vp),
            Err(VpError::NoVanishingPoint | VpError::TooFewLines(_) | VpError::TooFewPoints(_)) => {
                result.verdict = VerdictDocument::undecidable(&frame_id, "no_vanishing_point", None);
            }
            Err(e) => return Err(fail("vanishing_point")(&e)),
        }

        if let Some(vp) = result.vanishing_point {
            let p = (vp.x, vp.y);
            let (filtered, decision) = clock.time("engine", || {
                let filtered = engine::filter_annotations(annotations, &cfg.engine);
                let decision = engine::decide(p, annotations, &cfg.engine, frame.height());
                (filtered, decision)
            });
            match decision {
                Ok(d) => {
                    result.verdict = VerdictDocument::from_decision(&frame_id, p, &d);
                    result.virtual_lines = d.lines;
                    result.offside_line = Some(d.offside_line);
                }
                Err(EngineError::NoDefenders) => {
                    result.verdict = VerdictDocument::undecidable(&frame_id, "no_defenders", Some(p));
                    result.virtual_lines = engine::lines_through_keypoints(p, &filtered, frame.height()).unwrap_or_default();
                }
                Err(e) => return Err(fail("engine")(&e)),
            }
            result.players = filtered.players;
        }
    }

    if cfg.overlay.enabled {
        let overlay = clock.time("overlay", || draw_overlay(frame, &result, &cfg.overlay));
        result.overlay = Some(overlay);
    }
    result.timings = clock.timings;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::FrameStatus;

    #[test]
    fn config_defaults_and_rejection() {
        let cfg = load_config(r#"{ "schema": "offside-config/1" }"#).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert!(matches!(load_config(r#"{ "schema": "offside-config/1", "bogus": 1 }"#), Err(ConfigError::Parse(_))));
        assert!(matches!(load_config(r#"{ "schema": "offside-config/2" }"#), Err(ConfigError::Invalid(_))));
        assert!(load_config(r#"{ "schema": "offside-config/1", "canny": { "sigma": 1, "t_low": 0.5, "t_high": 0.1 } }"#).is_err());
        assert!(load_config(r#"{ "schema": "offside-config/1", "hough": { "votes_min": 5, "extra": 1 } }"#).is_err());
        assert!(load_config(r#"{ "schema": "offside-config/1", "engine": { "desired_ids": [] } }"#).is_err());
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(load_config(&text).unwrap(), cfg);
    }

    #[test]
    fn gray_frame_has_no_field() {
        let frame = Raster::filled(64, 48, &[0.5, 0.5, 0.5]).unwrap();
        let ann = FrameAnnotations { frame_id: "g".into(), players: vec![] };
        let r = run_pipeline(&frame, &ann, &PipelineConfig::default()).unwrap();
        assert_eq!(r.verdict.status, FrameStatus::Undecidable);
        assert_eq!(r.verdict.reason.as_deref(), Some("no_field"));
        assert!(r.timings.iter().all(|t| t.ms >= 0.0));
    }

    #[test]
    fn non_rgb_frame_names_the_stage() {
        let frame = Raster::filled(8, 8, &[0.5]).unwrap();
        let ann = FrameAnnotations { frame_id: "x".into(), players: vec![] };
        let e = run_pipeline(&frame, &ann, &PipelineConfig::default()).unwrap_err();
        assert_eq!(e.stage, "segmentation");
        assert_eq!(e.frame_id, "x");
    }
}
