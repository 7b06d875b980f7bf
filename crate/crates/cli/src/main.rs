use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use offside_core::engine::{load_annotations, FrameStatus, VerdictDocument};
use offside_core::io::{encode_png, encode_ppm, load_image};
use offside_core::overlay::draw_line;
use offside_core::pipeline::{detect_lines, load_config, run_pipeline, PipelineConfig, STAGES};
use offside_core::raster::Raster;
use offside_core::synth::load_scene_description;
use offside_core::vanishing::estimate_vanishing_point;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "offside", version, about = "Offside line estimation from a single broadcast camera")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalOpts {
    /// Pipeline config JSON (required for `run` and `offside`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the RANSAC seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Frames processed in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Write overlay images.
    #[arg(long, global = true, overrides_with = "no_overlay")]
    overlay: bool,
    /// Skip overlay images.
    #[arg(long, global = true, overrides_with = "overlay")]
    no_overlay: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Field mask of a frame.
    Segment { input: PathBuf, output: PathBuf },
    /// Frame with the detected stripe lines drawn on it.
    Lines { input: PathBuf, output: PathBuf },
    /// Vanishing point of a frame as JSON.
    Vp { input: PathBuf, output: PathBuf },
    /// Verdict for one frame and its annotation file.
    Offside { frame: PathBuf, annotations: PathBuf, outdir: PathBuf },
    /// Verdicts for an image sequence plus a timing summary.
    Run { framedir: PathBuf, anndir: PathBuf, outdir: PathBuf },
    /// Render a scene description to frames, annotations and ground truth.
    Synth { scene: PathBuf, outdir: PathBuf },
}

/// Failure classes mapped to exit codes.
enum Failure {
    Frame(String),
    Config(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Frame(_) => 1,
            Failure::Config(_) => 2,
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Segment { input, output } => cmd_segment(&cli.global, input, output),
        Command::Lines { input, output } => cmd_lines(&cli.global, input, output),
        Command::Vp { input, output } => cmd_vp(&cli.global, input, output),
        Command::Offside { frame, annotations, outdir } => cmd_offside(&cli.global, frame, annotations, outdir),
        Command::Run { framedir, anndir, outdir } => cmd_run(&cli.global, framedir, anndir, outdir),
        Command::Synth { scene, outdir } => cmd_synth(&cli.global, scene, outdir),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Frame(m) | Failure::Config(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}

fn config(opts: &GlobalOpts, required: bool) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &opts.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("config {}: {e}", path.display())))?;
            load_config(&text).map_err(|e| Failure::Config(format!("config {}: {e}", path.display())))?
        }
        None if required => return Err(Failure::Config("--config is required for this command".into())),
        None => PipelineConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.ransac.seed = seed;
    }
    if opts.overlay {
        cfg.overlay.enabled = true;
    }
    if opts.no_overlay {
        cfg.overlay.enabled = false;
    }
    Ok(cfg)
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), String> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut builder = tempfile::Builder::new();
    // temp files default to 0600; outputs should get the usual umask-filtered mode
    #[cfg(unix)]
    builder.permissions(std::os::unix::fs::PermissionsExt::from_mode(0o644));
    let mut tmp = builder.tempfile_in(dir).map_err(|e| format!("{}: {e}", path.display()))?;
    tmp.write_all(bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    tmp.persist(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn write_image(path: &Path, img: &Raster) -> Result<(), String> {
    let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let bytes = if is_ppm {
        encode_ppm(img)
    } else {
        encode_png(img).map_err(|e| e.to_string())?
    };
    write_atomic(path, &bytes)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn frame_err(context: &str) -> impl Fn(String) -> Failure + '_ {
    move |e| Failure::Frame(format!("{context}: {e}"))
}

fn read_frame(path: &Path) -> Result<Raster, Failure> {
    load_image(path).map_err(|e| Failure::Frame(format!("{}: {e}", path.display())))
}

fn cmd_segment(opts: &GlobalOpts, input: &Path, output: &Path) -> Outcome {
    let cfg = config(opts, false)?;
    let frame = read_frame(input)?;
    let mask = offside_core::segmentation::field_mask(&frame, &cfg.green_range, cfg.min_area_frac)
        .map_err(|e| Failure::Frame(format!("segmentation: {e}")))?;
    let img = Raster::from_fn_gray(mask.width(), mask.height(), |x, y| if mask.get(x, y) { 1.0 } else { 0.0 });
    write_image(output, &img).map_err(frame_err("write"))?;
    println!("field pixels: {}", mask.count());
    Ok(())
}

fn cmd_lines(opts: &GlobalOpts, input: &Path, output: &Path) -> Outcome {
    let cfg = config(opts, false)?;
    let frame = read_frame(input)?;
    let (_, detection) = detect_lines(&frame, &cfg).map_err(|e| Failure::Frame(format!("stage {}: {}", e.stage, e.message)))?;
    let mut img = frame.clone();
    let mut count = 0;
    if let Some(d) = &detection {
        for s in &d.segments {
            draw_line(&mut img, s.p1, s.p2, &[1.0, 0.6, 0.0]);
        }
        for s in &d.stripe_lines {
            draw_line(&mut img, s.p1, s.p2, &[0.0, 1.0, 1.0]);
        }
        count = d.stripe_lines.len();
    }
    write_image(output, &img).map_err(frame_err("write"))?;
    println!("stripe lines: {count}");
    Ok(())
}

#[derive(Serialize)]
struct VpReport {
    vanishing_point: Option<[f64; 2]>,
    inlier_count: usize,
    total_points: usize,
    stripe_lines: usize,
    reason: Option<String>,
}

fn cmd_vp(opts: &GlobalOpts, input: &Path, output: &Path) -> Outcome {
    let cfg = config(opts, false)?;
    let frame = read_frame(input)?;
    let (_, detection) = detect_lines(&frame, &cfg).map_err(|e| Failure::Frame(format!("stage {}: {}", e.stage, e.message)))?;
    let report = match detection {
        None => VpReport { vanishing_point: None, inlier_count: 0, total_points: 0, stripe_lines: 0, reason: Some("no_field".into()) },
        Some(d) => match estimate_vanishing_point(&d.stripe_lines, frame.width(), frame.height(), &cfg.vp_params()) {
            Ok(vp) => VpReport {
                vanishing_point: Some([vp.x, vp.y]),
                inlier_count: vp.inlier_count,
                total_points: vp.total_points,
                stripe_lines: d.stripe_lines.len(),
                reason: None,
            },
            Err(e) => VpReport {
                vanishing_point: None,
                inlier_count: 0,
                total_points: 0,
                stripe_lines: d.stripe_lines.len(),
                reason: Some(format!("no_vanishing_point: {e}")),
            },
        },
    };
    write_json(output, &report).map_err(frame_err("write"))
}

struct FrameOutput {
    verdict: VerdictDocument,
    timings: Vec<offside_core::pipeline::StageTiming>,
}

/// Runs one frame and writes `<stem>.json` (and `<stem>.overlay.png`).
fn process_frame(frame_path: &Path, ann_path: &Path, outdir: &Path, stem: &str, cfg: &PipelineConfig) -> Result<FrameOutput, String> {
    let frame = load_image(frame_path).map_err(|e| format!("frame {stem}: stage load: {}: {e}", frame_path.display()))?;
    let text = fs::read_to_string(ann_path).map_err(|e| format!("frame {stem}: stage load: {}: {e}", ann_path.display()))?;
    let ann = load_annotations(&text).map_err(|e| format!("frame {stem}: stage load: {}: {e}", ann_path.display()))?;
    let result = run_pipeline(&frame, &ann, cfg).map_err(|e| format!("frame {}: stage {}: {}", e.frame_id, e.stage, e.message))?;
    write_json(&outdir.join(format!("{stem}.json")), &result.verdict).map_err(|e| format!("frame {stem}: stage write: {e}"))?;
    if let Some(img) = &result.overlay {
        write_image(&outdir.join(format!("{stem}.overlay.png")), img).map_err(|e| format!("frame {stem}: stage write: {e}"))?;
    }
    Ok(FrameOutput { verdict: result.verdict, timings: result.timings })
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Frame(format!("{}: {e}", dir.display())))
}

fn cmd_offside(opts: &GlobalOpts, frame: &Path, annotations: &Path, outdir: &Path) -> Outcome {
    let cfg = config(opts, true)?;
    let text = fs::read_to_string(annotations).map_err(|e| Failure::Config(format!("{}: {e}", annotations.display())))?;
    load_annotations(&text).map_err(|e| Failure::Config(format!("{}: {e}", annotations.display())))?;
    create_dir(outdir)?;
    let stem = frame.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into());
    let out = process_frame(frame, annotations, outdir, &stem, &cfg).map_err(Failure::Frame)?;
    println!("{}", serde_json::to_string(&out.verdict).expect("verdict serializes"));
    Ok(())
}

#[derive(Serialize)]
struct Percentiles {
    count: usize,
    p50: f64,
    p90: f64,
    p99: f64,
    max: f64,
}

/// Nearest-rank percentiles.
fn percentiles(values: &[f64]) -> Percentiles {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = |p: f64| {
        if v.is_empty() {
            0.0
        } else {
            v[((p * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1]
        }
    };
    Percentiles {
        count: v.len(),
        p50: rank(0.50),
        p90: rank(0.90),
        p99: rank(0.99),
        max: v.last().copied().unwrap_or(0.0),
    }
}

#[derive(Serialize)]
struct FrameSummary {
    frame: String,
    status: String,
    reason: Option<String>,
    timings_ms: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct RunSummary {
    schema: &'static str,
    frames: usize,
    ok: usize,
    undecidable: usize,
    failed: usize,
    failures: Vec<String>,
    stage_timings_ms: BTreeMap<String, Percentiles>,
    total_ms: Percentiles,
    per_frame: Vec<FrameSummary>,
}

fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))?;
    let mut frames: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    frames.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(frames)
}

fn pool(opts: &GlobalOpts) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Failure::Config(format!("thread pool: {e}")))
}

fn cmd_run(opts: &GlobalOpts, framedir: &Path, anndir: &Path, outdir: &Path) -> Outcome {
    let cfg = config(opts, true)?;
    let frames = list_frames(framedir)?;
    create_dir(outdir)?;
    let pool = pool(opts)?;
    let results: Vec<(String, Result<FrameOutput, String>)> = pool.install(|| {
        frames
            .par_iter()
            .map(|path| {
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let ann = anndir.join(format!("{stem}.json"));
                let out = process_frame(path, &ann, outdir, &stem, &cfg);
                (stem, out)
            })
            .collect()
    });

    let mut per_stage: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut totals = Vec::new();
    let mut summary = RunSummary {
        schema: "offside-summary/1",
        frames: results.len(),
        ok: 0,
        undecidable: 0,
        failed: 0,
        failures: Vec::new(),
        stage_timings_ms: BTreeMap::new(),
        total_ms: percentiles(&[]),
        per_frame: Vec::new(),
    };
    for (stem, r) in &results {
        match r {
            Ok(out) => {
                match out.verdict.status {
                    FrameStatus::Ok => summary.ok += 1,
                    FrameStatus::Undecidable => summary.undecidable += 1,
                }
                let mut timings = BTreeMap::new();
                for t in &out.timings {
                    per_stage.entry(t.stage.clone()).or_default().push(t.ms);
                    timings.insert(t.stage.clone(), t.ms);
                }
                totals.push(out.timings.iter().map(|t| t.ms).sum());
                summary.per_frame.push(FrameSummary {
                    frame: stem.clone(),
                    status: match out.verdict.status {
                        FrameStatus::Ok => "ok".into(),
                        FrameStatus::Undecidable => "undecidable".into(),
                    },
                    reason: out.verdict.reason.clone(),
                    timings_ms: timings,
                });
            }
            Err(e) => {
                eprintln!("error: {e}");
                summary.failed += 1;
                summary.failures.push(e.clone());
                summary.per_frame.push(FrameSummary {
                    frame: stem.clone(),
                    status: "error".into(),
                    reason: Some(e.clone()),
                    timings_ms: BTreeMap::new(),
                });
            }
        }
    }
    for stage in STAGES {
        if let Some(v) = per_stage.get(stage) {
            summary.stage_timings_ms.insert(stage.to_string(), percentiles(v));
        }
    }
    summary.total_ms = percentiles(&totals);
    write_json(&outdir.join("summary.json"), &summary).map_err(frame_err("summary"))?;
    println!(
        "frames {} ok {} undecidable {} failed {}; median {:.1} ms/frame",
        summary.frames, summary.ok, summary.undecidable, summary.failed, summary.total_ms.p50
    );
    if summary.failed > 0 {
        return Err(Failure::Frame(format!("{} of {} frames failed", summary.failed, summary.frames)));
    }
    Ok(())
}

fn cmd_synth(opts: &GlobalOpts, scene: &Path, outdir: &Path) -> Outcome {
    let text = fs::read_to_string(scene).map_err(|e| Failure::Config(format!("{}: {e}", scene.display())))?;
    let desc = load_scene_description(&text).map_err(|e| Failure::Config(format!("{}: {e}", scene.display())))?;
    let scenes = desc.scenes().map_err(|e| Failure::Config(format!("{}: {e}", scene.display())))?;
    if let Some(s) = scenes.iter().find(|s| s.frame_id.is_empty() || s.frame_id.contains(['/', '\\']) || s.frame_id.starts_with('.')) {
        return Err(Failure::Config(format!("frame_id {:?} is not a plain file name", s.frame_id)));
    }
    create_dir(outdir)?;
    let written: Result<Vec<()>, String> = pool(opts)?.install(|| {
        scenes
            .par_iter()
            .map(|s| {
                let r = s.render().map_err(|e| format!("frame {}: stage render: {e}", s.frame_id))?;
                let id = &s.frame_id;
                write_image(&outdir.join(format!("{id}.png")), &r.frame)?;
                write_atomic(&outdir.join(format!("{id}.json")), format!("{}\n", r.annotations.to_json()).as_bytes())?;
                write_json(&outdir.join(format!("{id}.truth.json")), &r.truth)
            })
            .collect()
    });
    written.map_err(Failure::Frame)?;
    println!("rendered {} frame(s) into {}", scenes.len(), outdir.display());
    Ok(())
}
