//! `chimptrack`: generate synthetic scenes, run the toy model and the
//! tracker, evaluate predictions and run the built-in self-checks.
//!
//! Exit codes: 0 success, 1 self-check failure, 2 input or I/O error,
//! 3 sequences that cannot be paired between gt and predictions.

use std::collections::BTreeMap;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use chimptrack_core::dataio::{
    parse_annotations, parse_detections, parse_video, read_mot_csv, read_text, write_mot_csv, write_text, DetectionFrame,
    DetectionRecord, DetectionsFile, SequenceAnnotation, NUM_BEHAVIORS, SCHEMA_VERSION,
};
use chimptrack_core::evaluate::{evaluate, pair_sequences, preds_from_detections, EvalError, EvalOptions, PredBox, SequenceInput};
use chimptrack_core::geometry::ImageSize;
use chimptrack_core::kernels::{emit_detections, toy_forward, ModelDims, ModelParams, VideoTensor};
use chimptrack_core::report::Task;
use chimptrack_core::selfcheck::{run_all, SelfcheckOptions};
use chimptrack_core::synth::{default_sequence_id, generate, perturb, Layout, NoiseConfig, SceneConfig};
use chimptrack_core::tracker::{run, TrackInput, TrackerConfig};

const EXIT_SELFCHECK: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_PAIRING: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "chimptrack", version, about = "Multi-animal detection, tracking and behavior evaluation toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; never changes any emitted number.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Model dims: `desk`, `full`, or overrides such as `T=8,Q=20`.
    #[arg(long, global = true, default_value = "desk")]
    dims: String,
    /// Minimum IoU for a detection to join a track.
    #[arg(long, global = true, default_value_t = 0.3)]
    iou_gate: f64,
    /// Class confidence threshold for emitted and tracked detections.
    #[arg(long, global = true, default_value_t = 0.3)]
    cls_thresh: f64,
    /// Behavior probability threshold for active behaviors.
    #[arg(long, global = true, default_value_t = 0.3)]
    beh_thresh: f64,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Associate high-confidence detections first, then low-confidence ones.
    #[arg(long, global = true)]
    two_stage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes with ground truth and noisy detections.
    Synth(SynthArgs),
    /// Link detections into tracks.
    Track(TrackArgs),
    /// Score predictions against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the oracle suites.
    Selfcheck(SelfcheckArgs),
    /// Run the toy model over a video tensor.
    Forward(ForwardArgs),
    /// Write seeded model parameters.
    Params(ParamsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LayoutArg {
    Random,
    Lanes,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    agents: usize,
    #[arg(long, default_value_t = 200)]
    frames: u64,
    /// Number of scenes; scene `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    scenes: u64,
    #[arg(long, value_enum, default_value_t = LayoutArg::Random)]
    layout: LayoutArg,
    #[arg(long, default_value_t = NoiseConfig::moderate().jitter_sigma)]
    jitter: f64,
    #[arg(long, default_value_t = NoiseConfig::moderate().fn_rate)]
    fn_rate: f64,
    #[arg(long, default_value_t = NoiseConfig::moderate().fp_rate)]
    fp_rate: f64,
    #[arg(long, default_value_t = NoiseConfig::moderate().id_swap_rate)]
    swap_rate: f64,
    #[arg(long, default_value_t = NoiseConfig::moderate().conf_noise)]
    conf_noise: f64,
}

#[derive(Debug, Args)]
struct TrackArgs {
    /// Detections JSON.
    #[arg(long)]
    det: PathBuf,
    /// Output path; `.json` writes tracked detections, anything else MOT CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = TrackerConfig::default().min_hits)]
    min_hits: u32,
    #[arg(long, default_value_t = TrackerConfig::default().max_misses)]
    max_misses: u32,
    #[arg(long, default_value_t = TrackerConfig::default().high_conf)]
    high_conf: f64,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    task: Task,
    /// Annotation files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    /// Detections JSON or MOT CSV files, or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    pred: Vec<PathBuf>,
    /// JSON sidecar path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "chimptrack")]
    method: String,
    /// Score behaviors on gt boxes.
    #[arg(long)]
    gt_boxes: bool,
}

#[derive(Debug, Args)]
struct SelfcheckArgs {
    /// Parameter file to validate and run the shape contract on.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Write the JSON summary here.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ForwardArgs {
    /// Video tensor JSON.
    #[arg(long)]
    video: PathBuf,
    /// Parameter file; seeded random parameters when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Sequence id of the output; defaults to the video file stem.
    #[arg(long)]
    sequence_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Random,
    Averaging,
}

#[derive(Debug, Args)]
struct ParamsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    init: InitArg,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let pairing = e.chain().any(|c| matches!(c.downcast_ref::<EvalError>(), Some(EvalError::Pairing { .. })));
            ExitCode::from(if pairing { EXIT_PAIRING } else { EXIT_INPUT })
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => synth(g, a),
        Command::Track(a) => track(g, a),
        Command::Evaluate(a) => evaluate_cmd(g, a),
        Command::Selfcheck(a) => selfcheck(g, a),
        Command::Forward(a) => forward(g, a),
        Command::Params(a) => params(g, a),
    }
}

fn color_enabled() -> bool {
    std::env::var_os("CHIMPTRACK_NO_COLOR").is_none() && std::io::stdout().is_terminal()
}

fn paint(text: &str, code: &str) -> String {
    if color_enabled() {
        format!("\x1b[{code}m{text}\x1b[0m")
    } else {
        text.to_string()
    }
}

fn pool(workers: u64) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers as usize).build().context("starting worker pool")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

// ---------------------------------------------------------------- synth

struct SceneFiles {
    sequence_id: String,
    annotation: String,
    clean: String,
    noisy: String,
    boxes: usize,
    detections: usize,
}

fn synth(g: &Global, a: &SynthArgs) -> Result<ExitCode> {
    let noise = NoiseConfig {
        jitter_sigma: a.jitter,
        fn_rate: a.fn_rate,
        fp_rate: a.fp_rate,
        id_swap_rate: a.swap_rate,
        conf_noise: a.conf_noise,
    };
    noise.validate()?;
    let layout = match a.layout {
        LayoutArg::Random => Layout::Random,
        LayoutArg::Lanes => Layout::Lanes,
    };
    let base = SceneConfig { agents: a.agents, frames: a.frames, layout, ..SceneConfig::default() };
    base.validate()?;
    ensure_dir(&a.out)?;

    let one = |i: u64| -> Result<SceneFiles> {
        let seed = g.seed.wrapping_add(i);
        let scene = generate(&SceneConfig { seed, ..base.clone() })?;
        let noisy = perturb(&scene.clean, &noise, seed)?;
        Ok(SceneFiles {
            sequence_id: scene.annotation.sequence_id.clone(),
            annotation: scene.annotation.to_json(),
            clean: scene.clean.to_json(),
            noisy: noisy.to_json(),
            boxes: scene.annotation.box_count(),
            detections: noisy.frames.iter().map(|f| f.detections.len()).sum(),
        })
    };
    let scenes: Vec<SceneFiles> = pool(g.workers)?.install(|| (0..a.scenes).into_par_iter().map(one).collect::<Result<_>>())?;

    let single = scenes.len() == 1;
    for s in &scenes {
        let (ann, clean, noisy) = if single {
            (a.out.join("annotations.json"), a.out.join("detections_clean.json"), a.out.join("detections.json"))
        } else {
            for sub in ["annotations", "detections_clean", "detections"] {
                ensure_dir(&a.out.join(sub))?;
            }
            let name = format!("{}.json", s.sequence_id);
            (a.out.join("annotations").join(&name), a.out.join("detections_clean").join(&name), a.out.join("detections").join(&name))
        };
        write_text(&ann, &s.annotation)?;
        write_text(&clean, &s.clean)?;
        write_text(&noisy, &s.noisy)?;
    }
    println!("seed {}", g.seed);
    for s in &scenes {
        println!("{}: {} agents, {} frames, {} annotated boxes, {} noisy detections", s.sequence_id, a.agents, a.frames, s.boxes, s.detections);
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- track

fn read_detections_or_empty(path: &Path) -> Result<DetectionsFile> {
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Ok(DetectionsFile {
            schema_version: SCHEMA_VERSION,
            sequence_id: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            image_size: ImageSize { width: 1, height: 1 },
            frames: Vec::new(),
        });
    }
    DetectionsFile::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn track(g: &Global, a: &TrackArgs) -> Result<ExitCode> {
    let cfg = TrackerConfig {
        iou_gate: g.iou_gate,
        two_stage: g.two_stage,
        min_hits: a.min_hits,
        max_misses: a.max_misses,
        high_conf: a.high_conf,
        ..TrackerConfig::default()
    };
    cfg.validate()?;
    let dets = read_detections_or_empty(&a.det)?;
    let frames: Vec<(u64, Vec<TrackInput>)> = dets
        .frames
        .iter()
        .map(|fr| {
            let inputs = fr
                .detections
                .iter()
                .filter(|d| d.class_conf >= g.cls_thresh)
                .map(|d| TrackInput { bbox: d.bbox(), conf: d.class_conf, behaviors: Some(d.behavior_scores.clone()), pose: d.keypoints() })
                .collect();
            (fr.frame, inputs)
        })
        .collect();
    let tracks = run(&frames, &cfg)?;

    let is_json = a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let mut by_frame: BTreeMap<u64, Vec<DetectionRecord>> = BTreeMap::new();
        for t in &tracks {
            by_frame.entry(t.frame).or_default().push(DetectionRecord {
                bbox: [t.bbox.x1, t.bbox.y1, t.bbox.x2, t.bbox.y2],
                class_conf: t.conf.unwrap_or(1.0),
                behavior_scores: t.behaviors.clone().unwrap_or_else(|| vec![0.0; NUM_BEHAVIORS]),
                track_id: Some(t.id),
                pose: t.pose.as_ref().map(|p| p.iter().map(|k| (k.x, k.y, k.v)).collect()),
            });
        }
        let out = DetectionsFile {
            schema_version: SCHEMA_VERSION,
            sequence_id: dets.sequence_id.clone(),
            image_size: dets.image_size,
            frames: by_frame.into_iter().map(|(frame, detections)| DetectionFrame { frame, detections }).collect(),
        };
        write_text(&a.out, &out.to_json())?;
    } else {
        write_text(&a.out, &write_mot_csv(&tracks))?;
    }
    let ids: std::collections::BTreeSet<u64> = tracks.iter().map(|t| t.id).collect();
    eprintln!("{} tracks, {} boxes", ids.len(), tracks.len());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- evaluate

/// Files named directly or found (non-recursively) in directories, sorted.
fn expand(paths: &[PathBuf], exts: &[&str]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && f.extension().is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x))))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("{}: no such file or directory", p.display());
        }
    }
    Ok(out)
}

fn load_gt(paths: &[PathBuf]) -> Result<BTreeMap<String, SequenceAnnotation>> {
    let mut out = BTreeMap::new();
    for p in expand(paths, &["json"])? {
        let a = parse_annotations(&p).with_context(|| format!("parsing {}", p.display()))?;
        if out.contains_key(&a.sequence_id) {
            bail!("{}: sequence {} appears twice in the gt", p.display(), a.sequence_id);
        }
        out.insert(a.sequence_id.clone(), a);
    }
    Ok(out)
}

/// Detections JSON carries its sequence id; a MOT CSV takes its file stem.
fn load_preds(paths: &[PathBuf]) -> Result<BTreeMap<String, Vec<PredBox>>> {
    let mut out = BTreeMap::new();
    for p in expand(paths, &["json", "csv", "txt"])? {
        let is_json = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let (id, preds) = if is_json {
            let d = parse_detections(&p).with_context(|| format!("parsing {}", p.display()))?;
            (d.sequence_id.clone(), preds_from_detections(&d))
        } else {
            let t = read_mot_csv(&p).with_context(|| format!("parsing {}", p.display()))?;
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            (stem, t.iter().map(PredBox::from_tracked).collect())
        };
        if out.contains_key(&id) {
            bail!("{}: sequence {id} appears twice in the predictions", p.display());
        }
        out.insert(id, preds);
    }
    Ok(out)
}

fn evaluate_cmd(g: &Global, a: &EvaluateArgs) -> Result<ExitCode> {
    let gt = load_gt(&a.gt)?;
    let preds = load_preds(&a.pred)?;
    let inputs: Vec<SequenceInput> = pair_sequences(gt, preds)?.into_iter().map(|(gt, preds)| SequenceInput { gt, preds }).collect();
    let opts = EvalOptions { method: a.method.clone(), use_gt_boxes: a.gt_boxes, workers: g.workers as usize, ..EvalOptions::new(a.task) };
    let report = evaluate(&inputs, &opts)?;
    match g.format {
        Format::Table => {
            print!("{}", report.to_table());
            for n in &report.notes {
                eprintln!("note: {n}");
            }
        }
        Format::Json => print!("{}", report.to_json()),
    }
    if let Some(out) = &a.out {
        write_text(out, &report.to_json())?;
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- selfcheck

fn selfcheck(g: &Global, a: &SelfcheckArgs) -> Result<ExitCode> {
    let opts = SelfcheckOptions { seed: g.seed, ..SelfcheckOptions::default() };
    let summary = run_all(&opts, a.params.as_deref());
    match g.format {
        Format::Json => print!("{}", summary.to_json()),
        Format::Table => {
            for c in &summary.checks {
                let tag = if c.passed { paint("PASS", "32") } else { paint("FAIL", "31") };
                println!("{tag} {:<26} {:>5} cases  {:>7.3}s  {}", c.name, c.cases, c.seconds, c.detail);
            }
        }
    }
    if let Some(path) = &a.summary {
        write_text(path, &summary.to_json())?;
    }
    if summary.passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("failing checks: {}", summary.failing().join(", "));
        Ok(ExitCode::from(EXIT_SELFCHECK))
    }
}

// ---------------------------------------------------------------- forward

fn forward(g: &Global, a: &ForwardArgs) -> Result<ExitCode> {
    let dims = ModelDims::parse(&g.dims)?;
    let params = match &a.params {
        Some(p) => ModelParams::load(p)?,
        None => ModelParams::random(&dims, g.seed),
    };
    if params.dims != dims {
        bail!("shape mismatch: parameters were built for {}, but --dims gives {dims}", params.dims);
    }
    if dims.k != NUM_BEHAVIORS {
        bail!("shape mismatch: detections files carry {NUM_BEHAVIORS} behavior scores, but K = {}", dims.k);
    }
    let video = parse_video(&a.video)?;
    let [n, h, w, _] = video.shape;
    if (h, w) != (dims.h, dims.w) {
        bail!("shape mismatch: video frames are {h}x{w}, but the model expects {}x{}", dims.h, dims.w);
    }
    if n < dims.t {
        bail!("shape mismatch: video has {n} frames, fewer than the window of {}", dims.t);
    }
    let clip = VideoTensor::new(video.to_array())?;
    let size = ImageSize { width: w as u32, height: h as u32 };

    // one window per target frame, from the first full window on
    let targets: Vec<usize> = (dims.t - 1..n).collect();
    let window = |end: usize| -> Result<DetectionFrame> {
        let out = toy_forward(&clip.window(end + 1 - dims.t, dims.t), &params)?;
        let detections = emit_detections(&out, g.cls_thresh, g.beh_thresh)
            .into_iter()
            .map(|d| -> Result<DetectionRecord> {
                let b = d.bbox.to_abs(size)?.clip(size);
                Ok(DetectionRecord {
                    bbox: [b.x1, b.y1, b.x2, b.y2],
                    class_conf: d.class_conf,
                    behavior_scores: d.behaviors,
                    track_id: None,
                    pose: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DetectionFrame { frame: end as u64, detections })
    };
    let frames: Vec<DetectionFrame> = pool(g.workers)?.install(|| targets.par_iter().map(|&e| window(e)).collect::<Result<_>>())?;
    let sequence_id = a
        .sequence_id
        .clone()
        .unwrap_or_else(|| a.video.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| default_sequence_id(g.seed)));
    let file = DetectionsFile { schema_version: SCHEMA_VERSION, sequence_id, image_size: size, frames };
    file.validate()?;
    write_text(&a.out, &file.to_json())?;
    let count: usize = file.frames.iter().map(|f| f.detections.len()).sum();
    eprintln!("{} windows, {count} detections", file.frames.len());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------- params

fn params(g: &Global, a: &ParamsArgs) -> Result<ExitCode> {
    let dims = ModelDims::parse(&g.dims)?;
    let p = match a.init {
        InitArg::Random => ModelParams::random(&dims, g.seed),
        InitArg::Averaging => ModelParams::averaging(&dims),
    };
    write_text(&a.out, &(p.to_json() + "\n"))?;
    Ok(ExitCode::SUCCESS)
}
