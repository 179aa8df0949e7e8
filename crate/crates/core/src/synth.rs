//! Seeded synthetic scenes: agents with reflecting constant-velocity motion,
//! rule-derived behaviors and template poses, plus a noise model that turns
//! clean detections into imperfect ones.
//!
//! Randomness comes from xoshiro256** seeded through splitmix64. Noise is
//! drawn from separate per-frame streams for jitter, drops, confidences,
//! false positives and swaps, so raising one rate never changes the draws
//! behind another, and a higher drop rate drops a superset of boxes.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::{
    BoxVisibility, DetectionFrame, DetectionRecord, DetectionsFile, InstanceAnnotation, SequenceAnnotation,
    BEHAVIOR_EATING, BEHAVIOR_MOVING, BEHAVIOR_PLAYING, BEHAVIOR_RESTING, DEFAULT_STRIDE, NUM_BEHAVIORS, NUM_JOINTS, SCHEMA_VERSION,
};
use crate::geometry::{iou, BoxXYXY, ImageSize};
use crate::metrics::Keypoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid scene config: {0}")]
    Scene(String),
    #[error("invalid noise config: {0}")]
    Noise(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Random start positions and headings; agents may meet.
    #[default]
    Random,
    /// One horizontal lane per agent; boxes never overlap.
    Lanes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub agents: usize,
    pub frames: u64,
    pub arena: ImageSize,
    /// Per-agent speed is drawn once from `[speed_min, speed_max]` px/frame.
    pub speed_min: f64,
    pub speed_max: f64,
    /// Per-agent box side lengths are drawn once from this range.
    pub size_min: f64,
    pub size_max: f64,
    /// Center distance at or below which two agents play.
    pub interaction_radius: f64,
    /// Speed above which an agent is moving rather than resting.
    pub moving_speed: f64,
    /// Standard deviation of the per-frame heading change, in radians.
    pub heading_jitter: f64,
    pub stride: u64,
    pub layout: Layout,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            agents: 5,
            frames: 200,
            arena: ImageSize { width: 640, height: 480 },
            speed_min: 0.0,
            speed_max: 4.0,
            size_min: 40.0,
            size_max: 90.0,
            interaction_radius: 60.0,
            moving_speed: 1.0,
            heading_jitter: 0.05,
            stride: DEFAULT_STRIDE,
            layout: Layout::Random,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Scene(m));
        if self.agents < 1 {
            return bad("agents must be >= 1".into());
        }
        if self.frames < 1 {
            return bad("frames must be >= 1".into());
        }
        if self.stride < 1 {
            return bad("stride must be >= 1".into());
        }
        self.arena.validate().map_err(|e| SynthError::Scene(e.to_string()))?;
        if !(0.0 <= self.speed_min && self.speed_min <= self.speed_max && self.speed_max.is_finite()) {
            return bad("speed range must satisfy 0 <= min <= max".into());
        }
        if !(1.0 <= self.size_min && self.size_min <= self.size_max) {
            return bad("size range must satisfy 1 <= min <= max".into());
        }
        let limit = f64::from(self.arena.width.min(self.arena.height));
        let lane = f64::from(self.arena.height) / self.agents as f64;
        let max_side = match self.layout {
            Layout::Random => limit,
            Layout::Lanes => lane,
        };
        if self.size_max >= max_side {
            return bad(format!("size_max {} does not fit the arena layout (limit {max_side})", self.size_max));
        }
        if !(self.interaction_radius >= 0.0 && self.moving_speed >= 0.0 && self.heading_jitter >= 0.0) {
            return bad("radius, moving speed and heading jitter must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Standard deviation of the independent per-corner jitter, in px.
    pub jitter_sigma: f64,
    /// Probability that a detection is dropped.
    pub fn_rate: f64,
    /// Expected number of spurious boxes per frame.
    pub fp_rate: f64,
    /// Per-frame probability that two agents exchange ids from then on.
    pub id_swap_rate: f64,
    /// Scale of the confidence noise: kept boxes get `1 - |N(0, σ)|`.
    pub conf_noise: f64,
}

impl NoiseConfig {
    /// Noise used by the desk-scale end-to-end run.
    pub fn moderate() -> Self {
        NoiseConfig { jitter_sigma: 2.0, fn_rate: 0.1, fp_rate: 0.2, id_swap_rate: 0.0, conf_noise: 0.2 }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [("fn_rate", self.fn_rate), ("fp_rate", self.fp_rate), ("id_swap_rate", self.id_swap_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Noise(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        for (name, v) in [("jitter_sigma", self.jitter_sigma), ("conf_noise", self.conf_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SynthError::Noise(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Joint positions in unit box coordinates, in keypoint-schema order.
pub const POSE_TEMPLATE: [(f64, f64); NUM_JOINTS] = [
    (0.50, 0.60),
    (0.40, 0.75),
    (0.38, 0.90),
    (0.60, 0.75),
    (0.62, 0.90),
    (0.50, 0.30),
    (0.50, 0.17),
    (0.50, 0.21),
    (0.45, 0.12),
    (0.55, 0.12),
    (0.35, 0.35),
    (0.28, 0.48),
    (0.25, 0.60),
    (0.65, 0.35),
    (0.72, 0.48),
    (0.75, 0.60),
];

pub fn template_pose(b: &BoxXYXY) -> Vec<Keypoint> {
    POSE_TEMPLATE
        .iter()
        .map(|&(u, v)| Keypoint { x: b.x1 + u * b.width(), y: b.y1 + v * b.height(), v: 2 })
        .collect()
}

/// A generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub annotation: SequenceAnnotation,
    /// Detections on every frame that equal the ground truth.
    pub clean: DetectionsFile,
    /// Constant speed of each agent in px/frame.
    pub speeds: Vec<f64>,
}

struct Agent {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    speed: f64,
    heading: f64,
}

/// Behaviors of every agent given its speed and all box centers: moving
/// above `moving_speed`, otherwise resting; playing within
/// `interaction_radius` of another agent; eating when resting alone.
pub fn rule_behaviors(speeds: &[f64], boxes: &[BoxXYXY], cfg: &SceneConfig) -> Vec<[bool; NUM_BEHAVIORS]> {
    let centers: Vec<(f64, f64)> = boxes.iter().map(BoxXYXY::center).collect();
    (0..boxes.len())
        .map(|k| {
            let mut b = [false; NUM_BEHAVIORS];
            if speeds[k] > cfg.moving_speed {
                b[BEHAVIOR_MOVING] = true;
            } else {
                b[BEHAVIOR_RESTING] = true;
            }
            let near = (0..boxes.len()).any(|o| {
                o != k && (centers[o].0 - centers[k].0).hypot(centers[o].1 - centers[k].1) <= cfg.interaction_radius
            });
            b[BEHAVIOR_PLAYING] = near;
            b[BEHAVIOR_EATING] = b[BEHAVIOR_RESTING] && !near;
            b
        })
        .collect()
}

pub fn default_sequence_id(seed: u64) -> String {
    format!("synth-{seed:016x}")
}

/// Generates a scene. Positions are advanced, then reflected off the arena
/// walls so every box stays inside it.
pub fn generate(cfg: &SceneConfig) -> Result<Scene, SynthError> {
    cfg.validate()?;
    let mut rng = Xoshiro256StarStar::seed_from_u64(cfg.seed);
    let (aw, ah) = (f64::from(cfg.arena.width), f64::from(cfg.arena.height));
    let lane_h = ah / cfg.agents as f64;
    let mut agents: Vec<Agent> = (0..cfg.agents)
        .map(|k| {
            let w = rng.random_range(cfg.size_min..=cfg.size_max);
            let h = rng.random_range(cfg.size_min..=cfg.size_max);
            let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
            match cfg.layout {
                Layout::Random => Agent {
                    x: rng.random_range(0.0..=aw - w),
                    y: rng.random_range(0.0..=ah - h),
                    w,
                    h,
                    speed,
                    heading: rng.random_range(0.0..std::f64::consts::TAU),
                },
                Layout::Lanes => {
                    let h = h.min(lane_h * 0.8);
                    let heading = if rng.random_bool(0.5) { 0.0 } else { std::f64::consts::PI };
                    Agent { x: rng.random_range(0.0..=aw - w), y: k as f64 * lane_h + (lane_h - h) / 2.0, w, h, speed, heading }
                }
            }
        })
        .collect();
    let speeds: Vec<f64> = agents.iter().map(|a| a.speed).collect();
    let turn = Normal::new(0.0, cfg.heading_jitter.max(f64::MIN_POSITIVE)).expect("valid sigma");

    let mut det_frames = Vec::with_capacity(cfg.frames as usize);
    let mut ann_frames = BTreeMap::new();
    for f in 0..cfg.frames {
        if f > 0 {
            for a in &mut agents {
                if cfg.layout == Layout::Random && cfg.heading_jitter > 0.0 {
                    a.heading += turn.sample(&mut rng);
                }
                let (mut vx, mut vy) = (a.speed * a.heading.cos(), a.speed * a.heading.sin());
                if cfg.layout == Layout::Lanes {
                    vy = 0.0;
                }
                a.x += vx;
                a.y += vy;
                if a.x < 0.0 || a.x + a.w > aw {
                    a.x = if a.x < 0.0 { -a.x } else { 2.0 * (aw - a.w) - a.x };
                    vx = -vx;
                }
                if a.y < 0.0 || a.y + a.h > ah {
                    a.y = if a.y < 0.0 { -a.y } else { 2.0 * (ah - a.h) - a.y };
                    vy = -vy;
                }
                a.x = a.x.clamp(0.0, aw - a.w);
                a.y = a.y.clamp(0.0, ah - a.h);
                if a.speed > 0.0 {
                    a.heading = vy.atan2(vx);
                }
            }
        }
        let boxes: Vec<BoxXYXY> = agents.iter().map(|a| BoxXYXY { x1: a.x, y1: a.y, x2: a.x + a.w, y2: a.y + a.h }).collect();
        let behaviors = rule_behaviors(&speeds, &boxes, cfg);
        let detections = boxes
            .iter()
            .zip(&behaviors)
            .enumerate()
            .map(|(k, (b, beh))| DetectionRecord {
                bbox: [b.x1, b.y1, b.x2, b.y2],
                class_conf: 1.0,
                behavior_scores: beh.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect(),
                track_id: Some(k as u64),
                pose: Some(template_pose(b).iter().map(|p| (p.x, p.y, p.v)).collect()),
            })
            .collect();
        det_frames.push(DetectionFrame { frame: f, detections });
        if f % cfg.stride == 0 {
            let list = boxes
                .iter()
                .zip(&behaviors)
                .enumerate()
                .map(|(k, (b, beh))| {
                    let occluded = boxes.iter().enumerate().any(|(o, ob)| o != k && iou(b, ob) > 0.0);
                    InstanceAnnotation {
                        track_id: k as u64,
                        name: Some(format!("agent-{k}")),
                        bbox: *b,
                        visibility: if occluded { BoxVisibility::Occluded } else { BoxVisibility::Full },
                        pose: Some(template_pose(b)),
                        behaviors: *beh,
                    }
                })
                .collect();
            ann_frames.insert(f, list);
        }
    }
    let sequence_id = default_sequence_id(cfg.seed);
    Ok(Scene {
        annotation: SequenceAnnotation {
            sequence_id: sequence_id.clone(),
            image_size: cfg.arena,
            frame_count: cfg.frames,
            stride: cfg.stride,
            frames: ann_frames,
        },
        clean: DetectionsFile { schema_version: SCHEMA_VERSION, sequence_id, image_size: cfg.arena, frames: det_frames },
        speeds,
    })
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy)]
enum Stream {
    Swap = 1,
    Jitter = 2,
    Drop = 3,
    Conf = 4,
    FalsePositive = 5,
}

fn stream(seed: u64, frame: u64, s: Stream) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(mix(mix(seed ^ mix(frame)) ^ s as u64))
}

/// Inverse-CDF Poisson draw, monotone in `lambda` for a fixed `u`.
fn poisson(lambda: f64, u: f64) -> usize {
    let mut k = 0;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf && k < 1000 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

/// Exchanges the ids `a` and `b` on every frame at or after `from`.
pub fn swap_ids(dets: &mut DetectionsFile, from: u64, a: u64, b: u64) {
    for fr in dets.frames.iter_mut().filter(|fr| fr.frame >= from) {
        for d in &mut fr.detections {
            d.track_id = match d.track_id {
                Some(id) if id == a => Some(b),
                Some(id) if id == b => Some(a),
                other => other,
            };
        }
    }
}

/// Applies the noise model. Spurious boxes carry no track id.
pub fn perturb(clean: &DetectionsFile, n: &NoiseConfig, seed: u64) -> Result<DetectionsFile, SynthError> {
    n.validate()?;
    let (aw, ah) = (f64::from(clean.image_size.width), f64::from(clean.image_size.height));
    let mut out = clean.clone();
    // current id permutation from swap events
    let mut relabel: BTreeMap<u64, u64> = BTreeMap::new();
    for fr in &mut out.frames {
        let f = fr.frame;
        let mut swap_rng = stream(seed, f, Stream::Swap);
        if n.id_swap_rate > 0.0 && swap_rng.random::<f64>() < n.id_swap_rate {
            let mut ids: Vec<u64> = fr.detections.iter().filter_map(|d| d.track_id).collect();
            ids.sort_unstable();
            if ids.len() >= 2 {
                let i = swap_rng.random_range(0..ids.len());
                let mut j = swap_rng.random_range(0..ids.len() - 1);
                if j >= i {
                    j += 1;
                }
                // ids here are the originals; swap what they currently map to
                let (a, b) = (ids[i], ids[j]);
                let (ma, mb) = (*relabel.get(&a).unwrap_or(&a), *relabel.get(&b).unwrap_or(&b));
                relabel.insert(a, mb);
                relabel.insert(b, ma);
            }
        }
        let mut jitter_rng = stream(seed, f, Stream::Jitter);
        let mut drop_rng = stream(seed, f, Stream::Drop);
        let mut conf_rng = stream(seed, f, Stream::Conf);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut kept = Vec::with_capacity(fr.detections.len());
        for d in fr.detections.drain(..) {
            let mut d = d;
            // every draw happens for every box so streams stay aligned
            let corner: [f64; 4] = std::array::from_fn(|_| normal.sample(&mut jitter_rng));
            let joints: Vec<(f64, f64)> =
                (0..d.pose.as_ref().map_or(0, Vec::len)).map(|_| (normal.sample(&mut jitter_rng), normal.sample(&mut jitter_rng))).collect();
            let u_drop: f64 = drop_rng.random();
            let z_conf = normal.sample(&mut conf_rng);
            if n.jitter_sigma > 0.0 {
                let s = n.jitter_sigma;
                let (mut x1, mut y1) = (d.bbox[0] + s * corner[0], d.bbox[1] + s * corner[1]);
                let (mut x2, mut y2) = (d.bbox[2] + s * corner[2], d.bbox[3] + s * corner[3]);
                x1 = x1.clamp(0.0, aw - 1.0);
                y1 = y1.clamp(0.0, ah - 1.0);
                x2 = x2.clamp(x1 + 1.0, aw);
                y2 = y2.clamp(y1 + 1.0, ah);
                d.bbox = [x1, y1, x2, y2];
                if let Some(p) = &mut d.pose {
                    for (k, (dx, dy)) in p.iter_mut().zip(&joints) {
                        k.0 += s * dx;
                        k.1 += s * dy;
                    }
                }
            }
            if u_drop < n.fn_rate {
                continue;
            }
            if n.conf_noise > 0.0 {
                d.class_conf = (1.0 - (n.conf_noise * z_conf).abs()).clamp(0.01, 1.0);
            }
            d.track_id = d.track_id.map(|id| *relabel.get(&id).unwrap_or(&id));
            kept.push(d);
        }
        let mut fp_rng = stream(seed, f, Stream::FalsePositive);
        let count = poisson(n.fp_rate, fp_rng.random());
        for _ in 0..count {
            let w = fp_rng.random_range(20.0..=(aw / 4.0).max(21.0)).min(aw);
            let h = fp_rng.random_range(20.0..=(ah / 4.0).max(21.0)).min(ah);
            let x = fp_rng.random_range(0.0..=(aw - w));
            let y = fp_rng.random_range(0.0..=(ah - h));
            kept.push(DetectionRecord {
                bbox: [x, y, x + w, y + h],
                class_conf: fp_rng.random_range(0.05..=0.5),
                behavior_scores: (0..NUM_BEHAVIORS).map(|_| fp_rng.random_range(0.0..0.3)).collect(),
                track_id: None,
                pose: Some(template_pose(&BoxXYXY { x1: x, y1: y, x2: x + w, y2: y + h }).iter().map(|p| (p.x, p.y, p.v)).collect()),
            });
        }
        fr.detections = kept;
    }
    Ok(out)
}
