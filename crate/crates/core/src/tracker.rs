//! Tracking by detection: a constant-velocity Kalman filter per track,
//! Hungarian association on `1 - IoU`, and a hits/misses lifecycle, with an
//! optional second association pass for low-confidence detections.
//!
//! The state is `(cx, cy, s, r, vcx, vcy, vs)` where `s` is the box area and
//! `r` the aspect ratio `w / h`; the measurement is `(cx, cy, s, r)`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{hungarian, CostMatrix};
use crate::geometry::{iou, BoxXYXY};
use crate::metrics::{Keypoint, TrackedBox};

type State = SVector<f64, 7>;
type Cov = SMatrix<f64, 7, 7>;
type Meas = SVector<f64, 4>;
type MeasCov = SMatrix<f64, 4, 4>;
type Obs = SMatrix<f64, 4, 7>;

/// Cost given to pairs below the IoU gate; such pairs are dropped after
/// assignment.
const GATED_COST: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("invalid tracker config: {0}")]
    Config(String),
    #[error("covariance of track {track_id} is not positive semi-definite")]
    NotPsd { track_id: u64 },
    #[error("degenerate measurement box {0:?}")]
    DegenerateMeasurement(BoxXYXY),
    #[error("frame {got} does not come after frame {prev}")]
    FrameOrder { prev: u64, got: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub iou_gate: f64,
    pub max_misses: u32,
    pub min_hits: u32,
    pub two_stage: bool,
    /// Detections at or above this confidence take part in the first pass.
    pub high_conf: f64,
    /// Scales the process noise covariance.
    pub process_noise: f64,
    /// Scales the measurement noise covariance.
    pub measurement_noise: f64,
    /// Emit unconfirmed tracks during the first `min_hits` steps of a
    /// sequence, so objects present from the start are not lost to warm-up.
    pub emit_warmup: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_gate: 0.3,
            max_misses: 30,
            min_hits: 3,
            two_stage: false,
            high_conf: 0.5,
            process_noise: 1.0,
            measurement_noise: 1.0,
            emit_warmup: true,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackerError> {
        let bad = |m: &str| Err(TrackerError::Config(m.to_string()));
        if !(self.iou_gate > 0.0 && self.iou_gate <= 1.0) {
            return bad("iou_gate must lie in (0, 1]");
        }
        if self.max_misses < 1 {
            return bad("max_misses must be >= 1");
        }
        if self.min_hits < 1 {
            return bad("min_hits must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.high_conf) {
            return bad("high_conf must lie in [0, 1]");
        }
        if !(self.process_noise > 0.0 && self.process_noise.is_finite()) {
            return bad("process_noise must be positive");
        }
        if !(self.measurement_noise > 0.0 && self.measurement_noise.is_finite()) {
            return bad("measurement_noise must be positive");
        }
        Ok(())
    }

    fn process_cov(&self) -> Cov {
        Cov::from_diagonal(&State::from_column_slice(&[1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4])) * self.process_noise
    }

    fn measurement_cov(&self) -> MeasCov {
        MeasCov::from_diagonal(&Meas::new(1.0, 1.0, 10.0, 10.0)) * self.measurement_noise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    /// Not matched in the latest step.
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackState {
    pub id: u64,
    pub mean: State,
    pub cov: Cov,
    pub hits: u32,
    pub misses: u32,
    pub confirmed: bool,
    /// The most recently associated detection.
    pub last: Option<TrackInput>,
}

impl TrackState {
    pub fn new(id: u64, z: &BoxXYXY) -> Result<Self, TrackerError> {
        let m = measure(z)?;
        let mean = State::from_column_slice(&[m[0], m[1], m[2], m[3], 0.0, 0.0, 0.0]);
        let cov = Cov::from_diagonal(&State::from_column_slice(&[10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4]));
        Ok(TrackState { id, mean, cov, hits: 1, misses: 0, confirmed: false, last: None })
    }

    pub fn status(&self) -> TrackStatus {
        if self.misses > 0 {
            TrackStatus::Lost
        } else if self.confirmed {
            TrackStatus::Confirmed
        } else {
            TrackStatus::Tentative
        }
    }

    /// The box implied by the current mean.
    pub fn predicted_box(&self) -> BoxXYXY {
        let (cx, cy) = (self.mean[0], self.mean[1]);
        let s = self.mean[2].max(0.0);
        let r = self.mean[3].max(0.0);
        let w = (s * r).sqrt();
        let h = if w > 0.0 { s / w } else { 0.0 };
        BoxXYXY { x1: cx - w / 2.0, y1: cy - h / 2.0, x2: cx + w / 2.0, y2: cy + h / 2.0 }
    }
}

fn measure(z: &BoxXYXY) -> Result<Meas, TrackerError> {
    if z.validate().is_err() || z.is_degenerate() {
        return Err(TrackerError::DegenerateMeasurement(*z));
    }
    let (cx, cy) = z.center();
    Ok(Meas::new(cx, cy, z.area(), z.width() / z.height()))
}

fn transition() -> Cov {
    let mut f = Cov::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> Obs {
    let mut h = Obs::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn is_psd(p: &Cov) -> bool {
    if !p.iter().all(|v| v.is_finite()) {
        return false;
    }
    let scale = p.diagonal().iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if (p - p.transpose()).amax() > 1e-9 * scale {
        return false;
    }
    let sym = (p + p.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min() >= -1e-9 * scale
}

/// Advances one frame under constant velocity and inflates the covariance
/// by the process noise.
pub fn kalman_predict(s: &TrackState, cfg: &TrackerConfig) -> Result<TrackState, TrackerError> {
    let mut out = s.clone();
    // an area about to turn non-positive stops shrinking
    if out.mean[2] + out.mean[6] <= 0.0 {
        out.mean[6] = 0.0;
    }
    let f = transition();
    out.mean = f * out.mean;
    out.cov = f * out.cov * f.transpose() + cfg.process_cov();
    if !is_psd(&out.cov) {
        return Err(TrackerError::NotPsd { track_id: s.id });
    }
    Ok(out)
}

/// Kalman correction with measurement `z`, using the Joseph form so the
/// posterior stays symmetric.
pub fn kalman_update(s: &TrackState, z: &BoxXYXY, cfg: &TrackerConfig) -> Result<TrackState, TrackerError> {
    let zm = measure(z)?;
    let h = observation();
    let r = cfg.measurement_cov();
    let innovation_cov = h * s.cov * h.transpose() + r;
    let inv = innovation_cov.cholesky().ok_or(TrackerError::NotPsd { track_id: s.id })?.inverse();
    let gain = s.cov * h.transpose() * inv;
    let mut out = s.clone();
    out.mean = s.mean + gain * (zm - h * s.mean);
    let ikh = Cov::identity() - gain * h;
    let p = ikh * s.cov * ikh.transpose() + gain * r * gain.transpose();
    out.cov = (p + p.transpose()) * 0.5;
    if !is_psd(&out.cov) {
        return Err(TrackerError::NotPsd { track_id: s.id });
    }
    Ok(out)
}

/// One detection fed to the tracker.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackInput {
    pub bbox: BoxXYXY,
    pub conf: f64,
    pub behaviors: Option<Vec<f64>>,
    pub pose: Option<Vec<Keypoint>>,
}

impl TrackInput {
    pub fn new(bbox: BoxXYXY, conf: f64) -> Self {
        TrackInput { bbox, conf, behaviors: None, pose: None }
    }
}

/// A detection-to-track association made in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Association {
    pub track_id: u64,
    pub detection: usize,
    /// IoU between the predicted box and the detection.
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutput {
    pub emitted: Vec<TrackedBox>,
    pub associations: Vec<Association>,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<TrackState>,
    next_id: u64,
    steps: u64,
    last_frame: Option<u64>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self, TrackerError> {
        cfg.validate()?;
        Ok(Tracker { cfg, tracks: Vec::new(), next_id: 0, steps: 0, last_frame: None })
    }

    pub fn tracks(&self) -> &[TrackState] {
        &self.tracks
    }

    /// Associates `dets` (rows) with the given tracks (columns) and returns
    /// gated pairs as `(detection, track position)`.
    fn associate(&self, dets: &[usize], inputs: &[TrackInput], tracks: &[usize]) -> Vec<(usize, usize, f64)> {
        if dets.is_empty() || tracks.is_empty() {
            return Vec::new();
        }
        let pred: Vec<BoxXYXY> = tracks.iter().map(|&t| self.tracks[t].predicted_box()).collect();
        let sim: Vec<Vec<f64>> = dets.iter().map(|&d| pred.iter().map(|p| iou(&inputs[d].bbox, p)).collect()).collect();
        let gate = self.cfg.iou_gate;
        let cm = CostMatrix::from_fn(dets.len(), tracks.len(), |i, j| if sim[i][j] >= gate { 1.0 - sim[i][j] } else { GATED_COST })
            .expect("costs are finite");
        hungarian(&cm)
            .pairs
            .into_iter()
            .filter(|&(i, j)| sim[i][j] >= gate)
            .map(|(i, j)| (dets[i], tracks[j], sim[i][j]))
            .collect()
    }

    /// Processes the detections of `frame`, which must come after every
    /// frame seen so far. Skipped frames count as misses.
    pub fn step(&mut self, frame: u64, inputs: &[TrackInput]) -> Result<StepOutput, TrackerError> {
        if let Some(prev) = self.last_frame {
            if frame <= prev {
                return Err(TrackerError::FrameOrder { prev, got: frame });
            }
        }
        for d in inputs {
            measure(&d.bbox)?;
        }
        let elapsed = self.last_frame.map_or(1, |p| frame - p);
        self.last_frame = Some(frame);
        self.steps += 1;

        let mut kept = Vec::with_capacity(self.tracks.len());
        for t in self.tracks.drain(..) {
            let mut t = t;
            for _ in 0..elapsed {
                t = kalman_predict(&t, &self.cfg)?;
            }
            t.misses = t.misses.saturating_add(u32::try_from(elapsed - 1).unwrap_or(u32::MAX));
            if t.misses <= self.cfg.max_misses {
                kept.push(t);
            }
        }
        self.tracks = kept;

        let all: Vec<usize> = (0..inputs.len()).collect();
        let (first, second): (Vec<usize>, Vec<usize>) = if self.cfg.two_stage {
            all.iter().partition(|&&d| inputs[d].conf >= self.cfg.high_conf)
        } else {
            (all, Vec::new())
        };
        let mut track_free = vec![true; self.tracks.len()];
        let mut det_used = vec![false; inputs.len()];
        let mut pairs = self.associate(&first, inputs, &(0..self.tracks.len()).collect::<Vec<_>>());
        for &(d, t, _) in &pairs {
            track_free[t] = false;
            det_used[d] = true;
        }
        if !second.is_empty() {
            let remaining: Vec<usize> = (0..self.tracks.len()).filter(|&t| track_free[t]).collect();
            let more = self.associate(&second, inputs, &remaining);
            for &(d, t, _) in &more {
                track_free[t] = false;
                det_used[d] = true;
            }
            pairs.extend(more);
        }

        let mut out = StepOutput::default();
        for &(d, t, s) in &pairs {
            let updated = kalman_update(&self.tracks[t], &inputs[d].bbox, &self.cfg)?;
            let tr = &mut self.tracks[t];
            *tr = updated;
            tr.hits += 1;
            tr.misses = 0;
            tr.confirmed |= tr.hits >= self.cfg.min_hits;
            tr.last = Some(inputs[d].clone());
            out.associations.push(Association { track_id: tr.id, detection: d, iou: s });
        }
        for (t, free) in track_free.iter().enumerate() {
            if *free {
                self.tracks[t].misses += 1;
            }
        }
        self.tracks.retain(|t| t.misses <= self.cfg.max_misses);

        // low-confidence leftovers of the second pass never start tracks
        for &d in &first {
            if det_used[d] {
                continue;
            }
            let mut t = TrackState::new(self.next_id, &inputs[d].bbox)?;
            self.next_id += 1;
            t.confirmed = t.hits >= self.cfg.min_hits;
            t.last = Some(inputs[d].clone());
            self.tracks.push(t);
        }

        let warmup = self.cfg.emit_warmup && self.steps <= u64::from(self.cfg.min_hits);
        for t in &self.tracks {
            if t.misses > 0 || !(t.confirmed || warmup) {
                continue;
            }
            let d = t.last.as_ref().expect("matched tracks carry their detection");
            out.emitted.push(TrackedBox {
                frame,
                id: t.id,
                bbox: d.bbox,
                conf: Some(d.conf),
                name: None,
                behaviors: d.behaviors.clone(),
                pose: d.pose.clone(),
            });
        }
        out.emitted.sort_by_key(|b| b.id);
        out.associations.sort_by_key(|a| a.track_id);
        Ok(out)
    }
}

/// Runs a fresh tracker over frames given in increasing order.
pub fn run(frames: &[(u64, Vec<TrackInput>)], cfg: &TrackerConfig) -> Result<Vec<TrackedBox>, TrackerError> {
    let mut tracker = Tracker::new(*cfg)?;
    let mut out = Vec::new();
    for (frame, dets) in frames {
        out.extend(tracker.step(*frame, dets)?.emitted);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{clear_counts, idf1};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};
    use rand_xoshiro::Xoshiro256StarStar;

    fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoxXYXY {
        BoxXYXY::new(x1, y1, x2, y2).unwrap()
    }

    fn cfg() -> TrackerConfig {
        TrackerConfig::default()
    }

    #[test]
    fn predict_zero_velocity_keeps_position() {
        let s = TrackState::new(0, &bx(10.0, 10.0, 30.0, 50.0)).unwrap();
        let p = kalman_predict(&s, &cfg()).unwrap();
        assert_eq!(p.mean.fixed_rows::<4>(0), s.mean.fixed_rows::<4>(0));
    }

    #[test]
    fn predict_moves_by_velocity() {
        let mut s = TrackState::new(0, &bx(10.0, 10.0, 30.0, 50.0)).unwrap();
        s.mean[4] = 1.0;
        let p = kalman_predict(&s, &cfg()).unwrap();
        assert_eq!(p.mean[0], s.mean[0] + 1.0);
        assert_eq!(p.mean[1], s.mean[1]);
    }

    #[test]
    fn shrinking_area_stops_at_zero() {
        let mut s = TrackState::new(0, &bx(0.0, 0.0, 2.0, 2.0)).unwrap();
        s.mean[6] = -10.0;
        let p = kalman_predict(&s, &cfg()).unwrap();
        assert_eq!(p.mean[2], 4.0);
        assert_eq!(p.mean[6], 0.0);
    }

    #[test]
    fn trace_increases_under_prediction_on_reachable_states() {
        let c = cfg();
        let mut rng = Xoshiro256StarStar::seed_from_u64(11);
        for _ in 0..50 {
            let mut s = TrackState::new(0, &bx(50.0, 50.0, 80.0, 100.0)).unwrap();
            for _ in 0..rng.random_range(1..20) {
                let p = kalman_predict(&s, &c).unwrap();
                assert!(p.cov.trace() > s.cov.trace());
                s = p;
                if rng.random_bool(0.7) {
                    let (x, y) = (rng.random_range(30.0..70.0), rng.random_range(30.0..70.0));
                    s = kalman_update(&s, &bx(x, y, x + rng.random_range(20.0..40.0), y + rng.random_range(30.0..60.0)), &c).unwrap();
                }
            }
        }
    }

    #[test]
    fn update_with_predicted_measurement_keeps_mean() {
        let s = TrackState::new(0, &bx(10.0, 10.0, 30.0, 50.0)).unwrap();
        let p = kalman_predict(&s, &cfg()).unwrap();
        let u = kalman_update(&p, &bx(10.0, 10.0, 30.0, 50.0), &cfg()).unwrap();
        for i in 0..7 {
            assert!((u.mean[i] - p.mean[i]).abs() < 1e-9);
        }
        assert!(u.cov.trace() <= p.cov.trace());
    }

    #[test]
    fn tiny_measurement_noise_snaps_to_measurement() {
        let c = TrackerConfig { measurement_noise: 1e-9, ..cfg() };
        let s = kalman_predict(&TrackState::new(0, &bx(10.0, 10.0, 30.0, 50.0)).unwrap(), &c).unwrap();
        let z = bx(14.0, 12.0, 36.0, 49.0);
        let u = kalman_update(&s, &z, &c).unwrap();
        let m = measure(&z).unwrap();
        for i in 0..4 {
            assert!((u.mean[i] - m[i]).abs() < 1e-6 * m[i].abs().max(1.0), "{i}");
        }
    }

    #[test]
    fn scalar_gain_matches_closed_form() {
        // diagonal prior: each measured coordinate updates independently
        let mut s = TrackState::new(0, &bx(0.0, 0.0, 10.0, 10.0)).unwrap();
        s.cov = Cov::from_diagonal(&State::from_column_slice(&[4.0, 9.0, 2.0, 3.0, 1.0, 1.0, 1.0]));
        let z = bx(3.0, 0.0, 13.0, 10.0); // cx moves from 5 to 8
        let u = kalman_update(&s, &z, &cfg()).unwrap();
        let k = 4.0 / (4.0 + 1.0);
        assert!((u.mean[0] - (5.0 + k * 3.0)).abs() < 1e-12);
        assert!((u.cov[(0, 0)] - (1.0 - k) * 4.0).abs() < 1e-12);
        assert_eq!(u.mean[1], 5.0);
    }

    #[test]
    fn degenerate_measurement_rejected() {
        let s = TrackState::new(0, &bx(0.0, 0.0, 10.0, 10.0)).unwrap();
        let flat = BoxXYXY { x1: 0.0, y1: 0.0, x2: 10.0, y2: 0.0 };
        assert!(matches!(kalman_update(&s, &flat, &cfg()), Err(TrackerError::DegenerateMeasurement(_))));
    }

    #[test]
    fn broken_covariance_is_reported() {
        let mut s = TrackState::new(3, &bx(0.0, 0.0, 10.0, 10.0)).unwrap();
        s.cov[(0, 0)] = -1e6;
        assert_eq!(kalman_predict(&s, &cfg()), Err(TrackerError::NotPsd { track_id: 3 }));
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig { iou_gate: 0.0, ..cfg() }.validate().is_err());
        assert!(TrackerConfig { iou_gate: 1.5, ..cfg() }.validate().is_err());
        assert!(TrackerConfig { max_misses: 0, ..cfg() }.validate().is_err());
        assert!(TrackerConfig { min_hits: 0, ..cfg() }.validate().is_err());
        assert!(cfg().validate().is_ok());
    }

    #[test]
    fn stationary_detection_confirms_at_min_hits() {
        let c = TrackerConfig { emit_warmup: false, ..cfg() };
        let mut t = Tracker::new(c).unwrap();
        let det = TrackInput::new(bx(10.0, 10.0, 40.0, 60.0), 0.9);
        for f in 0..5u64 {
            let out = t.step(f, std::slice::from_ref(&det)).unwrap();
            assert_eq!(t.tracks().len(), 1);
            assert_eq!(t.tracks()[0].id, 0);
            let confirmed = f + 1 >= u64::from(c.min_hits);
            assert_eq!(t.tracks()[0].status() == TrackStatus::Confirmed, confirmed, "frame {f}");
            assert_eq!(out.emitted.len(), usize::from(confirmed));
        }
    }

    #[test]
    fn warmup_emits_from_first_frame() {
        let det = TrackInput::new(bx(10.0, 10.0, 40.0, 60.0), 0.9);
        let frames: Vec<(u64, Vec<TrackInput>)> = (0..5).map(|f| (f, vec![det.clone()])).collect();
        let out = run(&frames, &cfg()).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|b| b.id == 0));
    }

    #[test]
    fn empty_sequence() {
        assert!(run(&[], &cfg()).unwrap().is_empty());
        let frames: Vec<(u64, Vec<TrackInput>)> = (0..4).map(|f| (f, Vec::new())).collect();
        assert!(run(&frames, &cfg()).unwrap().is_empty());
    }

    #[test]
    fn frames_must_increase() {
        let frames = vec![(3, Vec::new()), (3, Vec::new())];
        assert_eq!(run(&frames, &cfg()), Err(TrackerError::FrameOrder { prev: 3, got: 3 }));
    }

    #[test]
    fn long_gap_starts_new_identity() {
        let c = cfg();
        let det = TrackInput::new(bx(10.0, 10.0, 40.0, 60.0), 0.9);
        for (gap, same) in [(c.max_misses, true), (c.max_misses + 1, false)] {
            let mut frames: Vec<(u64, Vec<TrackInput>)> = (0..5).map(|f| (f, vec![det.clone()])).collect();
            for f in 5..5 + u64::from(gap) {
                frames.push((f, Vec::new()));
            }
            let back = 5 + u64::from(gap);
            frames.extend((back..back + 5).map(|f| (f, vec![det.clone()])));
            let out = run(&frames, &c).unwrap();
            let last_id = out.last().unwrap().id;
            assert_eq!(last_id == 0, same, "gap {gap}");
            // skipping the empty frames entirely behaves the same
            let sparse: Vec<_> = frames.iter().filter(|(_, d)| !d.is_empty()).cloned().collect();
            assert_eq!(run(&sparse, &c).unwrap().last().unwrap().id == 0, same);
        }
    }

    fn two_agents(seed: u64, frames: u64) -> (Vec<(u64, Vec<TrackInput>)>, Vec<TrackedBox>) {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let jitter = Normal::new(0.0, 1.0).unwrap();
        let mut input = Vec::new();
        let mut gt = Vec::new();
        for f in 0..frames {
            let t = f as f64;
            let a = bx(20.0 + 2.0 * t, 50.0, 60.0 + 2.0 * t, 110.0);
            let b = bx(400.0 - 1.5 * t, 300.0 + 0.5 * t, 450.0 - 1.5 * t, 370.0 + 0.5 * t);
            let mut dets = Vec::new();
            for (id, g) in [(0u64, a), (1, b)] {
                gt.push(TrackedBox::new(f, id, g));
                let mut j = || jitter.sample(&mut rng);
                dets.push(TrackInput::new(bx(g.x1 + j(), g.y1 + j(), g.x2 + j(), g.y2 + j()), 0.9));
            }
            input.push((f, dets));
        }
        (input, gt)
    }

    #[test]
    fn separated_agents_keep_identities() {
        for seed in 0..5 {
            let (input, gt) = two_agents(seed, 60);
            let out = run(&input, &cfg()).unwrap();
            let ids: std::collections::BTreeSet<u64> = out.iter().map(|b| b.id).collect();
            assert_eq!(ids.len(), 2);
            assert_eq!(idf1(&out, &gt, 0.5).unwrap(), 100.0);
            let c = clear_counts(&out, &gt, 0.5).unwrap();
            assert_eq!((c.fp, c.fn_, c.idsw), (0, 0, 0));
        }
    }

    #[test]
    fn associations_respect_gate_and_ids_increase() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(5);
        for _ in 0..20 {
            let c = TrackerConfig { iou_gate: rng.random_range(0.1..0.9), ..cfg() };
            let mut t = Tracker::new(c).unwrap();
            let mut max_id: Option<u64> = None;
            for f in 0..30 {
                let dets: Vec<TrackInput> = (0..rng.random_range(0..5))
                    .map(|_| {
                        let (x, y) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                        TrackInput::new(bx(x, y, x + 30.0, y + 30.0), rng.random_range(0.0..1.0))
                    })
                    .collect();
                let before = t.tracks().iter().map(|s| s.id).max();
                let out = t.step(f, &dets).unwrap();
                assert!(out.associations.iter().all(|a| a.iou >= c.iou_gate));
                for s in t.tracks() {
                    if before.is_none_or(|b| s.id > b) {
                        assert!(max_id.is_none_or(|m| s.id > m));
                    }
                }
                max_id = t.tracks().iter().map(|s| s.id).max().max(max_id);
            }
        }
    }

    #[test]
    fn two_stage_low_confidence_keeps_tracks_alive_but_never_spawns() {
        let c = TrackerConfig { two_stage: true, ..cfg() };
        let mut t = Tracker::new(c).unwrap();
        let hi = TrackInput::new(bx(10.0, 10.0, 40.0, 60.0), 0.9);
        let lo = TrackInput::new(bx(10.5, 10.0, 40.5, 60.0), 0.2);
        let stray = TrackInput::new(bx(200.0, 200.0, 240.0, 260.0), 0.2);
        t.step(0, std::slice::from_ref(&hi)).unwrap();
        let out = t.step(1, &[lo.clone(), stray]).unwrap();
        assert_eq!(t.tracks().len(), 1);
        assert_eq!(out.associations.len(), 1);
        assert_eq!(out.associations[0].detection, 0);
        // a single-stage tracker would open a track for the stray box
        let mut single = Tracker::new(cfg()).unwrap();
        single.step(0, &[hi]).unwrap();
        single.step(1, &[lo, TrackInput::new(bx(200.0, 200.0, 240.0, 260.0), 0.2)]).unwrap();
        assert_eq!(single.tracks().len(), 2);
    }

    #[test]
    fn deterministic() {
        let (input, _) = two_agents(3, 40);
        assert_eq!(run(&input, &cfg()).unwrap(), run(&input, &cfg()).unwrap());
    }
}
