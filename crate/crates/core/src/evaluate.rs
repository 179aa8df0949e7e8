//! Benchmark evaluation over paired gt and prediction sequences.
//!
//! Only annotated frames are scored. Sequences are evaluated in parallel
//! into additive tallies, which are merged in sequence-id order, so the
//! worker count never changes a reported number.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::assign::{hungarian, CostMatrix};
use crate::dataio::{DetectionsFile, SequenceAnnotation, NUM_JOINTS};
use crate::geometry::{iou, BoxXYXY};
use crate::metrics::{
    behavior_map, clear_counts, coco_ap, hota_counts, identity_counts, keypoint_ap, pck, ApImage, BehaviorFrame,
    ClearCounts, DetImage, HotaCounts, IdentityCounts, Keypoint, MetricsError, MotpMode, PckSample, PoseImage,
    TrackedBox, DEFAULT_KAPPA, DETECTION_MAX_DETS,
};
use crate::report::{MetricsReport, PoseMetrics, Task, TrackingMetrics};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequences without predictions: [{}]; predictions without gt: [{}]", .missing_pred.join(", "), .missing_gt.join(", "))]
    Pairing { missing_pred: Vec<String>, missing_gt: Vec<String> },
    #[error("sequence {sequence}: {message}")]
    Input { sequence: String, message: String },
    #[error("sequence {sequence}: {source}")]
    Metrics {
        sequence: String,
        #[source]
        source: MetricsError,
    },
    #[error("{0}")]
    Aggregate(MetricsError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// One predicted box. Track ids are only needed for tracking.
#[derive(Debug, Clone, PartialEq)]
pub struct PredBox {
    pub frame: u64,
    pub id: Option<u64>,
    pub bbox: BoxXYXY,
    pub conf: f64,
    pub behaviors: Option<Vec<f64>>,
    pub pose: Option<Vec<Keypoint>>,
}

impl PredBox {
    pub fn from_tracked(t: &TrackedBox) -> Self {
        PredBox {
            frame: t.frame,
            id: Some(t.id),
            bbox: t.bbox,
            conf: t.conf.unwrap_or(1.0),
            behaviors: t.behaviors.clone(),
            pose: t.pose.clone(),
        }
    }
}

pub fn preds_from_detections(d: &DetectionsFile) -> Vec<PredBox> {
    d.frames
        .iter()
        .flat_map(|fr| {
            fr.detections.iter().map(move |r| PredBox {
                frame: fr.frame,
                id: r.track_id,
                bbox: r.bbox(),
                conf: r.class_conf,
                behaviors: Some(r.behavior_scores.clone()),
                pose: r.keypoints(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInput {
    pub gt: SequenceAnnotation,
    pub preds: Vec<PredBox>,
}

/// Pairs gt and predictions by sequence id, failing with every id that
/// lacks a partner.
pub fn pair_sequences<P>(
    gt: BTreeMap<String, SequenceAnnotation>,
    mut preds: BTreeMap<String, P>,
) -> Result<Vec<(SequenceAnnotation, P)>, EvalError> {
    let missing_pred: Vec<String> = gt.keys().filter(|k| !preds.contains_key(*k)).cloned().collect();
    let missing_gt: Vec<String> = preds.keys().filter(|k| !gt.contains_key(*k)).cloned().collect();
    if !missing_pred.is_empty() || !missing_gt.is_empty() {
        return Err(EvalError::Pairing { missing_pred, missing_gt });
    }
    Ok(gt.into_iter().map(|(k, g)| (g, preds.remove(&k).expect("checked above"))).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub task: Task,
    pub method: String,
    pub iou_threshold: f64,
    pub motp: MotpMode,
    /// Per-joint OKS constants.
    pub kappa: Vec<f64>,
    /// Score behaviors on gt boxes instead of predicted ones.
    pub use_gt_boxes: bool,
    pub workers: usize,
}

impl EvalOptions {
    pub fn new(task: Task) -> Self {
        EvalOptions {
            task,
            method: "chimptrack".to_string(),
            iou_threshold: 0.5,
            motp: MotpMode::Overlap,
            kappa: vec![DEFAULT_KAPPA; NUM_JOINTS],
            use_gt_boxes: false,
            workers: 1,
        }
    }
}

/// Additive per-sequence results.
#[derive(Debug, Default)]
struct Partial {
    clear: ClearCounts,
    identity: IdentityCounts,
    hota: HotaCounts,
    det_images: Vec<ApImage>,
    pose_images: Vec<PoseImage>,
    pck: Vec<(Vec<Keypoint>, Option<Vec<Keypoint>>, BoxXYXY)>,
    behavior_frames: Vec<BehaviorFrame>,
}

fn annotated_preds<'a>(s: &'a SequenceInput, frames: &BTreeSet<u64>) -> BTreeMap<u64, Vec<&'a PredBox>> {
    let mut out: BTreeMap<u64, Vec<&PredBox>> = frames.iter().map(|&f| (f, Vec::new())).collect();
    for p in &s.preds {
        if let Some(list) = out.get_mut(&p.frame) {
            list.push(p);
        }
    }
    out
}

/// Gt-to-prediction pairs of one frame with IoU >= `thr`, maximizing total IoU.
fn match_boxes(gts: &[BoxXYXY], preds: &[BoxXYXY], thr: f64) -> Vec<(usize, usize)> {
    if gts.is_empty() || preds.is_empty() {
        return Vec::new();
    }
    let sim: Vec<Vec<f64>> = gts.iter().map(|g| preds.iter().map(|p| iou(g, p)).collect()).collect();
    let cm = CostMatrix::from_fn(gts.len(), preds.len(), |i, j| if sim[i][j] >= thr { -sim[i][j] } else { 0.0 }).expect("finite");
    hungarian(&cm).pairs.into_iter().filter(|&(i, j)| sim[i][j] >= thr && sim[i][j] > 0.0).collect()
}

fn evaluate_sequence(s: &SequenceInput, opts: &EvalOptions) -> Result<Partial, EvalError> {
    let seq = s.gt.sequence_id.clone();
    let frames = s.gt.annotated_frames();
    let preds = annotated_preds(s, &frames);
    let input_err = |message: String| EvalError::Input { sequence: seq.clone(), message };
    let metrics_err = |source: MetricsError| EvalError::Metrics { sequence: seq.clone(), source };
    let mut p = Partial::default();

    let det_images = || -> Vec<ApImage> {
        frames
            .iter()
            .map(|f| {
                DetImage {
                    gts: s.gt.frames[f].iter().map(|a| a.bbox).collect(),
                    preds: preds[f].iter().map(|d| (d.bbox, d.conf)).collect(),
                }
                .to_ap_image()
            })
            .collect()
    };

    match opts.task {
        Task::Tracking => {
            let gt = s.gt.tracked_boxes();
            let mut tracks = Vec::new();
            for d in preds.values().flatten() {
                let id = d.id.ok_or_else(|| input_err(format!("frame {}: tracking predictions need track ids", d.frame)))?;
                tracks.push(TrackedBox { frame: d.frame, id, bbox: d.bbox, conf: Some(d.conf), name: None, behaviors: None, pose: None });
            }
            p.clear = clear_counts(&tracks, &gt, opts.iou_threshold).map_err(metrics_err)?;
            p.identity = identity_counts(&tracks, &gt, opts.iou_threshold).map_err(metrics_err)?;
            p.hota = hota_counts(&tracks, &gt).map_err(metrics_err)?;
            p.det_images = det_images();
        }
        Task::Detection => p.det_images = det_images(),
        Task::Pose => {
            for f in &frames {
                let ann = &s.gt.frames[f];
                let posed: Vec<&PredBox> = preds[f].iter().copied().filter(|d| d.pose.is_some()).collect();
                if posed.len() != preds[f].len() {
                    return Err(input_err(format!("frame {f}: pose predictions need keypoints")));
                }
                let gts: Vec<(BoxXYXY, Vec<Keypoint>)> =
                    ann.iter().filter_map(|a| a.pose.as_ref().map(|k| (a.bbox, k.clone()))).collect();
                let gboxes: Vec<BoxXYXY> = gts.iter().map(|g| g.0).collect();
                let pboxes: Vec<BoxXYXY> = posed.iter().map(|d| d.bbox).collect();
                let mut assigned: Vec<Option<usize>> = vec![None; gts.len()];
                for (gi, pi) in match_boxes(&gboxes, &pboxes, opts.iou_threshold) {
                    assigned[gi] = Some(pi);
                }
                for (gi, (b, k)) in gts.iter().enumerate() {
                    p.pck.push((k.clone(), assigned[gi].map(|pi| posed[pi].pose.clone().expect("filtered")), *b));
                }
                p.pose_images.push(PoseImage {
                    gts,
                    preds: posed.iter().map(|d| (d.pose.clone().expect("filtered"), d.conf)).collect(),
                });
            }
        }
        Task::Behavior => {
            for f in &frames {
                let mut frame = BehaviorFrame {
                    gts: s.gt.frames[f].iter().map(|a| (a.bbox, a.active_behaviors())).collect(),
                    preds: Vec::new(),
                };
                for d in &preds[f] {
                    let b = d.behaviors.clone().ok_or_else(|| input_err(format!("frame {f}: behavior predictions need scores")))?;
                    frame.preds.push((d.bbox, b));
                }
                p.behavior_frames.push(frame);
            }
        }
    }
    Ok(p)
}

/// Attached to tracking reports: the bundled linker is not the model's own
/// identity mechanism.
pub const LINKER_NOTE: &str = "track ids from the bundled Kalman/IoU linker are a stand-in for learned identity propagation";

/// Evaluates all sequences and merges them into one report.
pub fn evaluate(inputs: &[SequenceInput], opts: &EvalOptions) -> Result<MetricsReport, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| EvalError::Pool(e.to_string()))?;
    let mut ordered: Vec<&SequenceInput> = inputs.iter().collect();
    ordered.sort_by(|a, b| a.gt.sequence_id.cmp(&b.gt.sequence_id));
    let partials: Vec<Partial> =
        pool.install(|| ordered.par_iter().map(|s| evaluate_sequence(s, opts)).collect::<Result<Vec<_>, _>>())?;

    let mut total = Partial::default();
    for p in partials {
        total.clear.merge(&p.clear);
        total.identity.merge(&p.identity);
        total.hota.merge(&p.hota);
        total.det_images.extend(p.det_images);
        total.pose_images.extend(p.pose_images);
        total.pck.extend(p.pck);
        total.behavior_frames.extend(p.behavior_frames);
    }

    let mut report = MetricsReport {
        method: opts.method.clone(),
        task: opts.task,
        sequences: ordered.iter().map(|s| s.gt.sequence_id.clone()).collect(),
        tracking: None,
        detection: None,
        pose: None,
        behavior: None,
        notes: Vec::new(),
    };
    match opts.task {
        Task::Tracking => {
            let c = total.clear.metrics(opts.motp).map_err(EvalError::Aggregate)?;
            let h = total.hota.scores().map_err(EvalError::Aggregate)?;
            let det = coco_ap(&total.det_images, DETECTION_MAX_DETS);
            report.tracking = Some(TrackingMetrics {
                hota: h.hota,
                det_a: h.det_a,
                ass_a: h.ass_a,
                mota: c.mota,
                motp: c.motp,
                idf1: total.identity.idf1().map_err(EvalError::Aggregate)?,
                map: det.ap,
                n_fp: c.n_fp,
                n_fn: c.n_fn,
                n_ids: c.n_ids,
            });
            report.detection = Some(det);
            report.notes.push(LINKER_NOTE.into());
            if opts.motp == MotpMode::Distance {
                report.notes.push("MOTP is the mean matched center distance in pixels".into());
            }
        }
        Task::Detection => report.detection = Some(coco_ap(&total.det_images, DETECTION_MAX_DETS)),
        Task::Pose => {
            let samples: Vec<PckSample> =
                total.pck.iter().map(|(g, p, b)| PckSample { gt: g, pred: p.as_deref(), gt_box: *b }).collect();
            let p05 = pck(&samples, 0.05).map_err(EvalError::Aggregate)?;
            let p10 = pck(&samples, 0.1).map_err(EvalError::Aggregate)?;
            let ap = keypoint_ap(&total.pose_images, &opts.kappa).map_err(EvalError::Aggregate)?;
            report.pose = Some(PoseMetrics {
                pck_005: p05.mean,
                pck_01: p10.mean,
                ap: ap.ap,
                ap50: ap.ap50,
                ap75: ap.ap75,
                ap_m: ap.ap_m,
                ap_l: ap.ap_l,
                ar: ap.ar,
            });
        }
        Task::Behavior => {
            let m = behavior_map(&total.behavior_frames, opts.iou_threshold, opts.use_gt_boxes).map_err(EvalError::Aggregate)?;
            if opts.use_gt_boxes {
                report.notes.push("behaviors scored on gt boxes".into());
            }
            report.behavior = Some(m);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, perturb, NoiseConfig, SceneConfig};

    fn clean_input(seed: u64) -> SequenceInput {
        let s = generate(&SceneConfig { seed, ..Default::default() }).unwrap();
        SequenceInput { preds: preds_from_detections(&s.clean), gt: s.annotation }
    }

    #[test]
    fn clean_scene_is_perfect_for_every_task() {
        let inputs = vec![clean_input(1), clean_input(2)];
        let t = evaluate(&inputs, &EvalOptions::new(Task::Tracking)).unwrap().tracking.unwrap();
        assert_eq!((t.mota, t.idf1, t.hota, t.map), (100.0, 100.0, 100.0, Some(100.0)));
        let p = evaluate(&inputs, &EvalOptions::new(Task::Pose)).unwrap().pose.unwrap();
        assert_eq!((p.pck_005, p.pck_01, p.ap), (Some(100.0), Some(100.0), Some(100.0)));
        let b = evaluate(&inputs, &EvalOptions::new(Task::Behavior)).unwrap().behavior.unwrap();
        assert_eq!(b.map, Some(100.0));
    }

    #[test]
    fn worker_count_changes_nothing() {
        let inputs: Vec<SequenceInput> = (0..4)
            .map(|seed| {
                let s = generate(&SceneConfig { seed, ..Default::default() }).unwrap();
                let noisy = perturb(&s.clean, &NoiseConfig::moderate(), seed).unwrap();
                SequenceInput { preds: preds_from_detections(&noisy), gt: s.annotation }
            })
            .collect();
        for task in [Task::Detection, Task::Behavior, Task::Pose] {
            let one = evaluate(&inputs, &EvalOptions::new(task)).unwrap();
            let four = evaluate(&inputs, &EvalOptions { workers: 4, ..EvalOptions::new(task) }).unwrap();
            assert_eq!(one.to_json(), four.to_json());
        }
    }

    #[test]
    fn pairing_reports_both_sides() {
        let a = clean_input(1);
        let gt: BTreeMap<String, SequenceAnnotation> = [("a".to_string(), a.gt.clone()), ("b".to_string(), a.gt.clone())].into();
        let preds: BTreeMap<String, ()> = [("a".to_string(), ()), ("c".to_string(), ())].into();
        match pair_sequences(gt, preds) {
            Err(EvalError::Pairing { missing_pred, missing_gt }) => {
                assert_eq!(missing_pred, vec!["b"]);
                assert_eq!(missing_gt, vec!["c"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tracking_needs_ids() {
        let mut s = clean_input(3);
        s.preds[0].id = None;
        assert!(matches!(evaluate(&[s], &EvalOptions::new(Task::Tracking)), Err(EvalError::Input { .. })));
    }

    #[test]
    fn unannotated_frames_are_ignored() {
        let mut s = clean_input(4);
        s.preds.push(PredBox {
            frame: 5,
            id: Some(99),
            bbox: BoxXYXY { x1: 0.0, y1: 0.0, x2: 5.0, y2: 5.0 },
            conf: 1.0,
            behaviors: None,
            pose: None,
        });
        let t = evaluate(&[s], &EvalOptions::new(Task::Tracking)).unwrap().tracking.unwrap();
        assert_eq!(t.mota, 100.0);
    }
}
