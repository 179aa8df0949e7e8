//! Benchmark metrics: CLEAR (MOTA/MOTP/nFP/nFN/nIDs), IDF1, HOTA, COCO-style
//! detection and keypoint AP, PCK, and frame-level per-class behavior AP.
//!
//! Tracking metrics take flat lists of [`TrackedBox`] for one sequence and
//! evaluate every frame that appears on either side. Each metric also has a
//! counts type that merges across sequences before the final ratios are taken.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{hungarian, CostMatrix};
use crate::dataio::{Supercategory, ETHOGRAM, NUM_JOINTS};
use crate::geometry::{iou, BoxXYXY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no ground-truth boxes; {0} is undefined")]
    NoGroundTruth(&'static str),
    #[error("behavior class {class} out of range (K = {k})")]
    UnknownClass { class: usize, k: usize },
    #[error("expected {expected} {what}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("track id {id} appears twice in frame {frame}")]
    DuplicateId { frame: u64, id: u64 },
}

/// One labeled point. `v` follows the 0/1/2 convention: 0 unlabeled,
/// 1 labeled but occluded, 2 visible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub v: u8,
}

/// A box carrying a track identity in one frame. Ground truth and
/// predictions share this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedBox {
    pub frame: u64,
    pub id: u64,
    pub bbox: BoxXYXY,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Per-class behavior scores; ground truth uses 0/1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behaviors: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Vec<Keypoint>>,
}

impl TrackedBox {
    pub fn new(frame: u64, id: u64, bbox: BoxXYXY) -> Self {
        TrackedBox { frame, id, bbox, conf: None, name: None, behaviors: None, pose: None }
    }

    pub fn with_conf(mut self, conf: f64) -> Self {
        self.conf = Some(conf);
        self
    }
}

pub(crate) fn by_frame(boxes: &[TrackedBox]) -> Result<BTreeMap<u64, Vec<&TrackedBox>>, MetricsError> {
    let mut out: BTreeMap<u64, Vec<&TrackedBox>> = BTreeMap::new();
    for b in boxes {
        out.entry(b.frame).or_default().push(b);
    }
    for (frame, list) in &out {
        let mut seen = BTreeSet::new();
        for b in list {
            if !seen.insert(b.id) {
                return Err(MetricsError::DuplicateId { frame: *frame, id: b.id });
            }
        }
    }
    Ok(out)
}

fn frame_union(a: &BTreeMap<u64, Vec<&TrackedBox>>, b: &BTreeMap<u64, Vec<&TrackedBox>>) -> BTreeSet<u64> {
    a.keys().chain(b.keys()).copied().collect()
}

fn center_distance(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}

// ---------------------------------------------------------------- CLEAR

/// How MOTP is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotpMode {
    /// Mean matched IoU x 100, higher is better.
    #[default]
    Overlap,
    /// Mean matched center distance in pixels, lower is better.
    Distance,
}

/// Raw CLEAR tallies; merge across sequences before normalizing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearCounts {
    pub gt: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub idsw: u64,
    pub iou_sum: f64,
    pub dist_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClearMetrics {
    pub mota: f64,
    pub motp: f64,
    pub n_fp: f64,
    pub n_fn: f64,
    pub n_ids: f64,
}

impl ClearCounts {
    pub fn merge(&mut self, o: &ClearCounts) {
        self.gt += o.gt;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.idsw += o.idsw;
        self.iou_sum += o.iou_sum;
        self.dist_sum += o.dist_sum;
    }

    /// Normalized rates (per 100 gt boxes). MOTA is assembled from the
    /// rounded-free rates so `mota == 100 - n_fp - n_fn - n_ids` holds exactly.
    pub fn metrics(&self, mode: MotpMode) -> Result<ClearMetrics, MetricsError> {
        if self.gt == 0 {
            return Err(MetricsError::NoGroundTruth("MOTA"));
        }
        let gt = self.gt as f64;
        let n_fp = 100.0 * self.fp as f64 / gt;
        let n_fn = 100.0 * self.fn_ as f64 / gt;
        let n_ids = 100.0 * self.idsw as f64 / gt;
        let motp = match (self.tp, mode) {
            (0, _) => 0.0,
            (tp, MotpMode::Overlap) => 100.0 * self.iou_sum / tp as f64,
            (tp, MotpMode::Distance) => self.dist_sum / tp as f64,
        };
        Ok(ClearMetrics { mota: 100.0 - n_fp - n_fn - n_ids, motp, n_fp, n_fn, n_ids })
    }
}

/// CLEAR tallies for one sequence.
///
/// Per frame, pairs with IoU at or above `threshold` are eligible. Pairs that
/// continue the previous frame's matching are preferred outright; among
/// those choices the total IoU is maximized. An identity switch is counted
/// when a gt is matched to a different prediction id than at its last match.
pub fn clear_counts(pred: &[TrackedBox], gt: &[TrackedBox], threshold: f64) -> Result<ClearCounts, MetricsError> {
    let g = by_frame(gt)?;
    let p = by_frame(pred)?;
    let mut c = ClearCounts::default();
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut prev_step: HashMap<u64, u64> = HashMap::new();
    for f in frame_union(&g, &p) {
        let gs = g.get(&f).map_or(&[][..], Vec::as_slice);
        let ps = p.get(&f).map_or(&[][..], Vec::as_slice);
        c.gt += gs.len() as u64;
        let mut step = HashMap::new();
        let mut matched = 0;
        if !gs.is_empty() && !ps.is_empty() {
            // continuing a pair outweighs any achievable IoU total
            let bonus = (gs.len().min(ps.len()) + 1) as f64;
            let sims: Vec<Vec<f64>> = gs.iter().map(|a| ps.iter().map(|b| iou(&a.bbox, &b.bbox)).collect()).collect();
            let cm = CostMatrix::from_fn(gs.len(), ps.len(), |i, j| {
                let s = sims[i][j];
                if s >= threshold && s > 0.0 {
                    let cont = prev_step.get(&gs[i].id) == Some(&ps[j].id);
                    -(if cont { bonus } else { 0.0 } + s)
                } else {
                    0.0
                }
            })
            .expect("IoU costs are finite");
            for (i, j) in hungarian(&cm).pairs {
                if cm.get(i, j) >= 0.0 {
                    continue;
                }
                matched += 1;
                let (gid, pid) = (gs[i].id, ps[j].id);
                c.iou_sum += sims[i][j];
                c.dist_sum += center_distance(&gs[i].bbox, &ps[j].bbox);
                if last_match.get(&gid).is_some_and(|&prev| prev != pid) {
                    c.idsw += 1;
                }
                last_match.insert(gid, pid);
                step.insert(gid, pid);
            }
        }
        c.tp += matched;
        c.fn_ += gs.len() as u64 - matched;
        c.fp += ps.len() as u64 - matched;
        prev_step = step;
    }
    Ok(c)
}

pub fn clear_metrics(pred: &[TrackedBox], gt: &[TrackedBox], threshold: f64) -> Result<ClearMetrics, MetricsError> {
    clear_counts(pred, gt, threshold)?.metrics(MotpMode::Overlap)
}

// ---------------------------------------------------------------- IDF1

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

impl IdentityCounts {
    pub fn merge(&mut self, o: &IdentityCounts) {
        self.idtp += o.idtp;
        self.idfp += o.idfp;
        self.idfn += o.idfn;
    }

    pub fn idf1(&self) -> Result<f64, MetricsError> {
        if self.idtp + self.idfn == 0 {
            return Err(MetricsError::NoGroundTruth("IDF1"));
        }
        let tp = self.idtp as f64;
        Ok(100.0 * 2.0 * tp / (2.0 * tp + self.idfp as f64 + self.idfn as f64))
    }
}

fn dense_ids(boxes: &[TrackedBox]) -> BTreeMap<u64, usize> {
    let ids: BTreeSet<u64> = boxes.iter().map(|b| b.id).collect();
    ids.into_iter().enumerate().map(|(i, id)| (id, i)).collect()
}

/// Whole-sequence identity matching: gt and prediction identities are paired
/// one-to-one to maximize the number of frames in which the paired boxes
/// overlap at IoU >= `threshold`.
pub fn identity_counts(pred: &[TrackedBox], gt: &[TrackedBox], threshold: f64) -> Result<IdentityCounts, MetricsError> {
    let g = by_frame(gt)?;
    let p = by_frame(pred)?;
    let gi = dense_ids(gt);
    let pi = dense_ids(pred);
    let mut overlap = vec![vec![0u64; pi.len()]; gi.len()];
    for f in frame_union(&g, &p) {
        let gs = g.get(&f).map_or(&[][..], Vec::as_slice);
        let ps = p.get(&f).map_or(&[][..], Vec::as_slice);
        for a in gs {
            for b in ps {
                let s = iou(&a.bbox, &b.bbox);
                if s >= threshold && s > 0.0 {
                    overlap[gi[&a.id]][pi[&b.id]] += 1;
                }
            }
        }
    }
    let mut idtp = 0;
    if !gi.is_empty() && !pi.is_empty() {
        let cm = CostMatrix::from_fn(gi.len(), pi.len(), |i, j| -(overlap[i][j] as f64)).expect("finite");
        idtp = hungarian(&cm).pairs.iter().map(|&(i, j)| overlap[i][j]).sum();
    }
    Ok(IdentityCounts { idtp, idfp: pred.len() as u64 - idtp, idfn: gt.len() as u64 - idtp })
}

pub fn idf1(pred: &[TrackedBox], gt: &[TrackedBox], threshold: f64) -> Result<f64, MetricsError> {
    identity_counts(pred, gt, threshold)?.idf1()
}

// ---------------------------------------------------------------- HOTA

/// Number of localization thresholds `α = 0.05, 0.10, …, 0.95`.
pub const HOTA_ALPHAS: usize = 19;

pub fn hota_alpha(i: usize) -> f64 {
    (5 * (i + 1)) as f64 / 100.0
}

/// Per-α HOTA tallies. `ass_sum` is the sum of association scores over true
/// positives, so sequences combine by plain addition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotaCounts {
    pub tp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub fp: Vec<u64>,
    pub ass_sum: Vec<f64>,
    pub loc_sum: Vec<f64>,
}

impl Default for HotaCounts {
    fn default() -> Self {
        HotaCounts {
            tp: vec![0; HOTA_ALPHAS],
            fn_: vec![0; HOTA_ALPHAS],
            fp: vec![0; HOTA_ALPHAS],
            ass_sum: vec![0.0; HOTA_ALPHAS],
            loc_sum: vec![0.0; HOTA_ALPHAS],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HotaScores {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub loc_a: f64,
}

impl HotaCounts {
    pub fn merge(&mut self, o: &HotaCounts) {
        for a in 0..HOTA_ALPHAS {
            self.tp[a] += o.tp[a];
            self.fn_[a] += o.fn_[a];
            self.fp[a] += o.fp[a];
            self.ass_sum[a] += o.ass_sum[a];
            self.loc_sum[a] += o.loc_sum[a];
        }
    }

    pub fn scores(&self) -> Result<HotaScores, MetricsError> {
        if self.tp[0] + self.fn_[0] == 0 {
            return Err(MetricsError::NoGroundTruth("HOTA"));
        }
        let (mut h, mut d, mut a, mut l) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..HOTA_ALPHAS {
            let tp = self.tp[i] as f64;
            let det = tp / ((self.tp[i] + self.fn_[i] + self.fp[i]).max(1)) as f64;
            let ass = self.ass_sum[i] / tp.max(1.0);
            h += (det * ass).sqrt();
            d += det;
            a += ass;
            l += if self.tp[i] > 0 { self.loc_sum[i] / tp } else { 1.0 };
        }
        let n = HOTA_ALPHAS as f64;
        Ok(HotaScores { hota: 100.0 * h / n, det_a: 100.0 * d / n, ass_a: 100.0 * a / n, loc_a: 100.0 * l / n })
    }
}

/// HOTA tallies for one sequence.
///
/// A global alignment score between each gt and prediction identity is built
/// from per-frame normalized overlaps. Each frame is then matched once to
/// maximize alignment x IoU, and the matching is thresholded at every α.
#[allow(clippy::needless_range_loop)] // per-threshold arrays share the index
pub fn hota_counts(pred: &[TrackedBox], gt: &[TrackedBox]) -> Result<HotaCounts, MetricsError> {
    let g = by_frame(gt)?;
    let p = by_frame(pred)?;
    let gi = dense_ids(gt);
    let pi = dense_ids(pred);
    let (ng, np) = (gi.len(), pi.len());
    let frames = frame_union(&g, &p);

    let mut gt_count = vec![0.0; ng];
    let mut pr_count = vec![0.0; np];
    let mut potential = vec![vec![0.0; np]; ng];
    let mut sims_per_frame = Vec::with_capacity(frames.len());
    for f in &frames {
        let gs = g.get(f).map_or(&[][..], Vec::as_slice);
        let ps = p.get(f).map_or(&[][..], Vec::as_slice);
        let sim: Vec<Vec<f64>> = gs.iter().map(|a| ps.iter().map(|b| iou(&a.bbox, &b.bbox)).collect()).collect();
        let row_sum: Vec<f64> = sim.iter().map(|r| r.iter().sum()).collect();
        let col_sum: Vec<f64> = (0..ps.len()).map(|j| sim.iter().map(|r| r[j]).sum()).collect();
        for (i, a) in gs.iter().enumerate() {
            for (j, b) in ps.iter().enumerate() {
                let denom = row_sum[i] + col_sum[j] - sim[i][j];
                if denom > f64::EPSILON {
                    potential[gi[&a.id]][pi[&b.id]] += sim[i][j] / denom;
                }
            }
        }
        for a in gs {
            gt_count[gi[&a.id]] += 1.0;
        }
        for b in ps {
            pr_count[pi[&b.id]] += 1.0;
        }
        sims_per_frame.push(sim);
    }
    let align: Vec<Vec<f64>> = (0..ng)
        .map(|i| (0..np).map(|j| potential[i][j] / (gt_count[i] + pr_count[j] - potential[i][j])).collect())
        .collect();

    let mut c = HotaCounts::default();
    let mut matches = vec![vec![vec![0.0f64; np]; ng]; HOTA_ALPHAS];
    // matched (gt index, pred index, IoU) per frame, in gt order
    let mut frame_pairs: Vec<Vec<(usize, usize, f64)>> = Vec::with_capacity(frames.len());
    for (f, sim) in frames.iter().zip(&sims_per_frame) {
        let gs = g.get(f).map_or(&[][..], Vec::as_slice);
        let ps = p.get(f).map_or(&[][..], Vec::as_slice);
        let pairs = if gs.is_empty() || ps.is_empty() {
            Vec::new()
        } else {
            let cm = CostMatrix::from_fn(gs.len(), ps.len(), |i, j| -(align[gi[&gs[i].id]][pi[&ps[j].id]] * sim[i][j]))
                .expect("finite");
            hungarian(&cm).pairs
        };
        let pairs: Vec<(usize, usize, f64)> = pairs.iter().map(|&(i, j)| (gi[&gs[i].id], pi[&ps[j].id], sim[i][j])).collect();
        for a in 0..HOTA_ALPHAS {
            let alpha = hota_alpha(a);
            let mut tp = 0;
            for &(i, j, s) in &pairs {
                if s >= alpha - f64::EPSILON {
                    tp += 1;
                    c.loc_sum[a] += s;
                    matches[a][i][j] += 1.0;
                }
            }
            c.tp[a] += tp;
            c.fn_[a] += gs.len() as u64 - tp;
            c.fp[a] += ps.len() as u64 - tp;
        }
        frame_pairs.push(pairs);
    }
    // each true positive adds its identity pair's association score, summed
    // in frame order so the result does not depend on prediction labels
    for a in 0..HOTA_ALPHAS {
        let alpha = hota_alpha(a);
        for &(i, j, s) in frame_pairs.iter().flatten() {
            if s >= alpha - f64::EPSILON {
                let m = matches[a][i][j];
                c.ass_sum[a] += m / (gt_count[i] + pr_count[j] - m);
            }
        }
    }
    Ok(c)
}

pub fn hota(pred: &[TrackedBox], gt: &[TrackedBox]) -> Result<HotaScores, MetricsError> {
    hota_counts(pred, gt)?.scores()
}

// ---------------------------------------------------------------- COCO AP

/// IoU / OKS thresholds `0.50, 0.55, …, 0.95`.
pub const COCO_THRESHOLDS: usize = 10;
pub const RECALL_POINTS: usize = 101;

pub fn coco_threshold(i: usize) -> f64 {
    (50 + 5 * i) as f64 / 100.0
}

/// Area ranges in px²: all, medium `[32², 96²]`, large `[96², ∞)`.
pub const AREA_ALL: (f64, f64) = (0.0, f64::INFINITY);
pub const AREA_MEDIUM: (f64, f64) = (32.0 * 32.0, 96.0 * 96.0);
pub const AREA_LARGE: (f64, f64) = (96.0 * 96.0, f64::INFINITY);

/// One image for the COCO evaluator: gt areas, detection scores and areas,
/// and the detection-by-gt similarity matrix (IoU or OKS).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ApImage {
    pub gt_areas: Vec<f64>,
    /// Ground truths that never count (e.g. poses without labeled joints).
    pub gt_ignore: Vec<bool>,
    pub dt_scores: Vec<f64>,
    pub dt_areas: Vec<f64>,
    /// `sim[d][g]`
    pub sim: Vec<Vec<f64>>,
}

/// AP summary in percent. `None` marks splits without any counted ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
    pub ar: Option<f64>,
}

struct ImageEval {
    scores: Vec<f64>,
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    counted_gt: usize,
}

fn evaluate_image(img: &ApImage, range: (f64, f64), max_dets: usize) -> ImageEval {
    let ng = img.gt_areas.len();
    let gt_ig: Vec<bool> = (0..ng)
        .map(|g| img.gt_ignore.get(g).copied().unwrap_or(false) || img.gt_areas[g] < range.0 || img.gt_areas[g] > range.1)
        .collect();
    let mut gt_order: Vec<usize> = (0..ng).collect();
    gt_order.sort_by_key(|&g| gt_ig[g]);
    let mut dt_order: Vec<usize> = (0..img.dt_scores.len()).collect();
    dt_order.sort_by(|&a, &b| img.dt_scores[b].total_cmp(&img.dt_scores[a]));
    dt_order.truncate(max_dets);

    let mut matched = vec![vec![false; dt_order.len()]; COCO_THRESHOLDS];
    let mut ignored = vec![vec![false; dt_order.len()]; COCO_THRESHOLDS];
    for t in 0..COCO_THRESHOLDS {
        let mut gt_taken = vec![false; ng];
        for (k, &d) in dt_order.iter().enumerate() {
            let mut best = coco_threshold(t).min(1.0 - 1e-10);
            let mut m: Option<usize> = None;
            for &g in &gt_order {
                if gt_taken[g] {
                    continue;
                }
                // a counted match already beats any ignored gt
                if m.is_some_and(|m| !gt_ig[m]) && gt_ig[g] {
                    break;
                }
                if img.sim[d][g] < best {
                    continue;
                }
                best = img.sim[d][g];
                m = Some(g);
            }
            if let Some(g) = m {
                gt_taken[g] = true;
                matched[t][k] = true;
                ignored[t][k] = gt_ig[g];
            } else {
                let a = img.dt_areas[d];
                ignored[t][k] = a < range.0 || a > range.1;
            }
        }
    }
    ImageEval {
        scores: dt_order.iter().map(|&d| img.dt_scores[d]).collect(),
        matched,
        ignored,
        counted_gt: gt_ig.iter().filter(|i| !**i).count(),
    }
}

/// Precision at the 101 recall points, and the final recall, for one
/// threshold. `None` when no gt is counted.
fn accumulate(evals: &[ImageEval], t: usize) -> Option<(f64, f64)> {
    let npig: usize = evals.iter().map(|e| e.counted_gt).sum();
    if npig == 0 {
        return None;
    }
    let mut dets: Vec<(f64, bool, bool)> = Vec::new();
    for e in evals {
        for k in 0..e.scores.len() {
            dets.push((e.scores[k], e.matched[t][k], e.ignored[t][k]));
        }
    }
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut rc = Vec::new();
    let mut pr = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, m, ig) in &dets {
        if ig {
            // ignored detections leave the curve flat
        } else if m {
            tp += 1;
        } else {
            fp += 1;
        }
        rc.push(tp as f64 / npig as f64);
        pr.push(if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 });
    }
    let recall = rc.last().copied().unwrap_or(0.0);
    for i in (1..pr.len()).rev() {
        if pr[i] > pr[i - 1] {
            pr[i - 1] = pr[i];
        }
    }
    let mut sum = 0.0;
    for r in 0..RECALL_POINTS {
        let thr = r as f64 / (RECALL_POINTS - 1) as f64;
        let idx = rc.partition_point(|&x| x < thr);
        if idx < pr.len() {
            sum += pr[idx];
        }
    }
    Some((sum / RECALL_POINTS as f64, recall))
}

fn mean(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let vals: Vec<f64> = v.flatten().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// COCO-style AP over a set of images with greedy, score-ordered matching.
pub fn coco_ap(images: &[ApImage], max_dets: usize) -> ApSummary {
    let run = |range| {
        let evals: Vec<ImageEval> = images.iter().map(|img| evaluate_image(img, range, max_dets)).collect();
        (0..COCO_THRESHOLDS).map(|t| accumulate(&evals, t)).collect::<Vec<_>>()
    };
    let pct = |v: Option<f64>| v.map(|x| 100.0 * x);
    let all = run(AREA_ALL);
    let medium = run(AREA_MEDIUM);
    let large = run(AREA_LARGE);
    ApSummary {
        ap: pct(mean(all.iter().map(|r| r.map(|x| x.0)))),
        ap50: pct(all[0].map(|x| x.0)),
        ap75: pct(all[5].map(|x| x.0)),
        ap_m: pct(mean(medium.iter().map(|r| r.map(|x| x.0)))),
        ap_l: pct(mean(large.iter().map(|r| r.map(|x| x.0)))),
        ar: pct(mean(all.iter().map(|r| r.map(|x| x.1)))),
    }
}

/// Boxes for one image of the detection benchmark.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetImage {
    pub gts: Vec<BoxXYXY>,
    /// `(box, confidence)`
    pub preds: Vec<(BoxXYXY, f64)>,
}

pub const DETECTION_MAX_DETS: usize = 100;

impl DetImage {
    pub fn to_ap_image(&self) -> ApImage {
        ApImage {
            gt_areas: self.gts.iter().map(BoxXYXY::area).collect(),
            gt_ignore: vec![false; self.gts.len()],
            dt_scores: self.preds.iter().map(|p| p.1).collect(),
            dt_areas: self.preds.iter().map(|p| p.0.area()).collect(),
            sim: self.preds.iter().map(|(d, _)| self.gts.iter().map(|g| iou(d, g)).collect()).collect(),
        }
    }
}

/// Box-IoU detection AP (mAP over 0.50:0.95, AP50, AP75, AP_M, AP_L, AR@100).
pub fn detection_ap(images: &[DetImage]) -> ApSummary {
    let imgs: Vec<ApImage> = images.iter().map(DetImage::to_ap_image).collect();
    coco_ap(&imgs, DETECTION_MAX_DETS)
}

// ---------------------------------------------------------------- poses

pub const DEFAULT_KAPPA: f64 = 0.08;
pub const KEYPOINT_MAX_DETS: usize = 20;

fn check_pose(p: &[Keypoint]) -> Result<(), MetricsError> {
    if p.len() != NUM_JOINTS {
        return Err(MetricsError::Dimension { what: "joints", expected: NUM_JOINTS, got: p.len() });
    }
    Ok(())
}

/// Object keypoint similarity: mean over labeled gt joints of
/// `exp(-d² / (2 s² κ²))` with `s²` the gt box area. `None` if no joint is
/// labeled.
pub fn oks(gt: &[Keypoint], pred: &[Keypoint], area: f64, kappa: &[f64]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for (j, (g, p)) in gt.iter().zip(pred).enumerate() {
        if g.v == 0 {
            continue;
        }
        let d2 = (g.x - p.x).powi(2) + (g.y - p.y).powi(2);
        sum += (-d2 / (2.0 * area * kappa[j] * kappa[j])).exp();
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// One image for keypoint AP.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseImage {
    /// `(gt box, gt pose)`
    pub gts: Vec<(BoxXYXY, Vec<Keypoint>)>,
    /// `(predicted pose, instance confidence)`
    pub preds: Vec<(Vec<Keypoint>, f64)>,
}

fn pose_extent_area(p: &[Keypoint]) -> f64 {
    let pts: Vec<&Keypoint> = p.iter().filter(|k| k.v > 0).collect();
    if pts.is_empty() {
        return 0.0;
    }
    let (mut x1, mut y1, mut x2, mut y2) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in pts {
        x1 = x1.min(k.x);
        y1 = y1.min(k.y);
        x2 = x2.max(k.x);
        y2 = y2.max(k.y);
    }
    (x2 - x1) * (y2 - y1)
}

/// OKS-based AP/AR with per-joint constants `kappa` (length 16).
pub fn keypoint_ap(images: &[PoseImage], kappa: &[f64]) -> Result<ApSummary, MetricsError> {
    if kappa.len() != NUM_JOINTS {
        return Err(MetricsError::Dimension { what: "joint constants", expected: NUM_JOINTS, got: kappa.len() });
    }
    let mut imgs = Vec::with_capacity(images.len());
    for img in images {
        for (_, g) in &img.gts {
            check_pose(g)?;
        }
        for (p, _) in &img.preds {
            check_pose(p)?;
        }
        imgs.push(ApImage {
            gt_areas: img.gts.iter().map(|(b, _)| b.area()).collect(),
            gt_ignore: img.gts.iter().map(|(_, g)| g.iter().all(|k| k.v == 0)).collect(),
            dt_scores: img.preds.iter().map(|p| p.1).collect(),
            dt_areas: img.preds.iter().map(|(p, _)| pose_extent_area(p)).collect(),
            sim: img
                .preds
                .iter()
                .map(|(p, _)| img.gts.iter().map(|(b, g)| oks(g, p, b.area(), kappa).unwrap_or(0.0)).collect())
                .collect(),
        });
    }
    Ok(coco_ap(&imgs, KEYPOINT_MAX_DETS))
}

/// One gt instance for PCK. A missing prediction counts every labeled joint
/// as wrong.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PckSample<'a> {
    pub gt: &'a [Keypoint],
    pub pred: Option<&'a [Keypoint]>,
    pub gt_box: BoxXYXY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckResult {
    /// Percent per joint, `None` for joints never labeled.
    pub per_joint: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// Fraction of labeled joints within `delta · max(box h, box w)` pixels.
pub fn pck(samples: &[PckSample], delta: f64) -> Result<PckResult, MetricsError> {
    let mut hit = [0u64; NUM_JOINTS];
    let mut total = [0u64; NUM_JOINTS];
    for s in samples {
        check_pose(s.gt)?;
        if let Some(p) = s.pred {
            check_pose(p)?;
        }
        let thr = delta * s.gt_box.width().max(s.gt_box.height());
        for j in 0..NUM_JOINTS {
            let g = s.gt[j];
            if g.v == 0 {
                continue;
            }
            total[j] += 1;
            if let Some(p) = s.pred {
                if (g.x - p[j].x).hypot(g.y - p[j].y) <= thr {
                    hit[j] += 1;
                }
            }
        }
    }
    let per_joint = (0..NUM_JOINTS)
        .map(|j| (total[j] > 0).then(|| 100.0 * hit[j] as f64 / total[j] as f64))
        .collect();
    let (h, t): (u64, u64) = (hit.iter().sum(), total.iter().sum());
    Ok(PckResult { per_joint, mean: (t > 0).then(|| 100.0 * h as f64 / t as f64) })
}

// ---------------------------------------------------------------- behaviors

/// Boxes of one annotated frame for behavior AP.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BehaviorFrame {
    /// `(box, active class indices)`
    pub gts: Vec<(BoxXYXY, Vec<usize>)>,
    /// `(box, per-class scores)`
    pub preds: Vec<(BoxXYXY, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMetrics {
    pub map: Option<f64>,
    pub map_l: Option<f64>,
    pub map_o: Option<f64>,
    pub map_s: Option<f64>,
    pub map_others: Option<f64>,
    /// Percent per class; `None` for classes without gt instances.
    pub per_class: Vec<Option<f64>>,
}

/// Area under the precision envelope for score-ordered TP flags.
pub fn voc_average_precision(tp_sorted: &[bool], num_positives: usize) -> Option<f64> {
    if num_positives == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut recall = vec![0.0];
    let mut precision = vec![0.0];
    for (i, &t) in tp_sorted.iter().enumerate() {
        tp += usize::from(t);
        recall.push(tp as f64 / num_positives as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        if recall[i] != recall[i - 1] {
            ap += (recall[i] - recall[i - 1]) * precision[i];
        }
    }
    Some(ap)
}

/// Frame-level per-class AP. For class `k`, every prediction contributes one
/// detection scored by its class-`k` probability; in score order, a detection
/// is a true positive when its highest-IoU class-`k` gt in the same frame has
/// IoU >= `threshold` and has not been claimed yet.
///
/// With `use_gt_boxes`, each predicted box is first replaced by the
/// highest-IoU gt box of its frame, isolating classification quality.
pub fn behavior_map(frames: &[BehaviorFrame], threshold: f64, use_gt_boxes: bool) -> Result<BehaviorMetrics, MetricsError> {
    let k = ETHOGRAM.len();
    for f in frames {
        for (_, labels) in &f.gts {
            if let Some(&c) = labels.iter().find(|&&c| c >= k) {
                return Err(MetricsError::UnknownClass { class: c, k });
            }
        }
        for (_, s) in &f.preds {
            if s.len() != k {
                return Err(MetricsError::Dimension { what: "behavior scores", expected: k, got: s.len() });
            }
        }
    }
    let boxes: Vec<Vec<BoxXYXY>> = frames
        .iter()
        .map(|f| {
            f.preds
                .iter()
                .map(|(b, _)| {
                    if !use_gt_boxes {
                        return *b;
                    }
                    let mut best: Option<(f64, BoxXYXY)> = None;
                    for (g, _) in &f.gts {
                        let s = iou(b, g);
                        if best.is_none_or(|(bs, _)| s > bs) {
                            best = Some((s, *g));
                        }
                    }
                    best.map_or(*b, |(_, g)| g)
                })
                .collect()
        })
        .collect();

    let mut per_class = Vec::with_capacity(k);
    for class in 0..k {
        let npos: usize = frames.iter().map(|f| f.gts.iter().filter(|(_, l)| l.contains(&class)).count()).sum();
        // (score, frame, pred index)
        let mut dets: Vec<(f64, usize, usize)> = Vec::new();
        for (fi, f) in frames.iter().enumerate() {
            for (pi, (_, s)) in f.preds.iter().enumerate() {
                dets.push((s[class], fi, pi));
            }
        }
        dets.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.gts.len()]).collect();
        let mut flags = Vec::with_capacity(dets.len());
        for &(_, fi, pi) in &dets {
            let pb = &boxes[fi][pi];
            let mut best: Option<(f64, usize)> = None;
            for (gi, (g, l)) in frames[fi].gts.iter().enumerate() {
                if !l.contains(&class) {
                    continue;
                }
                let s = iou(pb, g);
                if best.is_none_or(|(bs, _)| s > bs) {
                    best = Some((s, gi));
                }
            }
            let tp = match best {
                Some((s, gi)) if s >= threshold && !taken[fi][gi] => {
                    taken[fi][gi] = true;
                    true
                }
                _ => false,
            };
            flags.push(tp);
        }
        per_class.push(voc_average_precision(&flags, npos).map(|x| 100.0 * x));
    }
    let over = |cat: Option<Supercategory>| {
        mean(ETHOGRAM.iter().zip(&per_class).filter(|(e, _)| cat.is_none_or(|c| e.category == c)).map(|(_, ap)| *ap))
    };
    Ok(BehaviorMetrics {
        map: over(None),
        map_l: over(Some(Supercategory::Locomotion)),
        map_o: over(Some(Supercategory::Object)),
        map_s: over(Some(Supercategory::Social)),
        map_others: over(Some(Supercategory::Others)),
        per_class,
    })
}
