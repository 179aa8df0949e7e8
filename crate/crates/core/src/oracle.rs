//! Slow, from-definition reference implementations used to cross-check the
//! optimized code paths in tests and in `selfcheck`.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::assign::CostMatrix;
use crate::dataio::{Supercategory, ETHOGRAM, NUM_BEHAVIORS};
use crate::geometry::{giou, iou, BoxXYXY};
use crate::kernels::HeadOutputs;
use crate::loss::{LossWeights, SetTarget, EPS};
use crate::metrics::{
    coco_threshold, hota_alpha, ApSummary, BehaviorFrame, BehaviorMetrics, ClearCounts, DetImage, HotaScores,
    IdentityCounts, TrackedBox, AREA_ALL, AREA_LARGE, AREA_MEDIUM, COCO_THRESHOLDS, HOTA_ALPHAS, RECALL_POINTS,
};

/// All injective maps from `0..k` into `0..n`, as index vectors.
pub fn injections(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, n: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                rec(k, n, cur, used, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(k, n, &mut Vec::with_capacity(k), &mut vec![false; n], &mut out);
    }
    out
}

/// Exhaustive minimum over every maximum matching of `c`.
pub fn brute_force_assignment(c: &CostMatrix) -> (f64, Vec<(usize, usize)>) {
    let (r, k) = (c.rows(), c.cols());
    let mut best = (f64::INFINITY, Vec::new());
    if r <= k {
        for map in injections(r, k) {
            let cost: f64 = map.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum();
            if cost < best.0 {
                best = (cost, map.iter().enumerate().map(|(i, &j)| (i, j)).collect());
            }
        }
    } else {
        for map in injections(k, r) {
            let cost: f64 = map.iter().enumerate().map(|(j, &i)| c.get(i, j)).sum();
            if cost < best.0 {
                let mut pairs: Vec<(usize, usize)> = map.iter().enumerate().map(|(j, &i)| (i, j)).collect();
                pairs.sort_unstable();
                best = (cost, pairs);
            }
        }
    }
    // report the cost summed in row order, the same order every solver uses
    best.1.sort_unstable();
    (c.cost_of(&best.1), best.1)
}

/// Central finite difference of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central finite difference of `f` at `x` along every coordinate.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Set-prediction loss by exhaustive matching: every injective map from
/// ground truths to queries is scored with the matching cost, the cheapest
/// is kept, and the loss is evaluated term by term under it.
pub fn set_loss_exhaustive(out: &HeadOutputs, gts: &[SetTarget], w: &LossWeights) -> f64 {
    let q = out.num_queries();
    let probs: Vec<f64> = (0..q).map(|i| out.class_probs[i].clamp(EPS, 1.0 - EPS)).collect();
    let pair_cost = |qi: usize, g: &SetTarget| -> f64 {
        let b = out.box_at(qi);
        let l1: f64 = b.to_array().iter().zip(g.bbox.to_array()).map(|(a, c)| (a - c).abs()).sum();
        let gi = giou(&b.to_unit_corners(), &g.bbox.to_unit_corners()).expect("valid boxes");
        w.cls * w.alpha * (1.0 - probs[qi]).powf(w.gamma) * -probs[qi].ln() + w.l1 * l1 + w.giou * (1.0 - gi)
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for map in injections(gts.len(), q) {
        let c: f64 = map.iter().zip(gts).map(|(&qi, g)| pair_cost(qi, g)).sum();
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, map));
        }
    }
    let map = best.map(|b| b.1).unwrap_or_default();

    let focal = |p: f64, t: bool| {
        let p = p.clamp(EPS, 1.0 - EPS);
        if t {
            -w.alpha * (1.0 - p).powf(w.gamma) * p.ln()
        } else {
            -(1.0 - w.alpha) * p.powf(w.gamma) * (1.0 - p).ln()
        }
    };
    let mut total = 0.0;
    for qi in 0..q {
        match map.iter().position(|&m| m == qi) {
            Some(gi) => {
                let g = &gts[gi];
                let b = out.box_at(qi);
                let l1: f64 = b.to_array().iter().zip(g.bbox.to_array()).map(|(a, c)| (a - c).abs()).sum();
                let gl = 1.0 - giou(&b.to_unit_corners(), &g.bbox.to_unit_corners()).expect("valid boxes");
                let beh: f64 = g.behaviors.iter().enumerate().map(|(k, &t)| focal(out.behaviors[[qi, k]], t)).sum();
                total += w.cls * focal(out.class_probs[qi], true) + w.l1 * l1 + w.giou * gl + w.behavior * beh;
            }
            None => total += w.cls * focal(out.class_probs[qi], false),
        }
    }
    total
}

/// Every partial one-to-one matching between `0..n` and `0..m` that only
/// uses pairs allowed by `ok`, as row-ordered pair lists.
pub fn partial_matchings(n: usize, m: usize, ok: &dyn Fn(usize, usize) -> bool) -> Vec<Vec<(usize, usize)>> {
    fn rec(
        i: usize,
        n: usize,
        m: usize,
        ok: &dyn Fn(usize, usize) -> bool,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if i == n {
            out.push(cur.clone());
            return;
        }
        rec(i + 1, n, m, ok, used, cur, out);
        for j in 0..m {
            if !used[j] && ok(i, j) {
                used[j] = true;
                cur.push((i, j));
                rec(i + 1, n, m, ok, used, cur, out);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, n, m, ok, &mut vec![false; m], &mut Vec::new(), &mut out);
    out
}

fn frames_of(boxes: &[TrackedBox]) -> BTreeMap<u64, Vec<&TrackedBox>> {
    let mut out: BTreeMap<u64, Vec<&TrackedBox>> = BTreeMap::new();
    for b in boxes {
        out.entry(b.frame).or_default().push(b);
    }
    out
}

fn all_frames(a: &[TrackedBox], b: &[TrackedBox]) -> BTreeSet<u64> {
    a.iter().chain(b).map(|t| t.frame).collect()
}

/// CLEAR tallies from the matching rule: in each frame, among all matchings
/// of pairs with IoU >= `threshold`, keep the one that continues the most
/// previous-frame pairs, then has the largest IoU total. A switch is a gt
/// matched to an id other than the one it was last matched to.
pub fn clear_counts_bruteforce(pred: &[TrackedBox], gt: &[TrackedBox], threshold: f64) -> ClearCounts {
    let g = frames_of(gt);
    let p = frames_of(pred);
    let mut c = ClearCounts::default();
    let mut last: BTreeMap<u64, u64> = BTreeMap::new();
    let mut prev: BTreeMap<u64, u64> = BTreeMap::new();
    for f in all_frames(pred, gt) {
        let gs = g.get(&f).cloned().unwrap_or_default();
        let ps = p.get(&f).cloned().unwrap_or_default();
        let ok = |i: usize, j: usize| {
            let s = iou(&gs[i].bbox, &ps[j].bbox);
            s >= threshold && s > 0.0
        };
        // (continuations, total IoU, matching)
        type Choice = (usize, f64, Vec<(usize, usize)>);
        let mut best: Option<Choice> = None;
        for m in partial_matchings(gs.len(), ps.len(), &ok) {
            let cont = m.iter().filter(|&&(i, j)| prev.get(&gs[i].id) == Some(&ps[j].id)).count();
            let total: f64 = m.iter().map(|&(i, j)| iou(&gs[i].bbox, &ps[j].bbox)).sum();
            let better = match &best {
                None => true,
                Some((bc, bt, _)) => cont > *bc || (cont == *bc && total > *bt),
            };
            if better {
                best = Some((cont, total, m));
            }
        }
        let pairs = best.map(|b| b.2).unwrap_or_default();
        let mut step = BTreeMap::new();
        for &(i, j) in &pairs {
            let (gid, pid) = (gs[i].id, ps[j].id);
            if last.get(&gid).is_some_and(|&l| l != pid) {
                c.idsw += 1;
            }
            last.insert(gid, pid);
            step.insert(gid, pid);
            c.iou_sum += iou(&gs[i].bbox, &ps[j].bbox);
            let ((ax, ay), (bx, by)) = (gs[i].bbox.center(), ps[j].bbox.center());
            c.dist_sum += (ax - bx).hypot(ay - by);
        }
        c.gt += gs.len() as u64;
        c.tp += pairs.len() as u64;
        c.fn_ += (gs.len() - pairs.len()) as u64;
        c.fp += (ps.len() - pairs.len()) as u64;
        prev = step;
    }
    c
}

/// Identity counts by trying every one-to-one pairing of gt and predicted
/// identities and counting co-located frames directly.
pub fn identity_counts_bruteforce(pred: &[TrackedBox], gt: &[TrackedBox], threshold: f64) -> IdentityCounts {
    let gids: Vec<u64> = gt.iter().map(|t| t.id).collect::<BTreeSet<_>>().into_iter().collect();
    let pids: Vec<u64> = pred.iter().map(|t| t.id).collect::<BTreeSet<_>>().into_iter().collect();
    let mut best = 0u64;
    for m in partial_matchings(gids.len(), pids.len(), &|_, _| true) {
        let mut tp = 0u64;
        for &(i, j) in &m {
            for a in gt.iter().filter(|t| t.id == gids[i]) {
                for b in pred.iter().filter(|t| t.id == pids[j] && t.frame == a.frame) {
                    let s = iou(&a.bbox, &b.bbox);
                    if s >= threshold && s > 0.0 {
                        tp += 1;
                    }
                }
            }
        }
        best = best.max(tp);
    }
    IdentityCounts { idtp: best, idfp: pred.len() as u64 - best, idfn: gt.len() as u64 - best }
}

/// HOTA from its definition. Identity alignment is the Jaccard-style ratio
/// of soft co-occurrence to the union of the two tracks' frames; each frame
/// takes the matching with the largest total alignment x IoU, and at every α
/// each true positive scores `TPA / (TPA + FNA + FPA)` for its identity pair.
pub fn hota_bruteforce(pred: &[TrackedBox], gt: &[TrackedBox]) -> Option<HotaScores> {
    if gt.is_empty() {
        return None;
    }
    let g = frames_of(gt);
    let p = frames_of(pred);
    let frames = all_frames(pred, gt);
    let frames_with = |boxes: &[TrackedBox], id: u64| boxes.iter().filter(|t| t.id == id).count() as f64;

    let mut soft: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    for f in &frames {
        let gs = g.get(f).cloned().unwrap_or_default();
        let ps = p.get(f).cloned().unwrap_or_default();
        for a in &gs {
            for b in &ps {
                let s = iou(&a.bbox, &b.bbox);
                let row: f64 = ps.iter().map(|x| iou(&a.bbox, &x.bbox)).sum();
                let col: f64 = gs.iter().map(|x| iou(&x.bbox, &b.bbox)).sum();
                let denom = row + col - s;
                if denom > f64::EPSILON {
                    *soft.entry((a.id, b.id)).or_default() += s / denom;
                }
            }
        }
    }
    let align = |gid: u64, pid: u64| {
        let s = soft.get(&(gid, pid)).copied().unwrap_or(0.0);
        s / (frames_with(gt, gid) + frames_with(pred, pid) - s)
    };

    // matched (gid, pid, frame, iou) per frame
    let mut frame_pairs: Vec<Vec<(u64, u64, f64)>> = Vec::new();
    let mut per_frame_sizes = Vec::new();
    for f in &frames {
        let gs = g.get(f).cloned().unwrap_or_default();
        let ps = p.get(f).cloned().unwrap_or_default();
        let mut best: Option<(f64, Vec<(usize, usize)>)> = None;
        for m in partial_matchings(gs.len(), ps.len(), &|_, _| true) {
            let score: f64 = m.iter().map(|&(i, j)| align(gs[i].id, ps[j].id) * iou(&gs[i].bbox, &ps[j].bbox)).sum();
            if best.as_ref().is_none_or(|(b, _)| score > *b) {
                best = Some((score, m));
            }
        }
        let pairs = best.map(|b| b.1).unwrap_or_default();
        frame_pairs.push(pairs.iter().map(|&(i, j)| (gs[i].id, ps[j].id, iou(&gs[i].bbox, &ps[j].bbox))).collect());
        per_frame_sizes.push((gs.len(), ps.len()));
    }

    let (mut h, mut d, mut a, mut l) = (0.0, 0.0, 0.0, 0.0);
    for ai in 0..HOTA_ALPHAS {
        let alpha = hota_alpha(ai);
        let tps: Vec<(u64, u64, f64)> =
            frame_pairs.iter().flatten().filter(|(_, _, s)| *s >= alpha - f64::EPSILON).copied().collect();
        let n_gt: usize = per_frame_sizes.iter().map(|s| s.0).sum();
        let n_pr: usize = per_frame_sizes.iter().map(|s| s.1).sum();
        let tp = tps.len();
        let det = tp as f64 / (n_gt + n_pr - tp).max(1) as f64;
        let mut ass = 0.0;
        for &(gid, pid, _) in &tps {
            let tpa = tps.iter().filter(|t| t.0 == gid && t.1 == pid).count() as f64;
            let fna = frames_with(gt, gid) - tpa;
            let fpa = frames_with(pred, pid) - tpa;
            ass += tpa / (tpa + fna + fpa);
        }
        let ass = if tp > 0 { ass / tp as f64 } else { 0.0 };
        let loc = if tp > 0 { tps.iter().map(|t| t.2).sum::<f64>() / tp as f64 } else { 1.0 };
        h += (det * ass).sqrt();
        d += det;
        a += ass;
        l += loc;
    }
    let n = HOTA_ALPHAS as f64;
    Some(HotaScores { hota: 100.0 * h / n, det_a: 100.0 * d / n, ass_a: 100.0 * a / n, loc_a: 100.0 * l / n })
}

/// COCO box AP from its definition at every threshold and area range:
/// detections claim gts greedily by confidence, interpolated precision at
/// recall `r` is the best precision at any rank reaching recall `r`.
pub fn detection_ap_bruteforce(images: &[DetImage], max_dets: usize) -> ApSummary {
    // (ap, recall) or None when no counted gt
    let run = |range: (f64, f64), t: f64| -> Option<(f64, f64)> {
        let inside = |a: f64| a >= range.0 && a <= range.1;
        let counted: usize = images.iter().map(|im| im.gts.iter().filter(|b| inside(b.area())).count()).sum();
        if counted == 0 {
            return None;
        }
        // (score, image, det) with a per-detection outcome
        let mut ranked: Vec<(f64, usize, usize, Option<bool>)> = Vec::new();
        for (ii, im) in images.iter().enumerate() {
            let mut order: Vec<usize> = (0..im.preds.len()).collect();
            order.sort_by(|&a, &b| im.preds[b].1.total_cmp(&im.preds[a].1));
            order.truncate(max_dets);
            let mut taken = vec![false; im.gts.len()];
            for d in order {
                let db = &im.preds[d].0;
                let pick = |want_counted: bool, taken: &[bool]| {
                    let mut best: Option<(f64, usize)> = None;
                    for (gi, gb) in im.gts.iter().enumerate() {
                        if taken[gi] || inside(gb.area()) != want_counted {
                            continue;
                        }
                        let s = iou(db, gb);
                        if s >= t.min(1.0 - 1e-10) && best.is_none_or(|(b, _)| s >= b) {
                            best = Some((s, gi));
                        }
                    }
                    best.map(|b| b.1)
                };
                // Some(true) tp, Some(false) fp, None ignored
                let outcome = if let Some(gi) = pick(true, &taken) {
                    taken[gi] = true;
                    Some(true)
                } else if let Some(gi) = pick(false, &taken) {
                    taken[gi] = true;
                    None
                } else if inside(db.area()) {
                    Some(false)
                } else {
                    None
                };
                ranked.push((im.preds[d].1, ii, d, outcome));
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut points: Vec<(f64, f64)> = Vec::new(); // (recall, precision) per rank
        let (mut tp, mut fp) = (0usize, 0usize);
        for r in &ranked {
            match r.3 {
                Some(true) => tp += 1,
                Some(false) => fp += 1,
                None => {}
            }
            let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            points.push((tp as f64 / counted as f64, prec));
        }
        let mut sum = 0.0;
        for k in 0..RECALL_POINTS {
            let r = k as f64 / (RECALL_POINTS - 1) as f64;
            sum += points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        }
        Some((sum / RECALL_POINTS as f64, points.last().map_or(0.0, |p| p.0)))
    };
    let mean = |v: Vec<Option<f64>>| {
        let vals: Vec<f64> = v.into_iter().flatten().collect();
        (!vals.is_empty()).then(|| 100.0 * vals.iter().sum::<f64>() / vals.len() as f64)
    };
    let over = |range| (0..COCO_THRESHOLDS).map(|t| run(range, coco_threshold(t))).collect::<Vec<_>>();
    let all = over(AREA_ALL);
    ApSummary {
        ap: mean(all.iter().map(|r| r.map(|x| x.0)).collect()),
        ap50: all[0].map(|x| 100.0 * x.0),
        ap75: all[5].map(|x| 100.0 * x.0),
        ap_m: mean(over(AREA_MEDIUM).iter().map(|r| r.map(|x| x.0)).collect()),
        ap_l: mean(over(AREA_LARGE).iter().map(|r| r.map(|x| x.0)).collect()),
        ar: mean(all.iter().map(|r| r.map(|x| x.1)).collect()),
    }
}

/// Behavior AP per class from its definition: precision at each true
/// positive is replaced by the best precision at that rank or later, and AP
/// is the mean of those values over all gt instances of the class.
pub fn behavior_map_bruteforce(frames: &[BehaviorFrame], threshold: f64) -> BehaviorMetrics {
    let mut per_class = Vec::with_capacity(NUM_BEHAVIORS);
    for class in 0..NUM_BEHAVIORS {
        let npos: usize = frames.iter().flat_map(|f| &f.gts).filter(|(_, l)| l.contains(&class)).count();
        if npos == 0 {
            per_class.push(None);
            continue;
        }
        let mut dets: Vec<(f64, usize, &BoxXYXY)> =
            frames.iter().enumerate().flat_map(|(fi, f)| f.preds.iter().map(move |(b, s)| (s[class], fi, b))).collect();
        dets.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut claimed: BTreeSet<(usize, usize)> = BTreeSet::new();
        let mut tp_flags = Vec::new();
        for &(_, fi, b) in &dets {
            let cands: Vec<(usize, f64)> = frames[fi]
                .gts
                .iter()
                .enumerate()
                .filter(|(_, (_, l))| l.contains(&class))
                .map(|(gi, (g, _))| (gi, iou(b, g)))
                .collect();
            // first gt with the largest IoU
            let best = cands.iter().fold(None, |acc: Option<(usize, f64)>, &(gi, s)| match acc {
                Some((_, bs)) if bs >= s => acc,
                _ => Some((gi, s)),
            });
            let hit = best.is_some_and(|(gi, s)| s >= threshold && claimed.insert((fi, gi)));
            tp_flags.push(hit);
        }
        let prec: Vec<f64> = (0..tp_flags.len())
            .map(|k| tp_flags[..=k].iter().filter(|&&t| t).count() as f64 / (k + 1) as f64)
            .collect();
        let mut sum = 0.0;
        for k in 0..tp_flags.len() {
            if tp_flags[k] {
                sum += prec[k..].iter().copied().fold(0.0, f64::max);
            }
        }
        per_class.push(Some(100.0 * sum / npos as f64));
    }
    let over = |cat: Option<Supercategory>| {
        let v: Vec<f64> = ETHOGRAM
            .iter()
            .filter(|e| cat.is_none_or(|c| e.category == c))
            .filter_map(|e| per_class[e.index])
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    BehaviorMetrics {
        map: over(None),
        map_l: over(Some(Supercategory::Locomotion)),
        map_o: over(Some(Supercategory::Object)),
        map_s: over(Some(Supercategory::Social)),
        map_others: over(Some(Supercategory::Others)),
        per_class,
    }
}

/// A random tracking instance with at most `max_ids` identities per side
/// and at most `max_frames` frames. Predictions are jittered copies of the
/// gt with random identity relabeling, drops and a few free boxes, so that
/// overlaps and switches are common.
pub fn tiny_tracking_instance(seed: u64, max_ids: usize, max_frames: u64) -> (Vec<TrackedBox>, Vec<TrackedBox>) {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let frames = rng.random_range(1..=max_frames);
    let n_gt = rng.random_range(1..=max_ids);
    let n_pr = rng.random_range(1..=max_ids) as u64;
    let mut gt = Vec::new();
    let mut pred = Vec::new();
    let mut pos: Vec<(f64, f64)> = (0..n_gt).map(|_| (rng.random_range(0.0..60.0), rng.random_range(0.0..60.0))).collect();
    let sizes: Vec<(f64, f64)> = (0..n_gt).map(|_| (rng.random_range(10.0..30.0), rng.random_range(10.0..30.0))).collect();
    for f in 0..frames {
        let mut used = BTreeSet::new();
        for (k, (p, s)) in pos.iter_mut().zip(&sizes).enumerate() {
            p.0 += rng.random_range(-4.0..4.0);
            p.1 += rng.random_range(-4.0..4.0);
            if !rng.random_bool(0.85) {
                continue;
            }
            let b = BoxXYXY { x1: p.0, y1: p.1, x2: p.0 + s.0, y2: p.1 + s.1 };
            gt.push(TrackedBox::new(f, k as u64, b).with_conf(1.0));
            if rng.random_bool(0.8) {
                let id = rng.random_range(0..n_pr);
                if used.insert(id) {
                    let j = |r: &mut Xoshiro256StarStar| r.random_range(-3.0..3.0);
                    let pb = BoxXYXY { x1: b.x1 + j(&mut rng), y1: b.y1 + j(&mut rng), x2: b.x2 + j(&mut rng), y2: b.y2 + j(&mut rng) };
                    pred.push(TrackedBox::new(f, id, pb).with_conf(rng.random_range(0.05..1.0)));
                }
            }
        }
        if rng.random_bool(0.2) {
            let id = rng.random_range(0..n_pr);
            if used.insert(id) {
                let (x, y) = (rng.random_range(0.0..80.0), rng.random_range(0.0..80.0));
                pred.push(TrackedBox::new(f, id, BoxXYXY { x1: x, y1: y, x2: x + 15.0, y2: y + 15.0 }).with_conf(rng.random_range(0.05..1.0)));
            }
        }
    }
    if gt.is_empty() {
        gt.push(TrackedBox::new(0, 0, BoxXYXY { x1: 0.0, y1: 0.0, x2: 10.0, y2: 10.0 }).with_conf(1.0));
    }
    (pred, gt)
}

/// A random detection-AP instance over a few images, mixing box sizes
/// across the medium and large area ranges.
pub fn tiny_detection_instance(seed: u64) -> Vec<DetImage> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let n_img = rng.random_range(1..=3);
    (0..n_img)
        .map(|_| {
            let gts: Vec<BoxXYXY> = (0..rng.random_range(0..=3))
                .map(|_| {
                    let (x, y) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
                    let side = rng.random_range(20.0..140.0);
                    BoxXYXY { x1: x, y1: y, x2: x + side, y2: y + side * rng.random_range(0.7..1.3) }
                })
                .collect();
            let mut preds = Vec::new();
            for g in &gts {
                if rng.random_bool(0.8) {
                    let j = g.width() * 0.15;
                    let mut d = || rng.random_range(-j..j);
                    let b = BoxXYXY { x1: g.x1 + d(), y1: g.y1 + d(), x2: g.x2 + d(), y2: g.y2 + d() };
                    preds.push((b, rng.random_range(0.0..1.0)));
                }
            }
            for _ in 0..rng.random_range(0..=2) {
                let (x, y) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
                let side = rng.random_range(20.0..140.0);
                preds.push((BoxXYXY { x1: x, y1: y, x2: x + side, y2: y + side }, rng.random_range(0.0..1.0)));
            }
            DetImage { gts, preds }
        })
        .collect()
}

/// A random behavior instance: a few frames with up to three boxes, each
/// gt carrying a few classes drawn from a small pool so classes recur.
pub fn tiny_behavior_instance(seed: u64) -> Vec<BehaviorFrame> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let pool = [0usize, 2, 5, 7, 8, 19, 21];
    (0..rng.random_range(1..=4))
        .map(|_| {
            let mut f = BehaviorFrame::default();
            for _ in 0..rng.random_range(0..=3) {
                let (x, y) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                let g = BoxXYXY { x1: x, y1: y, x2: x + 30.0, y2: y + 30.0 };
                let mut labels: Vec<usize> = pool.iter().copied().filter(|_| rng.random_bool(0.35)).collect();
                if labels.is_empty() {
                    labels.push(pool[rng.random_range(0..pool.len())]);
                }
                f.gts.push((g, labels));
                if rng.random_bool(0.85) {
                    let mut d = || rng.random_range(-8.0..8.0);
                    let b = BoxXYXY { x1: g.x1 + d(), y1: g.y1 + d(), x2: g.x2 + d(), y2: g.y2 + d() };
                    let scores = (0..NUM_BEHAVIORS).map(|_| rng.random_range(0.0..1.0)).collect();
                    f.preds.push((b, scores));
                }
            }
            if rng.random_bool(0.3) {
                let (x, y) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
                let scores = (0..NUM_BEHAVIORS).map(|_| rng.random_range(0.0..1.0)).collect();
                f.preds.push((BoxXYXY { x1: x, y1: y, x2: x + 30.0, y2: y + 30.0 }, scores));
            }
            f
        })
        .collect()
}
