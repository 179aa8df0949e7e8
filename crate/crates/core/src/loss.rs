//! Focal, L1 and GIoU loss kernels with analytic gradients, and the
//! set-prediction loss over a bipartite-matched query set.
//!
//! Classification gradients are taken with respect to the pre-sigmoid logit.
//! Box gradients are taken with respect to the `(cx, cy, h, w)` components.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{detr_cost, hungarian, AssignError};
use crate::geometry::{BoxRel, GeometryError};
use crate::kernels::HeadOutputs;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before any logarithm.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{gts} ground truths exceed query capacity {queries}")]
    Capacity { gts: usize, queries: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("degenerate predicted box (h={h}, w={w})")]
    DegenerateBox { h: f64, w: f64 },
    #[error("invalid loss weights: {0}")]
    Weights(&'static str),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Loss and matching weights. `behavior` weights the multi-label behavior
/// term; the other three weight the class, L1 and GIoU terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub cls: f64,
    pub l1: f64,
    pub giou: f64,
    pub behavior: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 2.0,
            l1: 5.0,
            giou: 2.0,
            behavior: 1.0,
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let lambdas = [self.cls, self.l1, self.giou, self.behavior];
        if !lambdas.iter().all(|l| l.is_finite() && *l >= 0.0) {
            return Err(LossError::Weights("lambdas must be finite and nonnegative"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LossError::Weights("alpha must lie in (0, 1)"));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(LossError::Weights("gamma must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls_term: f64,
    pub behavior_term: f64,
    pub l1_term: f64,
    pub giou_term: f64,
    /// `(query, ground truth)` pairs chosen by the matcher.
    pub matched: Vec<(usize, usize)>,
}

impl LossBreakdown {
    pub fn recompose(&self, w: &LossWeights) -> f64 {
        w.cls * self.cls_term + w.behavior * self.behavior_term + w.l1 * self.l1_term + w.giou * self.giou_term
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary focal loss on a probability, returning `(value, d value / d logit)`.
pub fn focal_loss(p: f64, target: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = p.clamp(EPS, 1.0 - EPS);
    let q = 1.0 - p;
    if target {
        let lp = p.ln();
        let value = -alpha * q.powf(gamma) * lp;
        let grad = alpha * (gamma * p * q.powf(gamma) * lp - q.powf(gamma + 1.0));
        (value, grad)
    } else {
        let lq = q.ln();
        let value = -(1.0 - alpha) * p.powf(gamma) * lq;
        let grad = -(1.0 - alpha) * (gamma * p.powf(gamma) * q * lq - p.powf(gamma + 1.0));
        (value, grad)
    }
}

/// Sum of absolute component differences over `(cx, cy, h, w)`.
/// The subgradient is 0 where a component matches exactly.
pub fn l1_box_loss(pred: &BoxRel, gt: &BoxRel) -> (f64, [f64; 4]) {
    let (p, g) = (pred.to_array(), gt.to_array());
    let mut grad = [0.0; 4];
    let mut value = 0.0;
    for k in 0..4 {
        let d = p[k] - g[k];
        value += d.abs();
        grad[k] = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    (value, grad)
}

/// `1 - GIoU(pred, gt)` on unit-square corners, with the gradient w.r.t. the
/// predicted `(cx, cy, h, w)`.
pub fn giou_loss(pred: &BoxRel, gt: &BoxRel) -> Result<(f64, [f64; 4]), LossError> {
    if !(pred.h > 0.0 && pred.w > 0.0) {
        return Err(LossError::DegenerateBox { h: pred.h, w: pred.w });
    }
    if !(gt.h > 0.0 && gt.w > 0.0) {
        return Err(LossError::Geometry(GeometryError::Degenerate));
    }
    let p = pred.to_unit_corners();
    let g = gt.to_unit_corners();

    let (pw, ph) = (p.x2 - p.x1, p.y2 - p.y1);
    let area_p = pw * ph;
    let area_g = (g.x2 - g.x1) * (g.y2 - g.y1);

    let iw_raw = p.x2.min(g.x2) - p.x1.max(g.x1);
    let ih_raw = p.y2.min(g.y2) - p.y1.max(g.y1);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let union = area_p + area_g - inter;

    let cw = p.x2.max(g.x2) - p.x1.min(g.x1);
    let ch = p.y2.max(g.y2) - p.y1.min(g.y1);
    let enclosing = cw * ch;

    let giou = inter / union - (enclosing - union) / enclosing;

    // partials w.r.t. the predicted corners [x1, y1, x2, y2]
    let d_iw = [
        if iw_raw > 0.0 && p.x1 > g.x1 { -1.0 } else { 0.0 },
        0.0,
        if iw_raw > 0.0 && p.x2 < g.x2 { 1.0 } else { 0.0 },
        0.0,
    ];
    let d_ih = [
        0.0,
        if ih_raw > 0.0 && p.y1 > g.y1 { -1.0 } else { 0.0 },
        0.0,
        if ih_raw > 0.0 && p.y2 < g.y2 { 1.0 } else { 0.0 },
    ];
    let d_cw = [if p.x1 < g.x1 { -1.0 } else { 0.0 }, 0.0, if p.x2 > g.x2 { 1.0 } else { 0.0 }, 0.0];
    let d_ch = [0.0, if p.y1 < g.y1 { -1.0 } else { 0.0 }, 0.0, if p.y2 > g.y2 { 1.0 } else { 0.0 }];
    let d_area = [-ph, -pw, ph, pw];

    let mut d_corner = [0.0; 4];
    for k in 0..4 {
        let d_inter = d_iw[k] * ih + iw * d_ih[k];
        let d_union = d_area[k] - d_inter;
        let d_encl = d_cw[k] * ch + cw * d_ch[k];
        // GIoU = I/U - 1 + U/C
        let d_giou = d_inter / union - inter * d_union / (union * union) + d_union / enclosing
            - union * d_encl / (enclosing * enclosing);
        d_corner[k] = -d_giou;
    }
    // x1 = cx - w/2, x2 = cx + w/2, y1 = cy - h/2, y2 = cy + h/2
    let grad = [
        d_corner[0] + d_corner[2],
        d_corner[1] + d_corner[3],
        0.5 * (d_corner[3] - d_corner[1]),
        0.5 * (d_corner[2] - d_corner[0]),
    ];
    Ok((1.0 - giou, grad))
}

/// Sum of per-class focal losses over a multi-label probability vector.
pub fn multilabel_focal(probs: &[f64], target: &[bool], alpha: f64, gamma: f64) -> Result<(f64, Vec<f64>), LossError> {
    if probs.len() != target.len() {
        return Err(LossError::Dimension {
            expected: probs.len(),
            got: target.len(),
        });
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &t) in probs.iter().zip(target) {
        let (v, g) = focal_loss(p, t, alpha, gamma);
        value += v;
        grad.push(g);
    }
    Ok((value, grad))
}

/// One ground-truth object for the set loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SetTarget {
    pub bbox: BoxRel,
    pub behaviors: Vec<bool>,
}

/// Hungarian-matched set-prediction loss.
///
/// Matched queries pay the positive class focal term, L1, GIoU and the
/// behavior focal term. Unmatched queries pay only the negative class term.
pub fn set_prediction_loss(out: &HeadOutputs, gts: &[SetTarget], w: &LossWeights) -> Result<LossBreakdown, LossError> {
    w.validate()?;
    let q = out.num_queries();
    if gts.len() > q {
        return Err(LossError::Capacity {
            gts: gts.len(),
            queries: q,
        });
    }
    let k = out.num_behaviors();
    for t in gts {
        if t.behaviors.len() != k {
            return Err(LossError::Dimension {
                expected: k,
                got: t.behaviors.len(),
            });
        }
    }

    let preds: Vec<(BoxRel, f64)> = (0..q)
        .map(|i| (out.box_at(i), out.class_probs[i].clamp(EPS, 1.0 - EPS)))
        .collect();
    let gt_boxes: Vec<BoxRel> = gts.iter().map(|t| t.bbox).collect();
    let matching = hungarian(&detr_cost(&preds, &gt_boxes, w)?);

    let mut matched_gt = vec![None; q];
    for &(qi, gi) in &matching.pairs {
        matched_gt[qi] = Some(gi);
    }

    let (mut cls, mut beh, mut l1, mut gi_term) = (0.0, 0.0, 0.0, 0.0);
    for (qi, m) in matched_gt.iter().enumerate() {
        let p = out.class_probs[qi];
        match m {
            Some(gi) => {
                cls += focal_loss(p, true, w.alpha, w.gamma).0;
                let pb = out.box_at(qi);
                l1 += l1_box_loss(&pb, &gts[*gi].bbox).0;
                gi_term += giou_loss(&pb, &gts[*gi].bbox)?.0;
                let probs: Vec<f64> = out.behaviors.row(qi).to_vec();
                beh += multilabel_focal(&probs, &gts[*gi].behaviors, w.alpha, w.gamma)?.0;
            }
            None => cls += focal_loss(p, false, w.alpha, w.gamma).0,
        }
    }
    let mut b = LossBreakdown {
        total: 0.0,
        cls_term: cls,
        behavior_term: beh,
        l1_term: l1,
        giou_term: gi_term,
        matched: matching.pairs,
    };
    b.total = b.recompose(w);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::giou;
    use crate::oracle::{central_difference, central_gradient, set_loss_exhaustive};
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256StarStar;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
    }

    #[test]
    fn focal_examples() {
        let (v, _) = focal_loss(0.5, true, 0.25, 2.0);
        assert!((v - 0.25 * 0.25 * std::f64::consts::LN_2).abs() < 1e-15);
        assert!((v - 0.0433217).abs() < 1e-7);
        assert!(focal_loss(1.0, true, 0.25, 2.0).0 < 1e-20);
        assert!(focal_loss(0.0, false, 0.25, 2.0).0 < 1e-20);
        // clamped, so still finite at the edges
        assert!(focal_loss(0.0, true, 0.25, 2.0).0.is_finite());
    }

    #[test]
    fn focal_gradient_matches_fd() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-6.0..6.0);
            let t = rng.random_bool(0.5);
            let a = rng.random_range(0.05..0.95);
            let g = rng.random_range(0.0..4.0);
            let fd = central_difference(|z| focal_loss(sigmoid(z), t, a, g).0, x, 1e-5);
            let an = focal_loss(sigmoid(x), t, a, g).1;
            assert!(rel_err(an, fd) < 1e-4, "x={x} t={t} a={a} g={g}: {an} vs {fd}");
        }
    }

    #[test]
    fn l1_examples() {
        let p = BoxRel::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let (v, g) = l1_box_loss(&p, &p);
        assert_eq!((v, g), (0.0, [0.0; 4]));
        let gt = BoxRel::new(0.5, 0.4, 0.2, 0.3).unwrap();
        let (v, g) = l1_box_loss(&p, &gt);
        assert!((v - 0.2).abs() < 1e-12);
        assert_eq!(g, [0.0, 1.0, 0.0, -1.0]);
    }

    #[test]
    fn giou_loss_examples() {
        let a = BoxRel::new(0.25, 0.25, 0.5, 0.5).unwrap();
        assert!(giou_loss(&a, &a).unwrap().0.abs() < 1e-15);
        let b = BoxRel::new(0.75, 0.75, 0.5, 0.5).unwrap();
        let expected = 1.0 - giou(&a.to_unit_corners(), &b.to_unit_corners()).unwrap();
        assert!((giou_loss(&a, &b).unwrap().0 - expected).abs() < 1e-15);
        // corner-touching boxes: IoU 0 and half the enclosing box is empty
        assert!((expected - 1.5).abs() < 1e-12);
    }

    #[test]
    fn giou_loss_rejects_degenerate() {
        let a = BoxRel { cx: 0.5, cy: 0.5, h: 0.0, w: 0.2 };
        let g = BoxRel::new(0.5, 0.5, 0.2, 0.2).unwrap();
        assert!(matches!(giou_loss(&a, &g), Err(LossError::DegenerateBox { .. })));
    }

    #[test]
    fn multilabel_examples() {
        let probs = [0.999, 0.001, 0.001, 0.999];
        let t = [true, false, false, true];
        assert!(multilabel_focal(&probs, &t, 0.25, 2.0).unwrap().0 < 1e-4);

        let mut probs = vec![0.001; 23];
        let mut t = vec![false; 23];
        probs[5] = 0.5;
        t[5] = true;
        let (v, _) = multilabel_focal(&probs, &t, 0.25, 2.0).unwrap();
        let neg = focal_loss(0.001, false, 0.25, 2.0).0;
        assert!((v - (0.0433217 + 22.0 * neg)).abs() < 1e-7);
        assert!(multilabel_focal(&probs, &t[..3], 0.25, 2.0).is_err());
    }

    fn outputs(boxes: &[BoxRel], probs: &[f64], beh: Vec<Vec<f64>>) -> HeadOutputs {
        let q = boxes.len();
        let k = beh[0].len();
        HeadOutputs {
            boxes: Array2::from_shape_fn((q, 4), |(i, j)| boxes[i].to_array()[j]),
            class_probs: Array1::from(probs.to_vec()),
            behaviors: Array2::from_shape_fn((q, k), |(i, j)| beh[i][j]),
        }
    }

    #[test]
    fn empty_ground_truth_is_all_negative() {
        let b = BoxRel::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let out = outputs(&[b, b, b], &[0.1, 0.6, 0.9], vec![vec![0.5; 23]; 3]);
        let w = LossWeights::default();
        let l = set_prediction_loss(&out, &[], &w).unwrap();
        let expected: f64 = [0.1, 0.6, 0.9].iter().map(|&p| w.cls * focal_loss(p, false, w.alpha, w.gamma).0).sum();
        assert!((l.total - expected).abs() < 1e-12);
        assert_eq!(l.behavior_term, 0.0);
    }

    #[test]
    fn capacity_exceeded() {
        let b = BoxRel::new(0.5, 0.5, 0.2, 0.2).unwrap();
        let out = outputs(&[b], &[0.5], vec![vec![0.5; 2]]);
        let t = SetTarget { bbox: b, behaviors: vec![false; 2] };
        assert!(matches!(
            set_prediction_loss(&out, &[t.clone(), t], &LossWeights::default()),
            Err(LossError::Capacity { gts: 2, queries: 1 })
        ));
    }

    #[test]
    fn recomposition_and_permutation_invariance() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(9);
        let w = LossWeights::default();
        for _ in 0..50 {
            let rb = |rng: &mut Xoshiro256StarStar| {
                BoxRel::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.05..0.4), rng.random_range(0.05..0.4)).unwrap()
            };
            let boxes: Vec<BoxRel> = (0..4).map(|_| rb(&mut rng)).collect();
            let probs: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..0.99)).collect();
            let beh: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.random_range(0.01..0.99)).collect()).collect();
            let gts: Vec<SetTarget> = (0..3)
                .map(|_| SetTarget { bbox: rb(&mut rng), behaviors: (0..5).map(|_| rng.random_bool(0.3)).collect() })
                .collect();
            let l = set_prediction_loss(&outputs(&boxes, &probs, beh.clone()), &gts, &w).unwrap();
            assert!((l.total - l.recompose(&w)).abs() < 1e-9);
            assert!(l.total >= 0.0);

            let mut rgts = gts.clone();
            rgts.reverse();
            let l2 = set_prediction_loss(&outputs(&boxes, &probs, beh.clone()), &rgts, &w).unwrap();
            assert!((l.total - l2.total).abs() < 1e-9);

            let order = [2, 0, 3, 1];
            let pb: Vec<BoxRel> = order.iter().map(|&i| boxes[i]).collect();
            let pp: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
            let pbeh: Vec<Vec<f64>> = order.iter().map(|&i| beh[i].clone()).collect();
            let l3 = set_prediction_loss(&outputs(&pb, &pp, pbeh), &gts, &w).unwrap();
            assert!((l.total - l3.total).abs() < 1e-9);
        }
    }

    #[test]
    fn giou_gradient_matches_fd() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(17);
        let mut checked = 0;
        while checked < 100 {
            let rb = |rng: &mut Xoshiro256StarStar| {
                BoxRel { cx: rng.random_range(0.2..0.8), cy: rng.random_range(0.2..0.8), h: rng.random_range(0.05..0.4), w: rng.random_range(0.05..0.4) }
            };
            let (p, g) = (rb(&mut rng), rb(&mut rng));
            let (pc, gc) = (p.to_unit_corners(), g.to_unit_corners());
            let edges = [pc.x1 - gc.x1, pc.x2 - gc.x2, pc.y1 - gc.y1, pc.y2 - gc.y2, pc.x2 - gc.x1, pc.x1 - gc.x2, pc.y2 - gc.y1, pc.y1 - gc.y2];
            if edges.iter().any(|d| d.abs() < 1e-3) {
                continue;
            }
            let f = |x: &[f64]| giou_loss(&BoxRel { cx: x[0], cy: x[1], h: x[2], w: x[3] }, &g).unwrap().0;
            let fd = central_gradient(f, &p.to_array(), 1e-5);
            let (_, an) = giou_loss(&p, &g).unwrap();
            for k in 0..4 {
                assert!((an[k] - fd[k]).abs() < 1e-4 * an[k].abs().max(fd[k].abs()).max(1.0), "{p:?} {g:?} {an:?} {fd:?}");
            }
            checked += 1;
        }
    }

    #[test]
    fn perfect_prediction_is_nearly_free() {
        let p = 1.0 - 1e-6;
        let boxes = [BoxRel::new(0.3, 0.3, 0.2, 0.2).unwrap(), BoxRel::new(0.7, 0.6, 0.3, 0.1).unwrap()];
        let beh = vec![vec![p, 1.0 - p, p], vec![1.0 - p, p, 1.0 - p]];
        let gts: Vec<SetTarget> = boxes
            .iter()
            .zip(&beh)
            .map(|(b, r)| SetTarget { bbox: *b, behaviors: r.iter().map(|v| *v > 0.5).collect() })
            .collect();
        let l = set_prediction_loss(&outputs(&boxes, &[p, p], beh), &gts, &LossWeights::default()).unwrap();
        assert!(l.total < 1e-3, "{}", l.total);
    }

    #[test]
    fn set_loss_matches_exhaustive_matching() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(23);
        let w = LossWeights::default();
        for _ in 0..100 {
            let rb = |rng: &mut Xoshiro256StarStar| {
                BoxRel::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.05..0.4), rng.random_range(0.05..0.4)).unwrap()
            };
            let boxes: Vec<BoxRel> = (0..3).map(|_| rb(&mut rng)).collect();
            let probs: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..0.99)).collect();
            let beh: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(0.01..0.99)).collect()).collect();
            let gts: Vec<SetTarget> = (0..2)
                .map(|_| SetTarget { bbox: rb(&mut rng), behaviors: (0..4).map(|_| rng.random_bool(0.4)).collect() })
                .collect();
            let out = outputs(&boxes, &probs, beh);
            let l = set_prediction_loss(&out, &gts, &w).unwrap();
            let o = set_loss_exhaustive(&out, &gts, &w);
            assert!((l.total - o).abs() < 1e-9, "{} vs {o}", l.total);
        }
    }
}
