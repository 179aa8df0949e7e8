//! Built-in oracle suites: Hungarian against exhaustive search, analytic loss
//! gradients against finite differences, metrics against brute-force
//! definitions, and the forward shape contract.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::assign::{hungarian, CostMatrix};
use crate::geometry::BoxRel;
use crate::kernels::{query_select, toy_forward_traced, HeadOutputs, ModelDims, ModelParams, VideoTensor};
use crate::loss::{focal_loss, giou_loss, l1_box_loss, multilabel_focal, set_prediction_loss, sigmoid, LossWeights, SetTarget};
use crate::metrics::{behavior_map, clear_counts, detection_ap, hota, identity_counts, DETECTION_MAX_DETS};
use crate::oracle;

/// Tolerance for oracle comparisons of real-valued metrics.
pub const ORACLE_TOLERANCE: f64 = 1e-9;
/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative gradient error.
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative gradient error. Central differences of
/// a sum of many terms carry roundoff near `1e-10`, so components below the
/// floor compare by absolute error.
const GRADIENT_FLOOR: f64 = 1e-5;
/// Points closer than this to a kink are skipped.
const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfcheckSummary {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl SelfcheckSummary {
    pub fn from_checks(checks: Vec<CheckResult>) -> Self {
        SelfcheckSummary { passed: checks.iter().all(|c| c.passed), checks }
    }

    pub fn failing(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summaries serialize");
        s.push('\n');
        s
    }
}

/// Case counts for every suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfcheckOptions {
    pub seed: u64,
    pub hungarian_cases: usize,
    pub max_matrix_size: usize,
    pub gradient_points: usize,
    pub metric_instances: u64,
    pub set_loss_cases: usize,
}

impl Default for SelfcheckOptions {
    fn default() -> Self {
        SelfcheckOptions {
            seed: 0,
            hungarian_cases: 1000,
            max_matrix_size: 7,
            gradient_points: 100,
            metric_instances: 500,
            set_loss_cases: 100,
        }
    }
}

/// Runs `body`, which returns `(cases, failure)`, and times it.
fn timed(name: &str, body: impl FnOnce() -> (usize, Result<String, String>)) -> CheckResult {
    let start = Instant::now();
    let (cases, outcome) = body();
    let seconds = start.elapsed().as_secs_f64();
    let (passed, detail) = match outcome {
        Ok(d) => (true, d),
        Err(d) => (false, d),
    };
    CheckResult { name: name.to_string(), passed, cases, detail, seconds }
}

fn rng_for(seed: u64, salt: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Relative error with a small denominator floor.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR)
}

/// Random square and rectangular matrices up to `max_size`, compared by exact
/// optimal cost.
pub fn check_hungarian(cases: usize, max_size: usize, seed: u64) -> CheckResult {
    timed("hungarian.brute_force", || {
        let mut rng = rng_for(seed, 1);
        for case in 0..cases {
            let r = rng.random_range(1..=max_size);
            let c = if rng.random_bool(0.5) { r } else { rng.random_range(1..=max_size) };
            let cm = CostMatrix::from_fn(r, c, |_, _| rng.random_range(-10.0..10.0)).expect("finite costs");
            let got = hungarian(&cm);
            let (best, _) = oracle::brute_force_assignment(&cm);
            if got.cost != best || got.pairs.len() != r.min(c) {
                return (case + 1, Err(format!("case {case} ({r}x{c}): hungarian {} vs exhaustive {best}", got.cost)));
            }
        }
        (cases, Ok("all optimal costs equal".into()))
    })
}

fn gradient_outcome(max_err: f64, worst: String) -> Result<String, String> {
    if max_err < GRADIENT_TOLERANCE {
        Ok(format!("max relative error {max_err:.3e}"))
    } else {
        Err(format!("max relative error {max_err:.3e} at {worst}"))
    }
}

/// Focal loss gradient with respect to the logit.
pub fn check_focal_gradient(points: usize, seed: u64) -> CheckResult {
    timed("gradient.focal", || {
        let mut rng = rng_for(seed, 2);
        let (mut max_err, mut worst) = (0.0, String::new());
        for _ in 0..points {
            let x: f64 = rng.random_range(-6.0..6.0);
            let t = rng.random_bool(0.5);
            let (a, g) = (rng.random_range(0.05..0.95), rng.random_range(0.0..4.0));
            let fd = oracle::central_difference(|z| focal_loss(sigmoid(z), t, a, g).0, x, FD_STEP);
            let e = gradient_error(focal_loss(sigmoid(x), t, a, g).1, fd);
            if e > max_err {
                (max_err, worst) = (e, format!("x={x} target={t} alpha={a} gamma={g}"));
            }
        }
        (points, gradient_outcome(max_err, worst))
    })
}

/// Multi-label focal gradient with respect to every logit.
pub fn check_multilabel_gradient(points: usize, seed: u64) -> CheckResult {
    timed("gradient.multilabel_focal", || {
        let mut rng = rng_for(seed, 3);
        let (mut max_err, mut worst) = (0.0, String::new());
        for point in 0..points {
            let k = rng.random_range(1..=23);
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-6.0..6.0)).collect();
            let target: Vec<bool> = (0..k).map(|_| rng.random_bool(0.3)).collect();
            let loss = |z: &[f64]| {
                let p: Vec<f64> = z.iter().map(|v| sigmoid(*v)).collect();
                multilabel_focal(&p, &target, 0.25, 2.0).expect("equal lengths").0
            };
            let fd = oracle::central_gradient(loss, &logits, FD_STEP);
            let probs: Vec<f64> = logits.iter().map(|v| sigmoid(*v)).collect();
            let (_, an) = multilabel_focal(&probs, &target, 0.25, 2.0).expect("equal lengths");
            for j in 0..k {
                let e = gradient_error(an[j], fd[j]);
                if e > max_err {
                    (max_err, worst) = (e, format!("point {point} logit {j}"));
                }
            }
        }
        (points, gradient_outcome(max_err, worst))
    })
}

fn random_box(rng: &mut Xoshiro256StarStar) -> BoxRel {
    BoxRel {
        cx: rng.random_range(0.2..0.8),
        cy: rng.random_range(0.2..0.8),
        h: rng.random_range(0.05..0.4),
        w: rng.random_range(0.05..0.4),
    }
}

fn from_slice(x: &[f64]) -> BoxRel {
    BoxRel { cx: x[0], cy: x[1], h: x[2], w: x[3] }
}

/// L1 box gradient, skipping coordinates that sit on a kink.
pub fn check_l1_gradient(points: usize, seed: u64) -> CheckResult {
    timed("gradient.l1", || {
        let mut rng = rng_for(seed, 4);
        let (mut max_err, mut worst) = (0.0, String::new());
        let mut checked = 0;
        while checked < points {
            let (p, g) = (random_box(&mut rng), random_box(&mut rng));
            let diffs: Vec<f64> = p.to_array().iter().zip(g.to_array()).map(|(a, b)| a - b).collect();
            if diffs.iter().any(|d| d.abs() < KINK_MARGIN) {
                continue;
            }
            let fd = oracle::central_gradient(|x| l1_box_loss(&from_slice(x), &g).0, &p.to_array(), FD_STEP);
            let (_, an) = l1_box_loss(&p, &g);
            for j in 0..4 {
                let e = gradient_error(an[j], fd[j]);
                if e > max_err {
                    (max_err, worst) = (e, format!("{p:?} vs {g:?}"));
                }
            }
            checked += 1;
        }
        (points, gradient_outcome(max_err, worst))
    })
}

/// GIoU loss gradient, skipping pairs whose edges nearly coincide.
pub fn check_giou_gradient(points: usize, seed: u64) -> CheckResult {
    timed("gradient.giou", || {
        let mut rng = rng_for(seed, 5);
        let (mut max_err, mut worst) = (0.0, String::new());
        let mut checked = 0;
        while checked < points {
            let (p, g) = (random_box(&mut rng), random_box(&mut rng));
            let (pc, gc) = (p.to_unit_corners(), g.to_unit_corners());
            let edges = [
                pc.x1 - gc.x1,
                pc.x2 - gc.x2,
                pc.y1 - gc.y1,
                pc.y2 - gc.y2,
                pc.x2 - gc.x1,
                pc.x1 - gc.x2,
                pc.y2 - gc.y1,
                pc.y1 - gc.y2,
            ];
            if edges.iter().any(|d| d.abs() < KINK_MARGIN) {
                continue;
            }
            let f = |x: &[f64]| giou_loss(&from_slice(x), &g).map_or(f64::NAN, |v| v.0);
            let fd = oracle::central_gradient(f, &p.to_array(), FD_STEP);
            let an = match giou_loss(&p, &g) {
                Ok((_, an)) => an,
                Err(e) => return (checked + 1, Err(format!("{p:?}: {e}"))),
            };
            for j in 0..4 {
                let e = gradient_error(an[j], fd[j]);
                if e.is_nan() || e > max_err {
                    (max_err, worst) = (if e.is_nan() { f64::INFINITY } else { e }, format!("{p:?} vs {g:?}"));
                }
            }
            checked += 1;
        }
        (points, gradient_outcome(max_err, worst))
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ORACLE_TOLERANCE
}

fn close_opt(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => close(x, y),
        (None, None) => true,
        _ => false,
    }
}

fn metric_check(name: &str, instances: u64, seed: u64, one: impl Fn(u64) -> Result<(), String>) -> CheckResult {
    timed(name, || {
        for i in 0..instances {
            let s = seed.wrapping_add(i);
            if let Err(e) = one(s) {
                return (i as usize + 1, Err(format!("instance seed {s}: {e}")));
            }
        }
        (instances as usize, Ok(format!("agrees within {ORACLE_TOLERANCE:e}")))
    })
}

/// CLEAR counts on tiny tracking instances (at most 3 ids, 10 frames).
pub fn check_clear(instances: u64, seed: u64) -> CheckResult {
    metric_check("metrics.clear", instances, seed, |s| {
        let (pred, gt) = oracle::tiny_tracking_instance(s, 3, 10);
        let c = clear_counts(&pred, &gt, 0.5).map_err(|e| e.to_string())?;
        let o = oracle::clear_counts_bruteforce(&pred, &gt, 0.5);
        let same = (c.gt, c.tp, c.fp, c.fn_, c.idsw) == (o.gt, o.tp, o.fp, o.fn_, o.idsw) && close(c.iou_sum, o.iou_sum);
        if same {
            Ok(())
        } else {
            Err(format!("{c:?} vs {o:?}"))
        }
    })
}

pub fn check_idf1(instances: u64, seed: u64) -> CheckResult {
    metric_check("metrics.idf1", instances, seed, |s| {
        let (pred, gt) = oracle::tiny_tracking_instance(s, 3, 10);
        let c = identity_counts(&pred, &gt, 0.5).map_err(|e| e.to_string())?;
        let o = oracle::identity_counts_bruteforce(&pred, &gt, 0.5);
        if c == o {
            Ok(())
        } else {
            Err(format!("{c:?} vs {o:?}"))
        }
    })
}

pub fn check_hota(instances: u64, seed: u64) -> CheckResult {
    metric_check("metrics.hota", instances, seed, |s| {
        let (pred, gt) = oracle::tiny_tracking_instance(s, 3, 10);
        let h = hota(&pred, &gt).map_err(|e| e.to_string())?;
        let o = oracle::hota_bruteforce(&pred, &gt).ok_or("oracle found no gt")?;
        let pairs = [(h.hota, o.hota), (h.det_a, o.det_a), (h.ass_a, o.ass_a), (h.loc_a, o.loc_a)];
        if pairs.iter().all(|(a, b)| close(*a, *b)) {
            Ok(())
        } else {
            Err(format!("{h:?} vs {o:?}"))
        }
    })
}

pub fn check_detection_ap(instances: u64, seed: u64) -> CheckResult {
    metric_check("metrics.detection_ap", instances, seed, |s| {
        let imgs = oracle::tiny_detection_instance(s);
        let a = detection_ap(&imgs);
        let o = oracle::detection_ap_bruteforce(&imgs, DETECTION_MAX_DETS);
        let pairs = [(a.ap, o.ap), (a.ap50, o.ap50), (a.ap75, o.ap75), (a.ap_m, o.ap_m), (a.ap_l, o.ap_l), (a.ar, o.ar)];
        if pairs.iter().all(|(x, y)| close_opt(*x, *y)) {
            Ok(())
        } else {
            Err(format!("{a:?} vs {o:?}"))
        }
    })
}

pub fn check_behavior_ap(instances: u64, seed: u64) -> CheckResult {
    metric_check("metrics.behavior_ap", instances, seed, |s| {
        let frames = oracle::tiny_behavior_instance(s);
        let a = behavior_map(&frames, 0.5, false).map_err(|e| e.to_string())?;
        let o = oracle::behavior_map_bruteforce(&frames, 0.5);
        let classes = a.per_class.iter().zip(&o.per_class).all(|(x, y)| close_opt(*x, *y));
        let splits = [(a.map, o.map), (a.map_l, o.map_l), (a.map_o, o.map_o), (a.map_s, o.map_s), (a.map_others, o.map_others)];
        if classes && splits.iter().all(|(x, y)| close_opt(*x, *y)) {
            Ok(())
        } else {
            Err(format!("{a:?} vs {o:?}"))
        }
    })
}

fn outputs(boxes: &[BoxRel], probs: &[f64], beh: &[Vec<f64>]) -> HeadOutputs {
    let k = beh.first().map_or(0, Vec::len);
    HeadOutputs {
        boxes: Array2::from_shape_fn((boxes.len(), 4), |(i, j)| boxes[i].to_array()[j]),
        class_probs: Array1::from(probs.to_vec()),
        behaviors: Array2::from_shape_fn((boxes.len(), k), |(i, j)| beh[i][j]),
    }
}

/// Set loss on 3 queries and 2 ground truths against the exhaustive matching.
pub fn check_set_loss(cases: usize, seed: u64) -> CheckResult {
    timed("loss.set_matching", || {
        let mut rng = rng_for(seed, 6);
        let w = LossWeights::default();
        for case in 0..cases {
            let boxes: Vec<BoxRel> = (0..3).map(|_| random_box(&mut rng)).collect();
            let probs: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..0.99)).collect();
            let beh: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| rng.random_range(0.01..0.99)).collect()).collect();
            let gts: Vec<SetTarget> = (0..2)
                .map(|_| SetTarget { bbox: random_box(&mut rng), behaviors: (0..4).map(|_| rng.random_bool(0.4)).collect() })
                .collect();
            let out = outputs(&boxes, &probs, &beh);
            let got = match set_prediction_loss(&out, &gts, &w) {
                Ok(l) => l.total,
                Err(e) => return (case + 1, Err(e.to_string())),
            };
            let expected = oracle::set_loss_exhaustive(&out, &gts, &w);
            if (got - expected).abs() > ORACLE_TOLERANCE {
                return (case + 1, Err(format!("case {case}: {got} vs exhaustive {expected}")));
            }
        }
        (cases, Ok(format!("agrees within {ORACLE_TOLERANCE:e}")))
    })
}

/// Shape of every intermediate and output of one forward pass, plus query
/// selection invariance under a monotone transform of the confidences.
pub fn check_shape_contract(params: &ModelParams, seed: u64) -> CheckResult {
    timed("shape.contract", || (1, shape_contract(params, seed)))
}

fn shape_contract(params: &ModelParams, seed: u64) -> Result<String, String> {
    let d = &params.dims;
    let mut rng = rng_for(seed, 7);
    let video = VideoTensor(Array4::from_shape_fn((d.t, d.h, d.w, 3), |_| rng.random_range(0.0..1.0)));
    let tr = toy_forward_traced(&video, params).map_err(|e| e.to_string())?;
    let expect = |what: &str, got: &[usize], want: &[usize]| -> Result<(), String> {
        if got == want {
            Ok(())
        } else {
            Err(format!("{what}: expected {want:?}, got {got:?}"))
        }
    };
    expect("patch tokens", tr.patch_tokens.shape(), &[d.t / 2, d.h / 4, d.w / 4, d.c_in])?;
    if tr.scales.len() != d.s || tr.fused.len() != d.s {
        return Err(format!("expected {} scales, got {}", d.s, tr.scales.len()));
    }
    for i in 1..=d.s {
        let (h, w) = d.stage_hw(i);
        expect(&format!("V{i}"), tr.scales[i - 1].0.shape(), &[d.t / 2, h, w, d.stage_channels(i)])?;
        expect(&format!("F{i}"), tr.fused[i - 1].0.shape(), &[h, w, d.c])?;
    }
    expect("tokens", tr.sequence.tokens.shape(), &[d.token_count(), d.c])?;
    expect("confidences", &[tr.confidences.len()], &[d.token_count()])?;
    expect("selected", &[tr.selected.len()], &[d.q])?;
    expect("query features", tr.query_features.shape(), &[d.q, d.c])?;
    let o = &tr.outputs;
    expect("boxes", o.boxes.shape(), &[d.q, 4])?;
    expect("class probabilities", o.class_probs.shape(), &[d.q])?;
    expect("behaviors", o.behaviors.shape(), &[d.q, d.k])?;
    o.validate().map_err(|e| e.to_string())?;

    let mut sorted = tr.confidences.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let cutoff = sorted[d.q - 1];
    if tr.selected.iter().any(|&i| tr.confidences[i] < cutoff) {
        return Err("query selection is not the top-Q".into());
    }
    let transformed: Vec<f64> = tr.confidences.iter().map(|c| 3.0 * c.ln() + 1.0).collect();
    let again = query_select(&transformed, d.q).map_err(|e| e.to_string())?;
    if again != tr.selected {
        return Err("query selection changed under a monotone transform".into());
    }
    Ok(format!("{} tokens, {} queries", d.token_count(), d.q))
}

/// Loads and validates a parameter file.
pub fn check_params_file(path: &Path) -> (CheckResult, Option<ModelParams>) {
    let mut loaded = None;
    let r = timed("params.load", || match ModelParams::load(path).and_then(|p| p.validate().map(|_| p)) {
        Ok(p) => {
            let d = format!("{} loaded", path.display());
            loaded = Some(p);
            (1, Ok(d))
        }
        Err(e) => (1, Err(format!("{}: {e}", path.display()))),
    });
    (r, loaded)
}

/// Every suite. With a parameter file the shape contract runs on those
/// parameters; otherwise on seeded desk-scale parameters.
pub fn run_all(opts: &SelfcheckOptions, params_path: Option<&Path>) -> SelfcheckSummary {
    let s = opts.seed;
    let mut checks = vec![
        check_hungarian(opts.hungarian_cases, opts.max_matrix_size, s),
        check_focal_gradient(opts.gradient_points, s),
        check_multilabel_gradient(opts.gradient_points, s),
        check_l1_gradient(opts.gradient_points, s),
        check_giou_gradient(opts.gradient_points, s),
        check_set_loss(opts.set_loss_cases, s),
        check_clear(opts.metric_instances, s),
        check_idf1(opts.metric_instances, s),
        check_hota(opts.metric_instances, s),
        check_detection_ap(opts.metric_instances, s),
        check_behavior_ap(opts.metric_instances, s),
    ];
    match params_path {
        Some(path) => {
            let (r, params) = check_params_file(path);
            checks.push(r);
            match params {
                Some(p) => checks.push(check_shape_contract(&p, s)),
                None => checks.push(CheckResult {
                    name: "shape.contract".into(),
                    passed: false,
                    cases: 0,
                    detail: "skipped: parameters failed to load".into(),
                    seconds: 0.0,
                }),
            }
        }
        None => checks.push(check_shape_contract(&ModelParams::random(&ModelDims::desk(), s), s)),
    }
    SelfcheckSummary::from_checks(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SelfcheckOptions {
        SelfcheckOptions { hungarian_cases: 50, max_matrix_size: 5, gradient_points: 20, metric_instances: 20, set_loss_cases: 10, ..Default::default() }
    }

    #[test]
    fn small_suite_passes() {
        let s = run_all(&small(), None);
        assert!(s.passed, "{:?}", s.failing());
        assert_eq!(s.checks.len(), 12);
    }

    #[test]
    fn corrupted_params_fail_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let mut text = ModelParams::random(&ModelDims::desk(), 1).to_json();
        text.truncate(text.len() / 2);
        std::fs::write(&path, text).unwrap();
        let s = run_all(&small(), Some(&path));
        assert!(!s.passed);
        assert_eq!(s.failing(), vec!["params.load", "shape.contract"]);
    }

    #[test]
    fn gradient_error_floor() {
        assert_eq!(gradient_error(0.0, 0.0), 0.0);
        assert!(gradient_error(0.0, 1e-11) < 1e-4);
        assert!((gradient_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-12);
    }
}
