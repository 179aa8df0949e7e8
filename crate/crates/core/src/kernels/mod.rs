//! Desk-scale forward pipeline: 3D patch partition, staged multi-scale
//! features, temporal merging, channel mapping, flatten/concat, query
//! selection, deformable sampling and the prediction heads.
//!
//! Shapes follow the video-backbone contract for input `T x H x W x 3`:
//!
//! | stage | feature                                   |
//! |-------|-------------------------------------------|
//! | V1    | `T/2 x H/4  x W/4  x M`                   |
//! | V2    | `T/2 x H/8  x W/8  x 2M`                  |
//! | V3    | `T/2 x H/16 x W/16 x 4M`                  |
//! | V4    | `T/2 x H/32 x W/32 x 8M`                  |
//!
//! Each `Vi` is fused into `Fi` (`H/4·2^(1-i) x W/4·2^(1-i) x C`) and the
//! flattened sequence holds `Σ hi·wi` tokens of width `C`.
//!
//! The attention stages of the backbone and the encoder/decoder stack are not
//! modelled; stage transforms are linear patch-merging maps.

mod params;

pub use params::{gelu, Linear, Mlp, ModelParams, NamedTensor, ParamFile, TemporalKernel, TensorSpec, PARAMS_FORMAT, PARAMS_VERSION};

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoxRel;
use crate::loss::sigmoid;

/// Values in one `2 x 4 x 4 x 3` patch.
pub const PATCH_VALUES: usize = 2 * 4 * 4 * 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid model dims: {0}")]
    Dims(String),
    #[error("shape mismatch in {what}: expected {expected:?}, got {got:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("cannot select {q} queries from {n} tokens")]
    TooFewTokens { n: usize, q: usize },
    #[error("sampling weights must be nonnegative and sum to 1 (sum = {sum})")]
    Weights { sum: f64 },
    #[error("parameter {name}: {reason}")]
    Params { name: String, reason: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Model dimensions. Field names follow the usual symbols: `t` frames,
/// `h x w` pixels, `c_in`/`m`/`c` channel widths, `s` stages, `q` queries,
/// `k` behavior classes, `r` sampling points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub m: usize,
    pub c: usize,
    pub s: usize,
    pub q: usize,
    pub k: usize,
    pub r: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelDims {
    /// Scaled-down dims used by tests and the CLI default.
    pub fn desk() -> Self {
        ModelDims { t: 8, h: 64, w: 64, c_in: 16, m: 16, c: 32, s: 4, q: 10, k: 23, r: 4 }
    }

    /// Full-width channel configuration (`C_in = M = 192`, `C = 512`).
    pub fn full() -> Self {
        ModelDims { t: 8, h: 576, w: 576, c_in: 192, m: 192, c: 512, s: 4, q: 10, k: 23, r: 4 }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let fail = |m: String| Err(KernelError::Dims(m));
        if self.t < 2 || !self.t.is_multiple_of(2) {
            return fail(format!("T must be even and >= 2, got {}", self.t));
        }
        if self.s == 0 || self.s > 8 {
            return fail(format!("S must be in 1..=8, got {}", self.s));
        }
        let unit = 4usize << (self.s - 1);
        if self.h == 0 || self.w == 0 || !self.h.is_multiple_of(unit) || !self.w.is_multiple_of(unit) {
            return fail(format!("H and W must be positive multiples of {unit}, got {}x{}", self.h, self.w));
        }
        for (name, v) in [("C_in", self.c_in), ("M", self.m), ("C", self.c), ("Q", self.q), ("K", self.k), ("R", self.r)] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }

    /// Parses overrides such as `T=8,H=64,W=64,Cin=16,M=16,C=32,S=4,Q=10,K=23,R=4`
    /// on top of the desk dims, or one of the presets `desk` / `full`.
    pub fn parse(spec: &str) -> Result<Self, KernelError> {
        match spec.trim() {
            "desk" | "" => return Ok(Self::desk()),
            "full" => return Ok(Self::full()),
            _ => {}
        }
        let mut d = Self::desk();
        for part in spec.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| KernelError::Dims(format!("expected KEY=VALUE, got {part:?}")))?;
            let v: usize = value
                .trim()
                .parse()
                .map_err(|_| KernelError::Dims(format!("bad value for {key}: {value:?}")))?;
            let slot = match key.trim().to_ascii_lowercase().as_str() {
                "t" => &mut d.t,
                "h" => &mut d.h,
                "w" => &mut d.w,
                "cin" | "c_in" => &mut d.c_in,
                "m" => &mut d.m,
                "c" => &mut d.c,
                "s" => &mut d.s,
                "q" => &mut d.q,
                "k" => &mut d.k,
                "r" => &mut d.r,
                other => return Err(KernelError::Dims(format!("unknown dimension {other:?}"))),
            };
            *slot = v;
        }
        d.validate()?;
        Ok(d)
    }

    /// Channels of `Vi` (1-based stage index).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.m << (i - 1)
    }

    /// Spatial size of `Vi` / `Fi`.
    pub fn stage_hw(&self, i: usize) -> (usize, usize) {
        ((self.h / 4) >> (i - 1), (self.w / 4) >> (i - 1))
    }

    /// `(input, output)` width of the stage-`i` linear map.
    pub fn stage_io(&self, i: usize) -> (usize, usize) {
        if i == 1 {
            (self.c_in, self.m)
        } else {
            (4 * self.stage_channels(i - 1), self.stage_channels(i))
        }
    }

    pub fn token_count(&self) -> usize {
        (1..=self.s).map(|i| self.stage_hw(i)).map(|(h, w)| h * w).sum()
    }
}

/// Renders the override form accepted by [`ModelDims::parse`].
impl std::fmt::Display for ModelDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "T={},H={},W={},Cin={},M={},C={},S={},Q={},K={},R={}",
            self.t, self.h, self.w, self.c_in, self.m, self.c, self.s, self.q, self.k, self.r
        )
    }
}

/// `T x H x W x 3` video clip.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor(pub Array4<f64>);

impl VideoTensor {
    pub fn new(data: Array4<f64>) -> Result<Self, KernelError> {
        if data.shape()[3] != 3 {
            return Err(KernelError::Shape { what: "video channels", expected: vec![3], got: vec![data.shape()[3]] });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(KernelError::NonFinite("video"));
        }
        Ok(VideoTensor(data))
    }

    pub fn constant(t: usize, h: usize, w: usize, value: f64) -> Self {
        VideoTensor(Array4::from_elem((t, h, w, 3), value))
    }

    pub fn frames(&self) -> usize {
        self.0.shape()[0]
    }

    /// Frames `start..start + len` as a new clip.
    pub fn window(&self, start: usize, len: usize) -> VideoTensor {
        VideoTensor(self.0.slice(ndarray::s![start..start + len, .., .., ..]).to_owned())
    }
}

/// Backbone stage output `Vi`, shaped `[T/2, h, w, channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFeature(pub Array4<f64>);

/// Temporally fused, channel-mapped `Fi`, shaped `[h, w, C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeature(pub Array3<f64>);

impl FusedFeature {
    pub fn height(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenIndex {
    pub scale: usize,
    pub row: usize,
    pub col: usize,
}

/// Flattened multi-scale tokens, scale-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Array2<f64>,
    /// `(h, w)` of each scale.
    pub shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn locate(&self, token: usize) -> TokenIndex {
        let scale = self.offsets.iter().rposition(|&o| o <= token).expect("token in range");
        let local = token - self.offsets[scale];
        let w = self.shapes[scale].1;
        TokenIndex { scale, row: local / w, col: local % w }
    }

    pub fn position(&self, ix: TokenIndex) -> usize {
        self.offsets[ix.scale] + ix.row * self.shapes[ix.scale].1 + ix.col
    }

    /// Cell-center anchor of a token; extent is one cell of its scale.
    pub fn anchor(&self, token: usize) -> BoxRel {
        let ix = self.locate(token);
        let (h, w) = self.shapes[ix.scale];
        BoxRel {
            cx: (ix.col as f64 + 0.5) / w as f64,
            cy: (ix.row as f64 + 0.5) / h as f64,
            h: 1.0 / h as f64,
            w: 1.0 / w as f64,
        }
    }
}

/// Model outputs for `Q` queries: boxes `Q x 4` in `(cx, cy, h, w)` order,
/// class probabilities `Q`, behavior probabilities `Q x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub boxes: Array2<f64>,
    pub class_probs: Array1<f64>,
    pub behaviors: Array2<f64>,
}

impl HeadOutputs {
    pub fn num_queries(&self) -> usize {
        self.class_probs.len()
    }

    pub fn num_behaviors(&self) -> usize {
        self.behaviors.ncols()
    }

    pub fn box_at(&self, q: usize) -> BoxRel {
        let r = self.boxes.row(q);
        BoxRel { cx: r[0], cy: r[1], h: r[2], w: r[3] }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let q = self.num_queries();
        if self.boxes.dim() != (q, 4) || self.behaviors.nrows() != q {
            return Err(KernelError::Shape {
                what: "head outputs",
                expected: vec![q, 4],
                got: self.boxes.shape().to_vec(),
            });
        }
        let all = self.boxes.iter().chain(self.class_probs.iter()).chain(self.behaviors.iter());
        if all.clone().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(KernelError::NonFinite("head outputs outside [0, 1]"));
        }
        Ok(())
    }
}

/// One emitted candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoxRel,
    pub class_conf: f64,
    /// Full behavior probability vector.
    pub behaviors: Vec<f64>,
    /// Behavior indices at or above the behavior threshold.
    pub active: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

/// Default class and behavior emission thresholds.
pub const DEFAULT_CLASS_THRESHOLD: f64 = 0.3;
pub const DEFAULT_BEHAVIOR_THRESHOLD: f64 = 0.3;

/// Splits the clip into non-overlapping `2 x 4 x 4 x 3` patches and projects
/// each flattened patch (order `t, y, x, channel`) to `C_in` channels.
pub fn patch_partition_3d(v: &VideoTensor, proj: &Linear) -> Result<Array4<f64>, KernelError> {
    let (t, h, w, ch) = v.0.dim();
    if t % 2 != 0 || h % 4 != 0 || w % 4 != 0 || t == 0 || h == 0 || w == 0 {
        return Err(KernelError::Shape { what: "patch partition (T%2, H%4, W%4)", expected: vec![0, 0, 0], got: vec![t % 2, h % 4, w % 4] });
    }
    if ch != 3 || proj.input_dim() != PATCH_VALUES {
        return Err(KernelError::Shape { what: "patch projection input", expected: vec![PATCH_VALUES], got: vec![proj.input_dim()] });
    }
    let c_in = proj.output_dim();
    let mut out = Array4::zeros((t / 2, h / 4, w / 4, c_in));
    let mut patch = [0.0; PATCH_VALUES];
    let mut buf = vec![0.0; c_in];
    for pt in 0..t / 2 {
        for py in 0..h / 4 {
            for px in 0..w / 4 {
                let mut n = 0;
                for dt in 0..2 {
                    for dy in 0..4 {
                        for dx in 0..4 {
                            for c in 0..3 {
                                patch[n] = v.0[[2 * pt + dt, 4 * py + dy, 4 * px + dx, c]];
                                n += 1;
                            }
                        }
                    }
                }
                proj.apply_into(&patch, &mut buf);
                for (o, val) in buf.iter().enumerate() {
                    out[[pt, py, px, o]] = *val;
                }
            }
        }
    }
    Ok(out)
}

fn map_channels(x: &Array4<f64>, lin: &Linear) -> Array4<f64> {
    let (t, h, w, _) = x.dim();
    let mut out = Array4::zeros((t, h, w, lin.output_dim()));
    let mut buf = vec![0.0; lin.output_dim()];
    for a in 0..t {
        for y in 0..h {
            for z in 0..w {
                let row: Vec<f64> = x.slice(ndarray::s![a, y, z, ..]).to_vec();
                lin.apply_into(&row, &mut buf);
                out.slice_mut(ndarray::s![a, y, z, ..]).assign(&ArrayView1::from(&buf[..]));
            }
        }
    }
    out
}

/// Stage `i` (1-based). Stage 1 maps channels `C_in -> M` at full resolution;
/// later stages concatenate each 2x2 neighborhood in `(0,0), (1,0), (0,1), (1,1)`
/// `(row, col)` order and map `4·prev -> 2·prev`, halving `h` and `w`.
pub fn stage_transform(tokens: &Array4<f64>, stage: usize, lin: &Linear) -> Result<ScaleFeature, KernelError> {
    let (t, h, w, ch) = tokens.dim();
    if stage == 1 {
        if ch != lin.input_dim() {
            return Err(KernelError::Shape { what: "stage 1 channels", expected: vec![lin.input_dim()], got: vec![ch] });
        }
        return Ok(ScaleFeature(map_channels(tokens, lin)));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(KernelError::Shape { what: "patch merge (even h, w)", expected: vec![h + h % 2, w + w % 2], got: vec![h, w] });
    }
    if 4 * ch != lin.input_dim() {
        return Err(KernelError::Shape { what: "patch merge channels", expected: vec![lin.input_dim()], got: vec![4 * ch] });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::zeros((t, oh, ow, lin.output_dim()));
    let mut cat = vec![0.0; 4 * ch];
    let mut buf = vec![0.0; lin.output_dim()];
    for a in 0..t {
        for y in 0..oh {
            for x in 0..ow {
                for (n, (dy, dx)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
                    for c in 0..ch {
                        cat[n * ch + c] = tokens[[a, 2 * y + dy, 2 * x + dx, c]];
                    }
                }
                lin.apply_into(&cat, &mut buf);
                for (o, val) in buf.iter().enumerate() {
                    out[[a, y, x, o]] = *val;
                }
            }
        }
    }
    Ok(ScaleFeature(out))
}

/// Collapses the temporal axis with a per-channel kernel spanning all `T/2`
/// steps: `out[y, x, c] = b[c] + Σ_t k[t, c]·v[t, y, x, c]`.
pub fn temporal_merge(v: &ScaleFeature, kernel: &TemporalKernel) -> Result<Array3<f64>, KernelError> {
    let (t, h, w, ch) = v.0.dim();
    if kernel.weight.dim() != (t, ch) {
        return Err(KernelError::Shape { what: "temporal kernel", expected: vec![t, ch], got: kernel.weight.shape().to_vec() });
    }
    let mut out = Array3::zeros((h, w, ch));
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = kernel.bias[c];
                for s in 0..t {
                    acc += kernel.weight[[s, c]] * v.0[[s, y, x, c]];
                }
                out[[y, x, c]] = acc;
            }
        }
    }
    Ok(out)
}

/// 1x1 convolution mapping every pixel's channels to `C`.
pub fn channel_map(f: &Array3<f64>, lin: &Linear) -> Result<FusedFeature, KernelError> {
    let (h, w, ch) = f.dim();
    if ch != lin.input_dim() {
        return Err(KernelError::Shape { what: "channel map input", expected: vec![lin.input_dim()], got: vec![ch] });
    }
    let mut out = Array3::zeros((h, w, lin.output_dim()));
    let mut buf = vec![0.0; lin.output_dim()];
    for y in 0..h {
        for x in 0..w {
            let row: Vec<f64> = f.slice(ndarray::s![y, x, ..]).to_vec();
            lin.apply_into(&row, &mut buf);
            out.slice_mut(ndarray::s![y, x, ..]).assign(&ArrayView1::from(&buf[..]));
        }
    }
    Ok(FusedFeature(out))
}

pub fn flatten_concat(fs: &[FusedFeature]) -> Result<TokenSequence, KernelError> {
    let c = fs.first().map_or(0, FusedFeature::channels);
    if let Some(bad) = fs.iter().find(|f| f.channels() != c) {
        return Err(KernelError::Shape { what: "flatten channels", expected: vec![c], got: vec![bad.channels()] });
    }
    let shapes: Vec<(usize, usize)> = fs.iter().map(|f| (f.height(), f.width())).collect();
    let mut offsets = Vec::with_capacity(fs.len());
    let mut n = 0;
    for (h, w) in &shapes {
        offsets.push(n);
        n += h * w;
    }
    let mut tokens = Array2::zeros((n, c));
    let mut row = 0;
    for f in fs {
        for y in 0..f.height() {
            for x in 0..f.width() {
                tokens.row_mut(row).assign(&f.0.slice(ndarray::s![y, x, ..]));
                row += 1;
            }
        }
    }
    Ok(TokenSequence { tokens, shapes, offsets })
}

/// Indices of the `q` highest confidences, ordered by confidence descending;
/// equal confidences resolve to the lower index.
pub fn query_select(confidences: &[f64], q: usize) -> Result<Vec<usize>, KernelError> {
    if confidences.len() < q {
        return Err(KernelError::TooFewTokens { n: confidences.len(), q });
    }
    if confidences.iter().any(|c| c.is_nan()) {
        return Err(KernelError::NonFinite("confidences"));
    }
    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    idx.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)));
    idx.truncate(q);
    Ok(idx)
}

/// Bilinear lookup at normalized `(u, v)` with corner-aligned coordinates
/// (`u = 0` is the first column center, `u = 1` the last). Neighbors outside
/// the map contribute zero. A one-cell axis reads its only node for
/// coordinates in `[0, 1]` and zero outside.
pub fn bilinear(f: &FusedFeature, u: f64, v: f64) -> Array1<f64> {
    let (h, w, c) = f.0.dim();
    // (lower node, upper node, fraction toward upper) along one axis
    let axis = |coord: f64, n: usize| -> (isize, isize, f64) {
        if n == 1 {
            let i = if (0.0..=1.0).contains(&coord) { 0 } else { -1 };
            return (i, i, 0.0);
        }
        let p = coord * (n - 1) as f64;
        let i0 = p.floor();
        (i0 as isize, i0 as isize + 1, p - i0)
    };
    let node = |y: isize, x: isize, ch: usize| -> f64 {
        if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
            0.0
        } else {
            f.0[[y as usize, x as usize, ch]]
        }
    };
    // lerp form keeps constant maps exactly constant
    let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + t * (b - a) };
    let (y0, y1, fy) = axis(v, h);
    let (x0, x1, fx) = axis(u, w);
    Array1::from_shape_fn(c, |ch| {
        let top = lerp(node(y0, x0, ch), node(y0, x1, ch), fx);
        let bottom = lerp(node(y1, x0, ch), node(y1, x1, ch), fx);
        lerp(top, bottom, fy)
    })
}

/// Weighted sum of bilinear samples at `reference + offset_k`.
pub fn deformable_sample(f: &FusedFeature, reference: (f64, f64), offsets: &[(f64, f64)], weights: &[f64]) -> Result<Array1<f64>, KernelError> {
    if offsets.len() != weights.len() {
        return Err(KernelError::Shape { what: "sampling points", expected: vec![offsets.len()], got: vec![weights.len()] });
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) || (sum - 1.0).abs() > 1e-6 {
        return Err(KernelError::Weights { sum });
    }
    let mut out = Array1::zeros(f.channels());
    for (&(dx, dy), &wt) in offsets.iter().zip(weights) {
        out.scaled_add(wt, &bilinear(f, reference.0 + dx, reference.1 + dy));
    }
    Ok(out)
}

/// Box, class and behavior heads on `Q x C` query features.
pub fn head_forward(queries: &Array2<f64>, params: &ModelParams) -> Result<HeadOutputs, KernelError> {
    let c = params.dims.c;
    if queries.ncols() != c {
        return Err(KernelError::Shape { what: "head input", expected: vec![queries.nrows(), c], got: queries.shape().to_vec() });
    }
    let heads = [(&params.box_head, 4usize), (&params.class_head, 1), (&params.behavior_head, params.dims.k)];
    for (mlp, out) in heads {
        let ok = mlp.layers.len() == Mlp::DEPTH
            && mlp.layers[0].input_dim() == c
            && mlp.layers.last().map(Linear::output_dim) == Some(out);
        if !ok {
            return Err(KernelError::Shape { what: "head parameters", expected: vec![c, out], got: vec![mlp.layers[0].input_dim()] });
        }
    }
    let q = queries.nrows();
    let k = params.dims.k;
    let mut boxes = Array2::zeros((q, 4));
    let mut class_probs = Array1::zeros(q);
    let mut behaviors = Array2::zeros((q, k));
    for (i, row) in queries.axis_iter(Axis(0)).enumerate() {
        let x = row.to_vec();
        for (j, v) in params.box_head.forward(&x).into_iter().enumerate() {
            boxes[[i, j]] = sigmoid(v);
        }
        class_probs[i] = sigmoid(params.class_head.forward(&x)[0]);
        for (j, v) in params.behavior_head.forward(&x).into_iter().enumerate() {
            behaviors[[i, j]] = sigmoid(v);
        }
    }
    Ok(HeadOutputs { boxes, class_probs, behaviors })
}

/// Queries with class probability `>= tau_cls`, in query order.
pub fn emit_detections(h: &HeadOutputs, tau_cls: f64, tau_beh: f64) -> Vec<Detection> {
    (0..h.num_queries())
        .filter(|&q| h.class_probs[q] >= tau_cls)
        .map(|q| {
            let behaviors = h.behaviors.row(q).to_vec();
            let active = behaviors.iter().enumerate().filter(|(_, p)| **p >= tau_beh).map(|(k, _)| k).collect();
            Detection { bbox: h.box_at(q), class_conf: h.class_probs[q], behaviors, active, track_id: None }
        })
        .collect()
}

/// Every intermediate of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub patch_tokens: Array4<f64>,
    pub scales: Vec<ScaleFeature>,
    pub fused: Vec<FusedFeature>,
    pub sequence: TokenSequence,
    pub confidences: Vec<f64>,
    pub selected: Vec<usize>,
    pub anchors: Vec<BoxRel>,
    pub query_features: Array2<f64>,
    pub outputs: HeadOutputs,
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn toy_forward_traced(video: &VideoTensor, params: &ModelParams) -> Result<ForwardTrace, KernelError> {
    let dims = &params.dims;
    dims.validate()?;
    let got = video.0.shape().to_vec();
    if got != [dims.t, dims.h, dims.w, 3] {
        return Err(KernelError::Shape { what: "video", expected: vec![dims.t, dims.h, dims.w, 3], got });
    }

    let patch_tokens = patch_partition_3d(video, &params.patch_proj)?;
    let mut scales: Vec<ScaleFeature> = Vec::with_capacity(dims.s);
    for (i, lin) in params.stages.iter().enumerate() {
        let input = scales.last().map_or(&patch_tokens, |v| &v.0);
        scales.push(stage_transform(input, i + 1, lin)?);
    }
    let fused = scales
        .iter()
        .zip(&params.temporal)
        .zip(&params.channel_maps)
        .map(|((v, k), lin)| temporal_merge(v, k).and_then(|f| channel_map(&f, lin)))
        .collect::<Result<Vec<_>, _>>()?;
    let sequence = flatten_concat(&fused)?;

    // encoder-side scoring shares the class head
    let confidences: Vec<f64> = sequence
        .tokens
        .axis_iter(Axis(0))
        .map(|t| sigmoid(params.class_head.forward(&t.to_vec())[0]))
        .collect();
    let selected = query_select(&confidences, dims.q)?;
    let anchors: Vec<BoxRel> = selected.iter().map(|&i| sequence.anchor(i)).collect();

    let mut query_features = Array2::zeros((dims.q, dims.c));
    for (qi, (&tok, anchor)) in selected.iter().zip(&anchors).enumerate() {
        let content = sequence.tokens.row(tok).to_vec();
        let raw = params.offset_proj.apply(&content);
        let offsets: Vec<(f64, f64)> = raw.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let weights = softmax(&params.attn_proj.apply(&content));
        let mut acc = Array1::zeros(dims.c);
        for f in &fused {
            acc += &deformable_sample(f, (anchor.cx, anchor.cy), &offsets, &weights)?;
        }
        acc /= fused.len() as f64;
        query_features.row_mut(qi).assign(&acc);
    }
    let outputs = head_forward(&query_features, params)?;
    Ok(ForwardTrace { patch_tokens, scales, fused, sequence, confidences, selected, anchors, query_features, outputs })
}

pub fn toy_forward(video: &VideoTensor, params: &ModelParams) -> Result<HeadOutputs, KernelError> {
    toy_forward_traced(video, params).map(|t| t.outputs)
}
