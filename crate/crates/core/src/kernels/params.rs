//! Parameter sets for the toy forward pipeline, their initializers, and the
//! named-tensor JSON format.
//!
//! File layout:
//!
//! ```json
//! {
//!   "format": "chimptrack-params",
//!   "version": 1,
//!   "dims": { "t": 8, "h": 64, ... },
//!   "tensors": [ { "name": "patch_proj.weight", "shape": [96, 16], "data": [...] }, ... ]
//! }
//! ```
//!
//! Weights are stored `[in, out]`, row-major. Every tensor listed by
//! [`ModelParams::tensor_specs`] must be present with exactly that shape.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use super::{KernelError, ModelDims, PATCH_VALUES};

pub const PARAMS_FORMAT: &str = "chimptrack-params";
pub const PARAMS_VERSION: u32 = 1;

/// Affine map over the last axis: `y = x·W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// Every output is the mean of the inputs.
    pub fn averaging(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::from_elem((input, output), 1.0 / input as f64),
            bias: Array1::zeros(output),
        }
    }

    /// Identity on the leading `min(input, output)` channels.
    pub fn identity(input: usize, output: usize) -> Self {
        let mut weight = Array2::zeros((input, output));
        for i in 0..input.min(output) {
            weight[[i, i]] = 1.0;
        }
        Linear {
            weight,
            bias: Array1::zeros(output),
        }
    }

    fn uniform(input: usize, output: usize, rng: &mut Xoshiro256StarStar) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        let weight = Array2::from_shape_fn((input, output), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(output, |_| rng.random_range(-0.1..0.1));
        Linear { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Applies the map to one vector. Accumulation order is fixed (input
    /// index ascending) so results are reproducible bit for bit.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_dim());
        debug_assert_eq!(out.len(), self.output_dim());
        for (o, slot) in out.iter_mut().enumerate() {
            let mut acc = self.bias[o];
            for (i, xi) in x.iter().enumerate() {
                acc += xi * self.weight[[i, o]];
            }
            *slot = acc;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim()];
        self.apply_into(x, &mut out);
        out
    }
}

/// Tanh-form GELU.
pub fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (K * (x + 0.044_715 * x * x * x)).tanh())
}

/// Three affine layers with GELU between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub const DEPTH: usize = 3;

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(&h);
            if i + 1 < self.layers.len() {
                h.iter_mut().for_each(|v| *v = gelu(*v));
            }
        }
        h
    }

    fn build(width: usize, output: usize, mut make: impl FnMut(usize, usize) -> Linear) -> Self {
        Mlp {
            layers: vec![make(width, width), make(width, width), make(width, output)],
        }
    }
}

/// Per-channel temporal kernel spanning the whole `T/2` extent.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalKernel {
    /// `[T/2, channels]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl TemporalKernel {
    pub fn uniform(steps: usize, channels: usize) -> Self {
        TemporalKernel {
            weight: Array2::from_elem((steps, channels), 1.0 / steps as f64),
            bias: Array1::zeros(channels),
        }
    }

    /// Copies the slice at time `t0`.
    pub fn selector(steps: usize, channels: usize, t0: usize) -> Self {
        let mut weight = Array2::zeros((steps, channels));
        weight.row_mut(t0).fill(1.0);
        TemporalKernel {
            weight,
            bias: Array1::zeros(channels),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub patch_proj: Linear,
    /// One map per backbone stage; stage 1 keeps resolution, later stages merge 2x2.
    pub stages: Vec<Linear>,
    pub temporal: Vec<TemporalKernel>,
    pub channel_maps: Vec<Linear>,
    /// Class-probability head, also used to score encoder tokens for query selection.
    pub class_head: Mlp,
    pub box_head: Mlp,
    pub behavior_head: Mlp,
    pub offset_proj: Linear,
    pub attn_proj: Linear,
}

/// Expected name and shape of one stored tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamFile {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    pub tensors: Vec<NamedTensor>,
}

impl ModelParams {
    fn build(dims: &ModelDims, mut make: impl FnMut(usize, usize) -> Linear, temporal: impl Fn(usize, usize) -> TemporalKernel) -> Self {
        let steps = dims.t / 2;
        let mut stages = Vec::with_capacity(dims.s);
        let mut temporal_k = Vec::with_capacity(dims.s);
        let mut channel_maps = Vec::with_capacity(dims.s);
        for i in 1..=dims.s {
            let (input, output) = dims.stage_io(i);
            stages.push(make(input, output));
            temporal_k.push(temporal(steps, output));
            channel_maps.push(make(output, dims.c));
        }
        ModelParams {
            dims: dims.clone(),
            patch_proj: make(PATCH_VALUES, dims.c_in),
            stages,
            temporal: temporal_k,
            channel_maps,
            class_head: Mlp::build(dims.c, 1, &mut make),
            box_head: Mlp::build(dims.c, 4, &mut make),
            behavior_head: Mlp::build(dims.c, dims.k, &mut make),
            offset_proj: make(dims.c, 2 * dims.r),
            attn_proj: make(dims.c, dims.r),
        }
    }

    /// Mean-preserving maps everywhere, zero sampling offsets and uniform
    /// sampling weights. A constant video stays constant through every stage.
    pub fn averaging(dims: &ModelDims) -> Self {
        let mut p = Self::build(dims, Linear::averaging, TemporalKernel::uniform);
        p.offset_proj = Linear::zeros(dims.c, 2 * dims.r);
        p.attn_proj = Linear::zeros(dims.c, dims.r);
        p
    }

    /// Seeded Glorot-uniform weights with small uniform biases. Temporal
    /// kernels are drawn around the uniform average.
    pub fn random(dims: &ModelDims, seed: u64) -> Self {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let steps = dims.t / 2;
        let mut p = Self::build(dims, |i, o| Linear::uniform(i, o, &mut rng), TemporalKernel::uniform);
        for k in &mut p.temporal {
            k.weight.mapv_inplace(|w| w * rng.random_range(0.5..1.5));
            k.bias.mapv_inplace(|_| rng.random_range(-0.1..0.1));
        }
        debug_assert!(p.temporal.iter().all(|k| k.weight.nrows() == steps));
        p
    }

    /// Every tensor the file format must carry, in storage order.
    pub fn tensor_specs(dims: &ModelDims) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        let mut lin = |name: &str, i: usize, o: usize| {
            specs.push(TensorSpec { name: format!("{name}.weight"), shape: vec![i, o] });
            specs.push(TensorSpec { name: format!("{name}.bias"), shape: vec![o] });
        };
        lin("patch_proj", PATCH_VALUES, dims.c_in);
        for i in 1..=dims.s {
            let (input, output) = dims.stage_io(i);
            lin(&format!("stage{i}"), input, output);
        }
        for i in 1..=dims.s {
            let (_, output) = dims.stage_io(i);
            lin(&format!("temporal{i}"), dims.t / 2, output);
        }
        for i in 1..=dims.s {
            let (_, output) = dims.stage_io(i);
            lin(&format!("channel_map{i}"), output, dims.c);
        }
        for (head, out) in [("class_head", 1), ("box_head", 4), ("behavior_head", dims.k)] {
            for l in 0..Mlp::DEPTH {
                let o = if l + 1 == Mlp::DEPTH { out } else { dims.c };
                lin(&format!("{head}.{l}"), dims.c, o);
            }
        }
        lin("offset_proj", dims.c, 2 * dims.r);
        lin("attn_proj", dims.c, dims.r);
        specs
    }

    fn linears(&self) -> Vec<(String, &Array2<f64>, &Array1<f64>)> {
        let mut out: Vec<(String, &Array2<f64>, &Array1<f64>)> = Vec::new();
        out.push(("patch_proj".into(), &self.patch_proj.weight, &self.patch_proj.bias));
        for (i, l) in self.stages.iter().enumerate() {
            out.push((format!("stage{}", i + 1), &l.weight, &l.bias));
        }
        for (i, k) in self.temporal.iter().enumerate() {
            out.push((format!("temporal{}", i + 1), &k.weight, &k.bias));
        }
        for (i, l) in self.channel_maps.iter().enumerate() {
            out.push((format!("channel_map{}", i + 1), &l.weight, &l.bias));
        }
        for (head, mlp) in [("class_head", &self.class_head), ("box_head", &self.box_head), ("behavior_head", &self.behavior_head)] {
            for (l, layer) in mlp.layers.iter().enumerate() {
                out.push((format!("{head}.{l}"), &layer.weight, &layer.bias));
            }
        }
        out.push(("offset_proj".into(), &self.offset_proj.weight, &self.offset_proj.bias));
        out.push(("attn_proj".into(), &self.attn_proj.weight, &self.attn_proj.bias));
        out
    }

    pub fn to_file(&self) -> ParamFile {
        let mut tensors = Vec::new();
        for (name, w, b) in self.linears() {
            tensors.push(NamedTensor {
                name: format!("{name}.weight"),
                shape: w.shape().to_vec(),
                data: w.iter().copied().collect(),
            });
            tensors.push(NamedTensor {
                name: format!("{name}.bias"),
                shape: b.shape().to_vec(),
                data: b.to_vec(),
            });
        }
        ParamFile {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            dims: self.dims.clone(),
            tensors,
        }
    }

    pub fn from_file(file: &ParamFile) -> Result<Self, KernelError> {
        let bad = |name: &str, reason: String| KernelError::Params { name: name.to_string(), reason };
        if file.format != PARAMS_FORMAT {
            return Err(bad("format", format!("expected {PARAMS_FORMAT:?}, got {:?}", file.format)));
        }
        if file.version != PARAMS_VERSION {
            return Err(bad("version", format!("unsupported version {}", file.version)));
        }
        file.dims.validate()?;
        let mut by_name: BTreeMap<&str, &NamedTensor> = BTreeMap::new();
        for t in &file.tensors {
            if by_name.insert(t.name.as_str(), t).is_some() {
                return Err(bad(&t.name, "duplicate tensor".into()));
            }
        }
        let specs = Self::tensor_specs(&file.dims);
        for name in by_name.keys() {
            if !specs.iter().any(|s| s.name == *name) {
                return Err(bad(name, "unexpected tensor".into()));
            }
        }
        let take = |spec: &TensorSpec| -> Result<Vec<f64>, KernelError> {
            let t = by_name.get(spec.name.as_str()).ok_or_else(|| bad(&spec.name, "missing tensor".into()))?;
            if t.shape != spec.shape {
                return Err(bad(&spec.name, format!("shape {:?}, expected {:?}", t.shape, spec.shape)));
            }
            let n: usize = spec.shape.iter().product();
            if t.data.len() != n {
                return Err(bad(&spec.name, format!("{} values, expected {n}", t.data.len())));
            }
            if let Some(i) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(bad(&spec.name, format!("non-finite value at flat index {i}")));
            }
            Ok(t.data.clone())
        };
        let mut iter = specs.iter();
        let mut next_linear = || -> Result<Linear, KernelError> {
            let ws = iter.next().expect("spec list covers every tensor");
            let bs = iter.next().expect("spec list covers every tensor");
            let w = take(ws)?;
            let b = take(bs)?;
            Ok(Linear {
                weight: Array2::from_shape_vec((ws.shape[0], ws.shape[1]), w).expect("shape checked"),
                bias: Array1::from(b),
            })
        };
        let dims = &file.dims;
        let patch_proj = next_linear()?;
        let stages = (0..dims.s).map(|_| next_linear()).collect::<Result<Vec<_>, _>>()?;
        let temporal = (0..dims.s)
            .map(|_| next_linear().map(|l| TemporalKernel { weight: l.weight, bias: l.bias }))
            .collect::<Result<Vec<_>, _>>()?;
        let channel_maps = (0..dims.s).map(|_| next_linear()).collect::<Result<Vec<_>, _>>()?;
        let mut mlp = || -> Result<Mlp, KernelError> {
            Ok(Mlp { layers: (0..Mlp::DEPTH).map(|_| next_linear()).collect::<Result<Vec<_>, _>>()? })
        };
        let class_head = mlp()?;
        let box_head = mlp()?;
        let behavior_head = mlp()?;
        let offset_proj = next_linear()?;
        let attn_proj = next_linear()?;
        Ok(ModelParams {
            dims: dims.clone(),
            patch_proj,
            stages,
            temporal,
            channel_maps,
            class_head,
            box_head,
            behavior_head,
            offset_proj,
            attn_proj,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("parameter file serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, KernelError> {
        let file: ParamFile = serde_json::from_str(text).map_err(|e| KernelError::Params {
            name: "<document>".into(),
            reason: e.to_string(),
        })?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self, KernelError> {
        let text = std::fs::read_to_string(path).map_err(|e| KernelError::Params {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    /// Checks every tensor shape against `dims`.
    pub fn validate(&self) -> Result<(), KernelError> {
        Self::from_file(&self.to_file()).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_is_exact() {
        let dims = ModelDims::desk();
        let p = ModelParams::random(&dims, 42);
        let back = ModelParams::from_json(&p.to_json()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn specs_cover_every_tensor() {
        let dims = ModelDims::desk();
        let file = ModelParams::averaging(&dims).to_file();
        let specs = ModelParams::tensor_specs(&dims);
        assert_eq!(file.tensors.len(), specs.len());
        for (t, s) in file.tensors.iter().zip(&specs) {
            assert_eq!(t.name, s.name);
            assert_eq!(t.shape, s.shape);
        }
    }

    #[test]
    fn corrupted_files_name_the_tensor() {
        let dims = ModelDims::desk();
        let mut file = ModelParams::random(&dims, 1).to_file();
        file.tensors[3].data.pop();
        let err = ModelParams::from_file(&file).unwrap_err();
        assert!(matches!(&err, KernelError::Params { name, .. } if name == "stage1.bias"), "{err}");

        let mut file = ModelParams::random(&dims, 1).to_file();
        file.tensors[0].data[5] = f64::NAN;
        let err = ModelParams::from_file(&file).unwrap_err();
        assert!(matches!(&err, KernelError::Params { name, .. } if name == "patch_proj.weight"));

        let mut file = ModelParams::random(&dims, 1).to_file();
        file.tensors.retain(|t| t.name != "attn_proj.bias");
        assert!(ModelParams::from_file(&file).is_err());
    }

    #[test]
    fn random_init_is_seeded() {
        let dims = ModelDims::desk();
        assert_eq!(ModelParams::random(&dims, 5), ModelParams::random(&dims, 5));
        assert_ne!(ModelParams::random(&dims, 5), ModelParams::random(&dims, 6));
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(1.0) - 0.841_192).abs() < 1e-5);
        assert!(gelu(-10.0).abs() < 1e-9);
    }
}
