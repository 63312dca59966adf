//! The recolorization network: construction with wiring audits, inference,
//! tape recording for training, and parameter updates.

mod arch;
mod checkpoint;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use arch::{crayon_layers, LayerOp, LayerSpec, Source, LAYER_COUNT, OUTPUT_LAYER, REFERENCE_SIZE, UNET_OUTPUT};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::nn::{self, AdamConfig, ConvSpec, Gradients, ParamKey, ParamTensor, Tape, Tensor, Var};

/// Spatial sides must be divisible by this (three 2x2 poolings).
pub const SIZE_MULTIPLE: usize = 8;

/// Weight and bias of one convolution-type layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

impl LayerParams {
    pub fn count(&self) -> usize {
        self.weight.value.numel() + self.bias.value.numel()
    }
}

#[derive(Debug, Clone)]
pub struct CrayonModel {
    layers: Vec<LayerSpec>,
    params: BTreeMap<usize, LayerParams>,
}

pub fn weight_key(layer: usize) -> ParamKey {
    layer * 2
}

pub fn bias_key(layer: usize) -> ParamKey {
    layer * 2 + 1
}

/// Builds the standard network with deterministic initialization.
pub fn build_crayon(seed: u64) -> Result<CrayonModel> {
    CrayonModel::from_layers(crayon_layers(), seed)
}

fn fail(layer: usize, detail: impl Into<String>) -> Error {
    Error::Construction {
        layer,
        detail: detail.into(),
    }
}

/// Checks channel plumbing and the declared spatial sizes at
/// [`REFERENCE_SIZE`].
pub fn audit_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.len() != LAYER_COUNT {
        return Err(fail(layers.len(), format!("expected {LAYER_COUNT} layers, got {}", layers.len())));
    }
    for (pos, layer) in layers.iter().enumerate() {
        if layer.index != pos {
            return Err(fail(pos, format!("row {pos} is labelled {}", layer.index)));
        }
        if let Some(&bad) = layer.data_from.layers().iter().find(|&&j| j >= pos) {
            return Err(fail(pos, format!("reads layer {bad}, which is not earlier")));
        }
        audit_channels(layers, layer)?;
    }
    let sizes = propagate_sizes(layers, REFERENCE_SIZE)?;
    for layer in layers {
        if sizes[layer.index] != layer.x_out {
            return Err(fail(
                layer.index,
                format!("output size {} but the table declares {}", sizes[layer.index], layer.x_out),
            ));
        }
        if let (Some(x_in), Some(&src)) = (layer.x_in, layer.data_from.layers().first()) {
            if sizes[src] != x_in {
                return Err(fail(
                    layer.index,
                    format!("input size {} but the table declares {x_in}", sizes[src]),
                ));
            }
        }
    }
    Ok(())
}

fn audit_channels(layers: &[LayerSpec], layer: &LayerSpec) -> Result<()> {
    let i = layer.index;
    let src: Vec<usize> = layer.data_from.layers().iter().map(|&j| layers[j].c_out).collect();
    let total: usize = src.iter().sum();
    let declared_in = layer.c_in;
    let expect_in = |want: usize| -> Result<()> {
        match declared_in {
            Some(c) if c == want => Ok(()),
            other => Err(fail(i, format!("sources provide {want} channels, table declares {other:?}"))),
        }
    };
    let expect_out = |want: usize| -> Result<()> {
        if layer.c_out == want {
            Ok(())
        } else {
            Err(fail(i, format!("produces {want} channels, table declares {}", layer.c_out)))
        }
    };
    let single = || -> Result<()> {
        match layer.data_from {
            Source::Layer(_) => Ok(()),
            _ => Err(fail(i, format!("{} takes exactly one source layer", layer.op.name()))),
        }
    };
    match layer.op {
        LayerOp::LInput | LayerOp::AbInput => {
            if layer.data_from != Source::External {
                return Err(fail(i, "input layers take no source"));
            }
            expect_out(if layer.op == LayerOp::LInput { 1 } else { 2 })
        }
        LayerOp::Conv(spec) | LayerOp::TransposedConv(spec) => {
            // A bracketed source list feeds the channel concatenation of its layers.
            if !matches!(layer.data_from, Source::Layer(_) | Source::Concat(_)) {
                return Err(fail(i, format!("{} cannot read a summed source", layer.op.name())));
            }
            spec.validate().map_err(|e| fail(i, e.to_string()))?;
            expect_in(total)?;
            if spec.in_channels != total {
                return Err(fail(i, format!("kernel expects {} channels, sources give {total}", spec.in_channels)));
            }
            expect_out(spec.out_channels)
        }
        LayerOp::Relu | LayerOp::MaxPool { .. } => {
            single()?;
            expect_in(total)?;
            expect_out(total)
        }
        LayerOp::Concat => {
            if !matches!(layer.data_from, Source::Concat(ref v) if v.len() >= 2) {
                return Err(fail(i, "concatenation needs a bracketed list of sources"));
            }
            expect_in(total)?;
            expect_out(total)
        }
        LayerOp::Add => {
            if !matches!(layer.data_from, Source::Sum(ref v) if v.len() >= 2) {
                return Err(fail(i, "addition needs a braced list of sources"));
            }
            if src.iter().any(|&c| c != src[0]) {
                return Err(fail(i, format!("addends have differing channel counts {src:?}")));
            }
            expect_in(total)?;
            expect_out(src[0])
        }
    }
}

/// Output side length of every layer for a square input of side `size`.
pub fn propagate_sizes(layers: &[LayerSpec], size: usize) -> Result<Vec<usize>> {
    let mut sizes: Vec<usize> = Vec::with_capacity(layers.len());
    for layer in layers {
        let i = layer.index;
        let src: Vec<usize> = layer.data_from.layers().iter().map(|&j| sizes[j]).collect();
        if src.iter().any(|&s| s != src[0]) {
            return Err(fail(i, format!("sources disagree on spatial size {src:?}")));
        }
        let out = match layer.op {
            LayerOp::LInput | LayerOp::AbInput => size,
            LayerOp::Conv(spec) => spec
                .conv_output_size(src[0])
                .ok_or_else(|| fail(i, format!("kernel does not fit a {}-pixel input", src[0])))?,
            LayerOp::TransposedConv(spec) => spec
                .transposed_output_size(src[0])
                .ok_or_else(|| fail(i, "padding removes the whole output"))?,
            LayerOp::MaxPool { kernel, stride } => {
                if src[0] < kernel || (kernel == stride && !src[0].is_multiple_of(stride)) {
                    return Err(fail(i, format!("cannot pool a {}-pixel input", src[0])));
                }
                (src[0] - kernel) / stride + 1
            }
            LayerOp::Relu | LayerOp::Concat | LayerOp::Add => src[0],
        };
        sizes.push(out);
    }
    Ok(sizes)
}

/// Whether any layer applies a ReLU directly to `index`'s output.
fn feeds_relu(layers: &[LayerSpec], index: usize) -> bool {
    layers
        .iter()
        .any(|l| matches!(l.op, LayerOp::Relu) && l.data_from.layers().contains(&index))
}

/// Kaiming-normal fan-in initialization; biases start at zero. The ReLU gain
/// of 2 applies only to layers followed by a ReLU, the linear output heads
/// get gain 1.
fn init_params(layer: &LayerSpec, gain: f64, rng: &mut ChaCha8Rng) -> Option<LayerParams> {
    let (spec, shape, fan_in) = match layer.op {
        LayerOp::Conv(s) => (s, [s.out_channels, s.in_channels, s.kernel, s.kernel], s.in_channels * s.kernel * s.kernel),
        // Each transposed-conv output receives (K / S)^2 taps per input channel.
        LayerOp::TransposedConv(s) => {
            let taps = (s.kernel * s.kernel).div_ceil(s.stride * s.stride);
            (s, [s.in_channels, s.out_channels, s.kernel, s.kernel], s.in_channels * taps)
        }
        _ => return None,
    };
    let std = (gain / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("finite std");
    let numel: usize = shape.iter().product();
    let values = (0..numel).map(|_| normal.sample(rng) as f32).collect();
    Some(LayerParams {
        weight: ParamTensor::new(Tensor::new(&shape, values).expect("shape matches")),
        bias: ParamTensor::new(Tensor::zeros(&[spec.out_channels])),
    })
}

impl CrayonModel {
    /// Audits `layers` and initializes parameters from `seed`.
    pub fn from_layers(layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        audit_layers(&layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .filter_map(|l| {
                let gain = if feeds_relu(&layers, l.index) { 2.0 } else { 1.0 };
                init_params(l, gain, &mut rng).map(|p| (l.index, p))
            })
            .collect();
        Ok(Self { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<usize, LayerParams> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut BTreeMap<usize, LayerParams> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(LayerParams::count).sum()
    }

    /// Fails before any compute when the inputs cannot flow through the net.
    fn check_inputs(&self, l: &Tensor, ab: &Tensor) -> Result<[usize; 4]> {
        let [n, c, h, w] = l.dims4()?;
        if c != 1 {
            return Err(Error::dim("L channels", format!("expected 1, got {c}")));
        }
        let [an, ac, ah, aw] = ab.dims4()?;
        if ac != 2 {
            return Err(Error::dim("AB channels", format!("expected 2, got {ac}")));
        }
        if (an, ah, aw) != (n, h, w) {
            return Err(Error::dim(
                "AB hints",
                format!("shape {:?} does not match L shape {:?}", ab.shape(), l.shape()),
            ));
        }
        for (axis, v) in [("height", h), ("width", w)] {
            if v % SIZE_MULTIPLE != 0 {
                return Err(Error::dim(axis, format!("{v} is not divisible by {SIZE_MULTIPLE}")));
            }
        }
        Ok([n, c, h, w])
    }

    fn layer_params(&self, index: usize) -> Result<&LayerParams> {
        self.params
            .get(&index)
            .ok_or_else(|| fail(index, "missing parameters"))
    }

    /// `(N, 3, H, W)` output: input L followed by predicted normalized AB.
    pub fn forward(&self, l: &Tensor, ab: &Tensor) -> Result<Tensor> {
        self.forward_observed(l, ab, |_, _| {})
    }

    /// Forward pass that reports every layer's output shape.
    pub fn forward_shapes(&self, l: &Tensor, ab: &Tensor) -> Result<(Tensor, Vec<[usize; 4]>)> {
        let mut shapes = vec![[0; 4]; self.layers.len()];
        let out = self.forward_observed(l, ab, |i, t| {
            shapes[i] = t.dims4().expect("layer outputs are rank 4");
        })?;
        Ok((out, shapes))
    }

    /// Inference that frees each activation after its last consumer runs.
    fn forward_observed(&self, l: &Tensor, ab: &Tensor, mut observe: impl FnMut(usize, &Tensor)) -> Result<Tensor> {
        self.check_inputs(l, ab)?;
        let mut last_use = vec![0usize; self.layers.len()];
        for layer in &self.layers {
            for &j in layer.data_from.layers() {
                last_use[j] = last_use[j].max(layer.index);
            }
        }
        let mut outs: Vec<Option<Tensor>> = (0..self.layers.len()).map(|_| None).collect();
        for layer in &self.layers {
            let i = layer.index;
            let y = {
                let get = |j: usize| outs[j].as_ref().expect("activation kept until last use");
                match layer.op {
                    LayerOp::LInput => l.clone(),
                    LayerOp::AbInput => ab.clone(),
                    LayerOp::Conv(spec) | LayerOp::TransposedConv(spec) => {
                        let p = self.layer_params(i)?;
                        let joined;
                        let x = match &layer.data_from {
                            Source::Concat(src) => {
                                let xs: Vec<&Tensor> = src.iter().map(|&j| get(j)).collect();
                                joined = nn::concat_channels(&xs)?;
                                &joined
                            }
                            other => get(other.layers()[0]),
                        };
                        if matches!(layer.op, LayerOp::Conv(_)) {
                            nn::conv2d(x, &p.weight.value, &p.bias.value, &spec)?
                        } else {
                            nn::conv_transpose2d(x, &p.weight.value, &p.bias.value, &spec)?
                        }
                    }
                    LayerOp::Relu => nn::relu(get(layer.data_from.layers()[0])),
                    LayerOp::MaxPool { kernel, stride } => nn::maxpool2d(get(layer.data_from.layers()[0]), kernel, stride)?,
                    LayerOp::Concat => {
                        let xs: Vec<&Tensor> = layer.data_from.layers().iter().map(|&j| get(j)).collect();
                        nn::concat_channels(&xs)?
                    }
                    LayerOp::Add => {
                        let src = layer.data_from.layers();
                        let mut acc = get(src[0]).clone();
                        for &j in &src[1..] {
                            acc = nn::add_elementwise(&acc, get(j))?;
                        }
                        acc
                    }
                }
            };
            observe(i, &y);
            outs[i] = Some(y);
            for &j in layer.data_from.layers() {
                if last_use[j] == i {
                    outs[j] = None;
                }
            }
        }
        outs[OUTPUT_LAYER]
            .take()
            .ok_or_else(|| Error::Graph("output layer produced nothing".into()))
    }

    /// Records the forward pass on `tape` and returns the output variable.
    pub fn record<'p>(&'p self, tape: &mut Tape<'p>, l: Var, ab: Var) -> Result<Var> {
        self.check_inputs(tape.value(l)?, tape.value(ab)?)?;
        let mut vars: Vec<Var> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let i = layer.index;
            let src = layer.data_from.layers();
            let v = match layer.op {
                LayerOp::LInput => l,
                LayerOp::AbInput => ab,
                LayerOp::Conv(spec) | LayerOp::TransposedConv(spec) => {
                    let p = self.layer_params(i)?;
                    let w = tape.param(weight_key(i), &p.weight.value);
                    let b = tape.param(bias_key(i), &p.bias.value);
                    let x = match &layer.data_from {
                        Source::Concat(_) => {
                            let xs: Vec<Var> = src.iter().map(|&j| vars[j]).collect();
                            tape.concat_channels(&xs)?
                        }
                        _ => vars[src[0]],
                    };
                    if matches!(layer.op, LayerOp::Conv(_)) {
                        tape.conv2d(x, w, b, spec)?
                    } else {
                        tape.conv_transpose2d(x, w, b, spec)?
                    }
                }
                LayerOp::Relu => tape.relu(vars[src[0]])?,
                LayerOp::MaxPool { kernel, stride } => tape.maxpool2d(vars[src[0]], kernel, stride)?,
                LayerOp::Concat => {
                    let xs: Vec<Var> = src.iter().map(|&j| vars[j]).collect();
                    tape.concat_channels(&xs)?
                }
                LayerOp::Add => {
                    let mut acc = vars[src[0]];
                    for &j in &src[1..] {
                        acc = tape.add(acc, vars[j])?;
                    }
                    acc
                }
            };
            vars.push(v);
        }
        Ok(vars[OUTPUT_LAYER])
    }

    /// Moves gradients out of `grads` into each parameter; parameters the
    /// loss did not reach get a zero gradient.
    pub fn load_gradients(&mut self, grads: &mut Gradients) -> Result<()> {
        for (&i, p) in self.params.iter_mut() {
            for (key, slot) in [(weight_key(i), &mut p.weight), (bias_key(i), &mut p.bias)] {
                match grads.take_param(key) {
                    Some(g) => slot.set_grad(g)?,
                    None => slot.zero_grad(),
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.weight.zero_grad();
            p.bias.zero_grad();
        }
    }

    /// Applies one ADAM step to every parameter from its stored gradient.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) -> Result<()> {
        for (&i, p) in self.params.iter_mut() {
            p.weight.adam_step(lr, cfg, &format!("layer{i}.weight"))?;
            p.bias.adam_step(lr, cfg, &format!("layer{i}.bias"))?;
        }
        Ok(())
    }

    /// Convolution geometry of every parameterized layer, in index order.
    pub fn conv_specs(&self) -> Vec<(usize, ConvSpec)> {
        self.layers
            .iter()
            .filter_map(|l| l.op.conv_spec().map(|s| (l.index, *s)))
            .collect()
    }
}
