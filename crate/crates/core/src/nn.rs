//! Fixed-zoo feed-forward networks with hand-written backward passes.
//!
//! A model is an ordered list of [`LayerSpec`]s ending in a softmax
//! cross-entropy head. Every ReLU output is a *hook site*: during training the
//! active regularizer may return a [`Mask`] for it, and the backward pass
//! routes gradients through that mask. Each layer keeps the activation it
//! produced and, after `backward`, the gradient of the loss with respect to
//! that activation, which is what momentum-adaptive dropout consumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_at_acc, matmul_bt, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    Relu,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Flatten,
    SoftmaxCrossEntropy,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    fn name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

/// Architecture description. `input_shape` is the per-sample shape
/// (`[features]` for dense inputs, `[channels, height, width]` for images).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl ModelSpec {
    /// Multilayer perceptron `input -> hidden... -> classes` with ReLU between layers.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Self {
        let mut layers = Vec::new();
        let mut width = input;
        for &h in hidden {
            layers.push(LayerSpec::Dense {
                input: width,
                output: h,
            });
            layers.push(LayerSpec::Relu);
            width = h;
        }
        layers.push(LayerSpec::Dense {
            input: width,
            output: classes,
        });
        layers.push(LayerSpec::SoftmaxCrossEntropy);
        ModelSpec {
            input_shape: vec![input],
            layers,
            seed,
        }
    }

    /// Per-layer output shapes (per sample), validating adjacency as it goes.
    pub fn output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Shape(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        let heads = self
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::SoftmaxCrossEntropy))
            .count();
        if heads != 1 || !matches!(self.layers.last(), Some(LayerSpec::SoftmaxCrossEntropy)) {
            return Err(Error::Shape(
                "model needs exactly one softmax cross-entropy head, placed last".into(),
            ));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Dense { input, output } => {
                    if shape != [input] {
                        return Err(Error::Shape(format!(
                            "layer {i} (dense {input}->{output}) receives shape {shape:?}"
                        )));
                    }
                    if output == 0 {
                        return Err(Error::Shape(format!("layer {i} has zero outputs")));
                    }
                    vec![output]
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    if shape.len() != 3 || shape[0] != in_channels {
                        return Err(Error::Shape(format!(
                            "layer {i} (conv2d, {in_channels} channels) receives shape {shape:?}"
                        )));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(Error::Shape(format!("layer {i} has a zero conv dimension")));
                    }
                    if shape[1] < kernel || shape[2] < kernel {
                        return Err(Error::Shape(format!(
                            "layer {i} kernel {kernel} larger than input {shape:?}"
                        )));
                    }
                    vec![
                        out_channels,
                        (shape[1] - kernel) / stride + 1,
                        (shape[2] - kernel) / stride + 1,
                    ]
                }
                LayerSpec::Flatten => vec![shape.iter().product()],
                LayerSpec::Relu => shape,
                LayerSpec::SoftmaxCrossEntropy => {
                    if shape.len() != 1 || shape[0] < 2 {
                        return Err(Error::Shape(format!(
                            "loss head needs a flat logit vector with >= 2 classes, got {shape:?}"
                        )));
                    }
                    shape
                }
            };
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn num_classes(&self) -> Result<usize> {
        Ok(self.output_shapes()?.last().map_or(0, |s| s[0]))
    }

    /// Indices of layers whose output is a hook site (every ReLU).
    pub fn hook_sites(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Relu))
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Uniform on ±sqrt(6 / fan_in), zero bias.
    #[default]
    KaimingUniform,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Multiplicative mask for a hook site: `a' = a ⊙ keep / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub keep: Tensor,
    pub scale: f64,
}

/// Per-site activation transform invoked during training-mode forward passes.
pub trait ActivationHook {
    /// `site` counts hook sites from 0 in forward order.
    fn on_activation(&mut self, site: usize, activation: &Tensor) -> Result<Option<Mask>>;
}

/// Hook that never masks anything.
pub struct NoHook;

impl ActivationHook for NoHook {
    fn on_activation(&mut self, _site: usize, _activation: &Tensor) -> Result<Option<Mask>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LayerState {
    pub weights: Tensor,
    pub bias: Tensor,
    #[serde(skip)]
    pub last_input: Option<Tensor>,
    #[serde(skip)]
    pub last_activation: Option<Tensor>,
    #[serde(skip)]
    pub last_activation_grad: Option<Tensor>,
    #[serde(skip)]
    pub last_mask: Option<Mask>,
}

/// Gradients for one parameterised layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layer: usize,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<ParamGrads>,
}

impl Gradients {
    /// Flat view in the same order as [`Model::params_mut`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|g| [&g.weights, &g.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|g| [&mut g.weights, &mut g.bias])
            .collect()
    }
}

/// Output of a forward pass with targets.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Model {
    spec: ModelSpec,
    states: Vec<LayerState>,
    #[serde(skip)]
    shapes: Vec<Vec<usize>>,
    #[serde(skip)]
    last_logits: Option<Tensor>,
}

impl Model {
    pub fn new(spec: ModelSpec, init: Init) -> Result<Self> {
        let shapes = spec.output_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let states = spec
            .layers
            .iter()
            .map(|layer| {
                let (wshape, fan_in) = match *layer {
                    LayerSpec::Dense { input, output } => (vec![output, input], input),
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                        kernel,
                        ..
                    } => (
                        vec![out_channels, in_channels, kernel, kernel],
                        in_channels * kernel * kernel,
                    ),
                    _ => return LayerState::default(),
                };
                let mut weights = Tensor::zeros(&wshape);
                if init == Init::KaimingUniform {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for w in weights.data_mut() {
                        *w = rng.random_range(-bound..bound);
                    }
                }
                LayerState {
                    bias: Tensor::zeros(&[wshape[0]]),
                    weights,
                    ..LayerState::default()
                }
            })
            .collect();
        Ok(Model {
            spec,
            states,
            shapes,
            last_logits: None,
        })
    }

    /// Rebuilds a model from a spec and explicit per-layer parameters.
    pub fn from_states(spec: ModelSpec, states: Vec<LayerState>) -> Result<Self> {
        let mut model = Model::new(spec, Init::Zeros)?;
        if states.len() != model.states.len() {
            return Err(Error::Shape(format!(
                "{} layer states for {} layers",
                states.len(),
                model.states.len()
            )));
        }
        for (i, (have, want)) in states.into_iter().zip(model.states.iter_mut()).enumerate() {
            if have.weights.shape() != want.weights.shape()
                || have.bias.shape() != want.bias.shape()
            {
                return Err(Error::Shape(format!(
                    "layer {i} parameters {:?}/{:?} do not match spec {:?}/{:?}",
                    have.weights.shape(),
                    have.bias.shape(),
                    want.weights.shape(),
                    want.bias.shape()
                )));
            }
            want.weights = have.weights;
            want.bias = have.bias;
        }
        Ok(model)
    }

    /// Re-derives cached shapes after deserialisation.
    pub fn validate(mut self) -> Result<Self> {
        let states = std::mem::take(&mut self.states);
        Model::from_states(self.spec, states)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn states(&self) -> &[LayerState] {
        &self.states
    }

    pub fn states_mut(&mut self) -> &mut [LayerState] {
        &mut self.states
    }

    pub fn hook_sites(&self) -> Vec<usize> {
        self.spec.hook_sites()
    }

    /// Activation gradients recorded at each hook site by the last backward pass.
    pub fn site_activation_grads(&self) -> Vec<Option<&Tensor>> {
        self.hook_sites()
            .into_iter()
            .map(|i| self.states[i].last_activation_grad.as_ref())
            .collect()
    }

    /// Parameter tensors as (weights, bias) pairs for each parameterised layer.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let spec = &self.spec;
        self.states
            .iter_mut()
            .zip(&spec.layers)
            .filter(|(_, l)| l.has_params())
            .flat_map(|(s, _)| [&mut s.weights, &mut s.bias])
            .collect()
    }

    /// Human-readable names matching [`Model::params_mut`] order.
    pub fn param_names(&self) -> Vec<String> {
        self.spec
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.has_params())
            .flat_map(|(i, l)| {
                [
                    format!("{}{}.weight", l.name(), i),
                    format!("{}{}.bias", l.name(), i),
                ]
            })
            .collect()
    }

    /// Weight matrices of parameterised layers, conv kernels flattened to
    /// `out_channels × (in_channels·k·k)`.
    pub fn weight_matrices(&self) -> Vec<(usize, usize, &[f64])> {
        self.states
            .iter()
            .zip(&self.spec.layers)
            .filter(|(_, l)| l.has_params())
            .map(|(s, _)| {
                let rows = s.weights.shape()[0];
                let cols = s.weights.len() / rows;
                (rows, cols, s.weights.data())
            })
            .collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() < 2 || batch.shape()[1..] != self.spec.input_shape[..] {
            return Err(Error::Shape(format!(
                "batch shape {:?} does not match model input {:?}",
                batch.shape(),
                self.spec.input_shape
            )));
        }
        if batch.batch_size() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    /// Runs the network and returns logits. In training mode, `hooks` is
    /// called on every ReLU output and may mask it.
    pub fn forward(
        &mut self,
        batch: &Tensor,
        mode: Mode,
        hooks: &mut dyn ActivationHook,
    ) -> Result<Tensor> {
        self.check_batch(batch)?;
        let bsz = batch.batch_size();
        let mut x = batch.clone();
        let mut site = 0;
        let n_layers = self.spec.layers.len();
        for li in 0..n_layers {
            let layer = self.spec.layers[li];
            let mut out_shape = vec![bsz];
            out_shape.extend_from_slice(&self.shapes[li]);
            let state = &mut self.states[li];
            state.last_mask = None;
            state.last_activation_grad = None;
            let out = match layer {
                LayerSpec::Dense { input, output } => {
                    let mut out = vec![0.0; bsz * output];
                    matmul_bt(x.data(), state.weights.data(), bsz, input, output, &mut out);
                    for row in out.chunks_mut(output) {
                        for (o, b) in row.iter_mut().zip(state.bias.data()) {
                            *o += b;
                        }
                    }
                    Tensor::new(out_shape, out)?
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => conv2d_forward(
                    &x,
                    &state.weights,
                    &state.bias,
                    ConvGeom::new(x.shape(), in_channels, out_channels, kernel, stride),
                )?,
                LayerSpec::Relu => {
                    let a = x.map(|v| v.max(0.0));
                    let masked = if mode == Mode::Train {
                        hooks.on_activation(site, &a)?
                    } else {
                        None
                    };
                    site += 1;
                    match masked {
                        Some(mask) => {
                            a.check_same_shape(&mask.keep)?;
                            if !(mask.scale > 0.0) {
                                return Err(Error::State(format!(
                                    "mask scale {} at layer {li} must be positive",
                                    mask.scale
                                )));
                            }
                            let out = a.zip_map(&mask.keep, |v, k| v * k / mask.scale)?;
                            state.last_mask = Some(mask);
                            state.last_input = Some(x);
                            state.last_activation = Some(a);
                            if !out.all_finite() {
                                return Err(Error::NonFinite {
                                    layer: li,
                                    detail: "masked activation".into(),
                                });
                            }
                            x = out;
                            continue;
                        }
                        None => a,
                    }
                }
                LayerSpec::Flatten => x.clone().reshape(out_shape)?,
                LayerSpec::SoftmaxCrossEntropy => x.clone(),
            };
            if !out.all_finite() {
                return Err(Error::NonFinite {
                    layer: li,
                    detail: format!("{} output", layer.name()),
                });
            }
            state.last_input = Some(std::mem::replace(&mut x, out.clone()));
            state.last_activation = Some(out);
        }
        self.last_logits = Some(x.clone());
        Ok(x)
    }

    /// Forward pass followed by mean cross-entropy against `targets`.
    pub fn forward_loss(
        &mut self,
        batch: &Tensor,
        targets: &[usize],
        mode: Mode,
        hooks: &mut dyn ActivationHook,
    ) -> Result<ForwardOutput> {
        let logits = self.forward(batch, mode, hooks)?;
        let losses = cross_entropy_per_sample(&logits, targets)?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                layer: self.spec.layers.len() - 1,
                detail: "loss".into(),
            });
        }
        Ok(ForwardOutput { logits, loss })
    }

    /// Back-propagates mean cross-entropy for the last forward batch.
    pub fn backward(&mut self, targets: &[usize]) -> Result<Gradients> {
        let logits = self
            .last_logits
            .as_ref()
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let bsz = logits.batch_size();
        if targets.len() != bsz {
            return Err(Error::Shape(format!(
                "{} targets for batch of {bsz}",
                targets.len()
            )));
        }
        let mut g = softmax_rows(logits);
        let classes = g.sample_len();
        for (i, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::Shape(format!("target {t} >= {classes} classes")));
            }
            let row = g.sample_mut(i);
            row[t] -= 1.0;
            row.iter_mut().for_each(|v| *v /= bsz as f64);
        }

        let mut param_grads = Vec::new();
        for li in (0..self.spec.layers.len()).rev() {
            let layer = self.spec.layers[li];
            let state = &mut self.states[li];
            let input = state
                .last_input
                .as_ref()
                .ok_or_else(|| Error::State(format!("layer {li} has no stored input")))?;
            g = match layer {
                LayerSpec::SoftmaxCrossEntropy => {
                    state.last_activation_grad = Some(g.clone());
                    g
                }
                LayerSpec::Relu => {
                    let ga = match &state.last_mask {
                        Some(mask) => g.zip_map(&mask.keep, |v, k| v * k / mask.scale)?,
                        None => g,
                    };
                    let gz = ga.zip_map(input, |v, z| if z > 0.0 { v } else { 0.0 })?;
                    state.last_activation_grad = Some(ga);
                    gz
                }
                LayerSpec::Flatten => {
                    state.last_activation_grad = Some(g.clone());
                    g.reshape(input.shape().to_vec())?
                }
                LayerSpec::Dense {
                    input: n_in,
                    output,
                } => {
                    let mut dw = vec![0.0; output * n_in];
                    matmul_at_acc(g.data(), input.data(), bsz, output, n_in, &mut dw);
                    let mut db = vec![0.0; output];
                    for row in g.data().chunks(output) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let mut dx = vec![0.0; bsz * n_in];
                    matmul(g.data(), state.weights.data(), bsz, output, n_in, &mut dx);
                    param_grads.push(ParamGrads {
                        layer: li,
                        weights: Tensor::new(vec![output, n_in], dw)?,
                        bias: Tensor::new(vec![output], db)?,
                    });
                    state.last_activation_grad = Some(g);
                    Tensor::new(input.shape().to_vec(), dx)?
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                } => {
                    let geom =
                        ConvGeom::new(input.shape(), in_channels, out_channels, kernel, stride);
                    let (dx, dw, db) = conv2d_backward(input, &state.weights, &g, geom)?;
                    param_grads.push(ParamGrads {
                        layer: li,
                        weights: dw,
                        bias: db,
                    });
                    state.last_activation_grad = Some(g);
                    dx
                }
            };
        }
        param_grads.reverse();
        let grads = Gradients {
            layers: param_grads,
        };
        for (t, name) in grads.tensors().iter().zip(self.param_names()) {
            if !t.all_finite() {
                return Err(Error::NonFiniteGradient { param: name });
            }
        }
        Ok(grads)
    }

    /// Class predictions in evaluation mode (no regularizer is applied).
    pub fn predict(&mut self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch, Mode::Eval, &mut NoHook)?;
        Ok(logits.argmax_rows())
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let n = out.batch_size();
    for i in 0..n {
        let row = out.sample_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Cross-entropy of each row of `logits` against its class index.
pub fn cross_entropy_per_sample(logits: &Tensor, targets: &[usize]) -> Result<Vec<f64>> {
    if targets.len() != logits.batch_size() {
        return Err(Error::Shape(format!(
            "{} targets for {} rows",
            targets.len(),
            logits.batch_size()
        )));
    }
    let classes = logits.sample_len();
    targets
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            if t >= classes {
                return Err(Error::Shape(format!("target {t} >= {classes} classes")));
            }
            let row = logits.sample(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            Ok(lse - row[t])
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn new(input_shape: &[usize], c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        let (h, w) = (input_shape[2], input_shape[3]);
        ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            h_out: (h - k) / stride + 1,
            w_out: (w - k) / stride + 1,
        }
    }
}

fn conv2d_forward(x: &Tensor, weights: &Tensor, bias: &Tensor, g: ConvGeom) -> Result<Tensor> {
    let bsz = x.batch_size();
    let xd = x.data();
    let wd = weights.data();
    let mut out = vec![0.0; bsz * g.c_out * g.h_out * g.w_out];
    for b in 0..bsz {
        for o in 0..g.c_out {
            let ob = (b * g.c_out + o) * g.h_out * g.w_out;
            out[ob..ob + g.h_out * g.w_out]
                .iter_mut()
                .for_each(|v| *v = bias.data()[o]);
            for c in 0..g.c_in {
                let xb = (b * g.c_in + c) * g.h * g.w;
                for ki in 0..g.k {
                    for kj in 0..g.k {
                        let wv = wd[((o * g.c_in + c) * g.k + ki) * g.k + kj];
                        for i in 0..g.h_out {
                            let xrow = xb + (i * g.stride + ki) * g.w + kj;
                            let orow = ob + i * g.w_out;
                            for j in 0..g.w_out {
                                out[orow + j] += wv * xd[xrow + j * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![bsz, g.c_out, g.h_out, g.w_out], out)
}

fn conv2d_backward(
    x: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    g: ConvGeom,
) -> Result<(Tensor, Tensor, Tensor)> {
    let bsz = x.batch_size();
    let xd = x.data();
    let wd = weights.data();
    let gd = grad_out.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dw = vec![0.0; wd.len()];
    let mut db = vec![0.0; g.c_out];
    for b in 0..bsz {
        for (o, dbo) in db.iter_mut().enumerate() {
            let ob = (b * g.c_out + o) * g.h_out * g.w_out;
            *dbo += gd[ob..ob + g.h_out * g.w_out].iter().sum::<f64>();
            for c in 0..g.c_in {
                let xb = (b * g.c_in + c) * g.h * g.w;
                for ki in 0..g.k {
                    for kj in 0..g.k {
                        let widx = ((o * g.c_in + c) * g.k + ki) * g.k + kj;
                        let wv = wd[widx];
                        let mut acc = 0.0;
                        for i in 0..g.h_out {
                            let xrow = xb + (i * g.stride + ki) * g.w + kj;
                            let orow = ob + i * g.w_out;
                            for j in 0..g.w_out {
                                let go = gd[orow + j];
                                acc += go * xd[xrow + j * g.stride];
                                dx[xrow + j * g.stride] += go * wv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(weights.shape().to_vec(), dw)?,
        Tensor::new(vec![g.c_out], db)?,
    ))
}
