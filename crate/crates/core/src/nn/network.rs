//! Sequential CNN built from a [`LayerSpec`] list, with a batched forward pass
//! that can record a tape for backpropagation.

use rand::RngCore;

use super::activation::{dropout_mask, softmax_slice};
use super::conv::{self, ConvGeom};
use super::dense;
use super::lrn::{self, LrnParams};
use super::pool::{self, PoolGeom};
use crate::emotion::{EmotionDistribution, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One layer of the sequential network.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// Same-padded stride-1 convolution with a `kernel × kernel` window.
    Conv { kernel: usize, out_channels: usize },
    MaxPool { kernel: usize, stride: usize },
    Lrn(LrnParams),
    Relu,
    Dense { units: usize },
    /// Inverted dropout; active only in training mode.
    Dropout { keep_prob: f64 },
    /// Must be the final layer.
    Softmax,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Lrn(_) => "lrn",
            LayerSpec::Relu => "relu",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// Shape of one trainable tensor plus the fan-in/fan-out used to initialize it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub layer: usize,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub is_bias: bool,
}

/// Input geometry plus layer list.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Side length of the square face crops the canonical network consumes.
pub const CROP_SIZE: usize = 64;

impl NetworkSpec {
    /// conv(11×11, 64) → lrn → relu → maxpool → conv(5×5, 128) → lrn → relu → maxpool
    /// → conv(3×3, 256) → relu → dense(512) → relu → dropout(0.5) → dense(3) → softmax.
    pub fn canonical() -> Self {
        Self::alexnet_variant([CROP_SIZE, CROP_SIZE, 3], [64, 128, 256], 512)
    }

    /// The canonical layer order with configurable widths, handy for small test nets.
    pub fn alexnet_variant(input_shape: [usize; 3], filters: [usize; 3], hidden: usize) -> Self {
        use LayerSpec::*;
        let lrn = Lrn(LrnParams::default());
        let pool = MaxPool { kernel: 3, stride: 2 };
        NetworkSpec {
            input_shape,
            layers: vec![
                Conv { kernel: 11, out_channels: filters[0] },
                lrn.clone(),
                Relu,
                pool.clone(),
                Conv { kernel: 5, out_channels: filters[1] },
                lrn,
                Relu,
                pool,
                Conv { kernel: 3, out_channels: filters[2] },
                Relu,
                Dense { units: hidden },
                Relu,
                Dropout { keep_prob: 0.5 },
                Dense { units: NUM_CLASSES },
                Softmax,
            ],
        }
    }

    /// Output shape of every layer, in order. Validates the whole layer list.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.contains(&0) {
            return Err(Error::Config(format!("input shape {:?} has a zero dimension", self.input_shape)));
        }
        let mut shape = self.input_shape.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = match *layer {
                LayerSpec::Conv { kernel, out_channels } => {
                    if out_channels == 0 {
                        return Err(Error::Config(format!("layer {i}: conv with zero filters")));
                    }
                    let g = ConvGeom::new(&shape, &[kernel, kernel, channels(&shape, i)?, out_channels], &[out_channels])?;
                    vec![g.h, g.w, g.f]
                }
                LayerSpec::MaxPool { kernel, stride } => PoolGeom::new(&shape, kernel, stride)?.output_shape().to_vec(),
                LayerSpec::Lrn(p) => {
                    p.validate()?;
                    channels(&shape, i)?;
                    shape
                }
                LayerSpec::Relu => shape,
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(Error::Config(format!("layer {i}: dense with zero units")));
                    }
                    vec![units]
                }
                LayerSpec::Dropout { keep_prob } => {
                    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
                        return Err(Error::Config(format!("layer {i}: keep_prob {keep_prob} outside (0, 1]")));
                    }
                    shape
                }
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::Config("softmax must be the final layer".into()));
                    }
                    shape
                }
            };
            out.push(shape.clone());
        }
        if self.layers.last() != Some(&LayerSpec::Softmax) {
            return Err(Error::Config("network must end with softmax".into()));
        }
        let logits = &out[out.len() - 1];
        if logits.iter().product::<usize>() != NUM_CLASSES {
            return Err(Error::Config(format!("network produces {logits:?} outputs, need {NUM_CLASSES}")));
        }
        Ok(out)
    }

    /// Layer output shapes with consecutive duplicates (shape-preserving layers) removed.
    pub fn distinct_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = self.layer_shapes()?;
        shapes.dedup();
        Ok(shapes)
    }

    /// Trainable tensors in storage order: weights then bias for each conv/dense layer.
    pub fn param_shapes(&self) -> Result<Vec<ParamShape>> {
        let shapes = self.layer_shapes()?;
        let mut params = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let input: &[usize] = if i == 0 { &self.input_shape } else { &shapes[i - 1] };
            match *layer {
                LayerSpec::Conv { kernel, out_channels } => {
                    let receptive = kernel * kernel;
                    let fan_in = receptive * input[2];
                    let fan_out = receptive * out_channels;
                    params.push(ParamShape { layer: i, shape: vec![kernel, kernel, input[2], out_channels], fan_in, fan_out, is_bias: false });
                    params.push(ParamShape { layer: i, shape: vec![out_channels], fan_in, fan_out, is_bias: true });
                }
                LayerSpec::Dense { units } => {
                    let d = input.iter().product();
                    params.push(ParamShape { layer: i, shape: vec![d, units], fan_in: d, fan_out: units, is_bias: false });
                    params.push(ParamShape { layer: i, shape: vec![units], fan_in: d, fan_out: units, is_bias: true });
                }
                _ => {}
            }
        }
        Ok(params)
    }
}

fn channels(shape: &[usize], layer: usize) -> Result<usize> {
    match shape {
        [_, _, c] => Ok(*c),
        _ => Err(Error::Config(format!("layer {layer} needs an [H, W, C] input, got {shape:?}"))),
    }
}

/// Forward-pass mode. Training mode draws dropout masks from the given generator.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

enum Cache {
    Conv { input: Vec<f64> },
    Pool { argmax: Vec<u32> },
    Lrn { input: Vec<f64> },
    Relu { active: Vec<bool> },
    Dense { input: Vec<f64> },
    Dropout { mask: Option<Vec<f64>> },
}

/// Everything a backward pass needs from one batched forward pass.
#[derive(Default)]
pub struct Tape {
    batch: usize,
    caches: Vec<Option<Cache>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }
}

/// A network specification together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Tensor>,
    shapes: Vec<Vec<usize>>,
    /// Index into `params` of each layer's weights, for layers that have them.
    param_index: Vec<Option<usize>>,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        let expected = spec.param_shapes()?;
        if expected.len() != params.len() {
            return Err(Error::dim("Network::new", format!("{} parameter tensors", expected.len()), params.len()));
        }
        for (p, e) in params.iter().zip(&expected) {
            p.expect_shape("Network::new", &e.shape)?;
        }
        let shapes = spec.layer_shapes()?;
        let mut param_index = vec![None; spec.layers.len()];
        let mut next = 0;
        for (slot, layer) in param_index.iter_mut().zip(&spec.layers) {
            if layer.has_params() {
                *slot = Some(next);
                next += 2;
            }
        }
        Ok(Network { spec, params, shapes, param_index })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input_shape
    }

    /// Class distribution for one `[H, W, C]` image.
    pub fn forward(&self, image: &Tensor, mode: Mode<'_>) -> Result<EmotionDistribution> {
        image.expect_shape("network_forward", &self.spec.input_shape)?;
        let batch = image.clone().reshape(&batch_shape(1, &self.spec.input_shape))?;
        let logits = self.forward_batch(&batch, mode, None)?;
        let p = softmax_slice(logits.data());
        EmotionDistribution::new([p[0], p[1], p[2]])
    }

    /// Inference-mode class distribution.
    pub fn predict(&self, image: &Tensor) -> Result<EmotionDistribution> {
        self.forward(image, Mode::Infer)
    }

    /// Runs `[N, H, W, C]` inputs through every layer except the final softmax and
    /// returns the `[N, 3]` logits. With a tape, records what backward needs.
    pub fn forward_batch(&self, batch: &Tensor, mut mode: Mode<'_>, mut tape: Option<&mut Tape>) -> Result<Tensor> {
        let n = match batch.shape() {
            [n, rest @ ..] if rest == self.spec.input_shape => *n,
            other => {
                return Err(Error::dim(
                    "forward_batch",
                    format!("[N, {:?}]", self.spec.input_shape),
                    format!("{other:?}"),
                ))
            }
        };
        if let Some(t) = tape.as_deref_mut() {
            t.batch = n;
            t.caches = Vec::with_capacity(self.spec.layers.len());
        }
        let mut x = batch.data().to_vec();
        let mut cols = Vec::new();
        for (li, layer) in self.spec.layers.iter().enumerate() {
            let in_shape = self.layer_input_shape(li);
            let out_shape = &self.shapes[li];
            let in_len: usize = in_shape.iter().product();
            let out_len: usize = out_shape.iter().product();
            let (next, cache) = match *layer {
                LayerSpec::Conv { .. } => {
                    let (w, b) = self.layer_params(li);
                    let g = ConvGeom::new(in_shape, w.shape(), b.shape())?;
                    let mut out = vec![0.0; n * out_len];
                    for (xi, oi) in x.chunks_exact(in_len).zip(out.chunks_exact_mut(out_len)) {
                        conv::forward_raw(&g, xi, w.data(), b.data(), &mut cols, oi);
                    }
                    (out, Cache::Conv { input: x })
                }
                LayerSpec::MaxPool { kernel, stride } => {
                    let g = PoolGeom::new(in_shape, kernel, stride)?;
                    let mut out = vec![0.0; n * out_len];
                    let mut argmax = vec![0u32; n * out_len];
                    for ((xi, oi), ai) in x
                        .chunks_exact(in_len)
                        .zip(out.chunks_exact_mut(out_len))
                        .zip(argmax.chunks_exact_mut(out_len))
                    {
                        pool::forward_raw(&g, xi, oi, ai);
                    }
                    (out, Cache::Pool { argmax })
                }
                LayerSpec::Lrn(p) => {
                    let mut out = vec![0.0; x.len()];
                    lrn::forward_raw(&p, in_shape[2], &x, &mut out);
                    (out, Cache::Lrn { input: x })
                }
                LayerSpec::Relu => {
                    let active = if tape.is_some() { x.iter().map(|&v| v > 0.0).collect() } else { Vec::new() };
                    for v in &mut x {
                        *v = v.max(0.0);
                    }
                    (x, Cache::Relu { active })
                }
                LayerSpec::Dense { units } => {
                    let (w, b) = self.layer_params(li);
                    let mut out = vec![0.0; n * units];
                    dense::forward_raw(n, in_len, units, &x, w.data(), b.data(), &mut out);
                    (out, Cache::Dense { input: x })
                }
                LayerSpec::Dropout { keep_prob } => match &mut mode {
                    Mode::Train(rng) if keep_prob < 1.0 => {
                        let mask = dropout_mask(x.len(), keep_prob, &mut **rng);
                        for (v, m) in x.iter_mut().zip(&mask) {
                            *v *= m;
                        }
                        (x, Cache::Dropout { mask: Some(mask) })
                    }
                    _ => (x, Cache::Dropout { mask: None }),
                },
                LayerSpec::Softmax => break,
            };
            x = next;
            if let Some(t) = tape.as_deref_mut() {
                t.caches.push(Some(cache));
            }
        }
        Tensor::new(vec![n, NUM_CLASSES], x)
    }

    /// Gradients of a scalar loss with respect to every parameter tensor, given
    /// the loss gradient `[N, 3]` with respect to the logits of the taped pass.
    pub fn backward(&self, tape: &Tape, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let n = tape.batch;
        let body = self.spec.layers.len() - 1;
        if n == 0 || tape.caches.len() != body {
            return Err(Error::Usage("backward called without a recorded forward pass".into()));
        }
        grad_logits.expect_shape("backward", &[n, NUM_CLASSES])?;
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let first_param_layer = self.param_index.iter().position(Option::is_some);
        let Some(first_param_layer) = first_param_layer else {
            return Ok(grads);
        };
        let mut g = grad_logits.data().to_vec();
        let mut cols = Vec::new();
        for li in (first_param_layer..body).rev() {
            let in_shape = self.layer_input_shape(li);
            let in_len: usize = in_shape.iter().product();
            let out_len: usize = self.shapes[li].iter().product();
            let want_input = li > first_param_layer;
            let cache = tape.caches[li]
                .as_ref()
                .ok_or_else(|| Error::Usage(format!("missing forward cache for layer {li}")))?;
            g = match (&self.spec.layers[li], cache) {
                (LayerSpec::Conv { .. }, Cache::Conv { input }) => {
                    let pi = self.param_index[li].expect("conv has params");
                    let (w, b) = (&self.params[pi], &self.params[pi + 1]);
                    let geom = ConvGeom::new(in_shape, w.shape(), b.shape())?;
                    let (gw, gb) = split_pair(&mut grads, pi);
                    let mut gin = if want_input { vec![0.0; n * in_len] } else { Vec::new() };
                    for s in 0..n {
                        let gi = want_input.then(|| &mut gin[s * in_len..(s + 1) * in_len]);
                        conv::backward_raw(
                            &geom,
                            &input[s * in_len..(s + 1) * in_len],
                            w.data(),
                            &g[s * out_len..(s + 1) * out_len],
                            &mut cols,
                            gw.data_mut(),
                            gb.data_mut(),
                            gi,
                        );
                    }
                    gin
                }
                (LayerSpec::MaxPool { .. }, Cache::Pool { argmax }) => {
                    let mut gin = vec![0.0; n * in_len];
                    for s in 0..n {
                        pool::backward_raw(
                            &g[s * out_len..(s + 1) * out_len],
                            &argmax[s * out_len..(s + 1) * out_len],
                            &mut gin[s * in_len..(s + 1) * in_len],
                        );
                    }
                    gin
                }
                (LayerSpec::Lrn(p), Cache::Lrn { input }) => {
                    let mut gin = vec![0.0; input.len()];
                    lrn::backward_raw(p, in_shape[2], input, &g, &mut gin);
                    gin
                }
                (LayerSpec::Relu, Cache::Relu { active }) => {
                    for (v, &on) in g.iter_mut().zip(active) {
                        if !on {
                            *v = 0.0;
                        }
                    }
                    g
                }
                (LayerSpec::Dense { units }, Cache::Dense { input }) => {
                    let pi = self.param_index[li].expect("dense has params");
                    let w = &self.params[pi];
                    let (gw, gb) = split_pair(&mut grads, pi);
                    let mut gin = if want_input { vec![0.0; n * in_len] } else { Vec::new() };
                    dense::backward_raw(
                        n,
                        in_len,
                        *units,
                        input,
                        w.data(),
                        &g,
                        gw.data_mut(),
                        gb.data_mut(),
                        want_input.then_some(&mut gin[..]),
                    );
                    gin
                }
                (LayerSpec::Dropout { .. }, Cache::Dropout { mask }) => {
                    if let Some(mask) = mask {
                        for (v, m) in g.iter_mut().zip(mask) {
                            *v *= m;
                        }
                    }
                    g
                }
                (layer, _) => {
                    return Err(Error::Usage(format!("tape does not match layer {li} ({})", layer.name())));
                }
            };
        }
        Ok(grads)
    }

    fn layer_input_shape(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.spec.input_shape
        } else {
            &self.shapes[layer - 1]
        }
    }

    fn layer_params(&self, layer: usize) -> (&Tensor, &Tensor) {
        let pi = self.param_index[layer].expect("layer has parameters");
        (&self.params[pi], &self.params[pi + 1])
    }
}

fn split_pair(grads: &mut [Tensor], at: usize) -> (&mut Tensor, &mut Tensor) {
    let (w, rest) = grads[at..].split_first_mut().expect("weights present");
    (w, &mut rest[0])
}

/// `[n, h, w, c]` for a batch of `n` images.
pub fn batch_shape(n: usize, input: &[usize; 3]) -> Vec<usize> {
    vec![n, input[0], input[1], input[2]]
}

/// Stacks same-shaped images into one `[N, H, W, C]` batch tensor.
pub fn stack(images: &[&Tensor], input: &[usize; 3]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Usage("cannot stack an empty batch".into()));
    }
    let mut data = Vec::with_capacity(images.len() * input.iter().product::<usize>());
    for img in images {
        img.expect_shape("stack", input)?;
        data.extend_from_slice(img.data());
    }
    Tensor::new(batch_shape(images.len(), input), data)
}
