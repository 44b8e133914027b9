//! Layer graph, parameters, and whole-network forward/backward passes.
//!
//! A network is a flat list of layers. Layer `l` reads the output of layer
//! `l − 1` (the input tensor for `l = 0`); `Concat` and `ResidualAdd` also
//! read the output of an earlier layer named by id.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ops::{self, BnBatch};
use super::{NnError, Tensor4};
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv3x3,
    ReLU,
    BatchNorm,
    MaxPool2x2,
    TConv2x2,
    /// Appends the channels of the given layer's output after the current ones.
    Concat(usize),
    /// Adds the given layer's output.
    ResidualAdd(usize),
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    /// Encoder widths, shallow to deep; empty for hand-built graphs.
    pub widths: Vec<usize>,
    pub residual_blocks: usize,
    pub layers: Vec<LayerSpec>,
}

/// Desk widths down the encoder.
pub const DESK_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];

struct Builder {
    layers: Vec<LayerSpec>,
    channels: usize,
}

impl Builder {
    fn push(&mut self, kind: LayerKind, out: usize) -> usize {
        self.layers.push(LayerSpec {
            kind,
            in_channels: self.channels,
            out_channels: out,
        });
        self.channels = out;
        self.layers.len() - 1
    }

    /// conv → batchnorm → relu; returns the relu id.
    fn conv_block(&mut self, out: usize) -> usize {
        self.push(LayerKind::Conv3x3, out);
        self.push(LayerKind::BatchNorm, out);
        self.push(LayerKind::ReLU, out)
    }
}

impl NetworkSpec {
    /// U-Net with `widths.len() − 1` pooling levels, a two-conv bottleneck,
    /// mirrored decoder with skip concatenations, `residual_blocks` residual
    /// blocks, and a 1-channel sigmoid head.
    pub fn ersinvnet(
        input_channels: usize,
        widths: &[usize],
        residual_blocks: usize,
    ) -> Result<Self, NnError> {
        if widths.len() < 2 || widths.contains(&0) || input_channels == 0 {
            return Err(NnError::InvalidSpec(format!("widths {widths:?}")));
        }
        let mut b = Builder {
            layers: Vec::new(),
            channels: input_channels,
        };
        let levels = widths.len() - 1;
        let mut skips = Vec::with_capacity(levels);
        for &w in &widths[..levels] {
            b.conv_block(w);
            skips.push(b.conv_block(w));
            b.push(LayerKind::MaxPool2x2, w);
        }
        b.conv_block(widths[levels]);
        b.conv_block(widths[levels]);
        for level in (0..levels).rev() {
            let w = widths[level];
            b.push(LayerKind::TConv2x2, w);
            b.push(LayerKind::Concat(skips[level]), 2 * w);
            b.conv_block(w);
            b.conv_block(w);
        }
        let w0 = widths[0];
        for _ in 0..residual_blocks {
            let start = b.layers.len() - 1;
            b.conv_block(w0);
            b.push(LayerKind::Conv3x3, w0);
            b.push(LayerKind::BatchNorm, w0);
            b.push(LayerKind::ResidualAdd(start), w0);
            b.push(LayerKind::ReLU, w0);
        }
        b.push(LayerKind::Conv3x3, 1);
        b.push(LayerKind::Sigmoid, 1);
        let spec = Self {
            input_channels,
            widths: widths.to_vec(),
            residual_blocks,
            layers: b.layers,
        };
        spec.check_graph()?;
        Ok(spec)
    }

    pub fn desk(input_channels: usize) -> Self {
        Self::ersinvnet(input_channels, &DESK_WIDTHS, 2).expect("valid desk widths")
    }

    /// Desk layout at four times the width.
    pub fn paper(input_channels: usize) -> Self {
        let widths: Vec<usize> = DESK_WIDTHS.iter().map(|w| 4 * w).collect();
        Self::ersinvnet(input_channels, &widths, 2).expect("valid paper widths")
    }

    /// Wraps a hand-built layer list after checking its channel arithmetic.
    pub fn from_layers(input_channels: usize, layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        let spec = Self {
            input_channels,
            widths: Vec::new(),
            residual_blocks: 0,
            layers,
        };
        spec.check_graph()?;
        Ok(spec)
    }

    /// Builds a chain from kinds alone, inferring channels; convolutions and
    /// transposed convolutions take their output width from `conv_out`.
    pub fn chain(input_channels: usize, kinds: &[(LayerKind, usize)]) -> Result<Self, NnError> {
        let mut b = Builder {
            layers: Vec::new(),
            channels: input_channels,
        };
        for &(kind, out) in kinds {
            let out = match kind {
                LayerKind::Conv3x3 | LayerKind::TConv2x2 => out,
                LayerKind::Concat(src) => {
                    let sc = b.layers.get(src).map(|l| l.out_channels).unwrap_or(0);
                    b.channels + sc
                }
                _ => b.channels,
            };
            b.push(kind, out);
        }
        Self::from_layers(input_channels, b.layers)
    }

    fn check_graph(&self) -> Result<(), NnError> {
        let mut ch = self.input_channels;
        for (l, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| NnError::InvalidSpec(format!("layer {l}: {msg}"));
            if layer.in_channels != ch {
                return Err(bad(format!(
                    "expects {} channels, receives {ch}",
                    layer.in_channels
                )));
            }
            let want_out = match layer.kind {
                LayerKind::Conv3x3 | LayerKind::TConv2x2 => layer.out_channels,
                LayerKind::Concat(src) | LayerKind::ResidualAdd(src) if src >= l => {
                    return Err(bad(format!("source {src} is not an earlier layer")));
                }
                LayerKind::Concat(src) => ch + self.layers[src].out_channels,
                LayerKind::ResidualAdd(src) => {
                    if self.layers[src].out_channels != ch {
                        return Err(bad("residual channel mismatch".into()));
                    }
                    ch
                }
                _ => ch,
            };
            if layer.out_channels != want_out || want_out == 0 {
                return Err(bad(format!(
                    "declares {} output channels, produces {want_out}",
                    layer.out_channels
                )));
            }
            ch = want_out;
        }
        Ok(())
    }

    pub fn output_channels(&self) -> usize {
        self.layers
            .last()
            .map_or(self.input_channels, |l| l.out_channels)
    }

    pub fn count(&self, pred: impl Fn(LayerKind) -> bool) -> usize {
        self.layers.iter().filter(|l| pred(l.kind)).count()
    }

    /// Checks spatial consistency for an `h × w` input and returns the
    /// output shape `(c, h, w)`.
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize, usize), NnError> {
        let mut dims = Vec::with_capacity(self.layers.len());
        let (mut ch, mut cw) = (h, w);
        for (l, layer) in self.layers.iter().enumerate() {
            match layer.kind {
                LayerKind::MaxPool2x2 => {
                    if ch % 2 != 0 || cw % 2 != 0 {
                        return Err(NnError::NonDivisibleDims { h: ch, w: cw });
                    }
                    ch /= 2;
                    cw /= 2;
                }
                LayerKind::TConv2x2 => {
                    ch *= 2;
                    cw *= 2;
                }
                LayerKind::Concat(src) | LayerKind::ResidualAdd(src) if dims[src] != (ch, cw) => {
                    return Err(NnError::ShapeMismatch(format!(
                        "layer {l} joins {ch}x{cw} with {:?} from layer {src}",
                        dims[src]
                    )));
                }
                _ => {}
            }
            dims.push((ch, cw));
        }
        Ok((self.output_channels(), ch, cw))
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    None,
    Conv {
        w: Vec<f64>,
        b: Vec<f64>,
    },
    TConv {
        w: Vec<f64>,
        b: Vec<f64>,
    },
    BatchNorm {
        gamma: Vec<f64>,
        beta: Vec<f64>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
}

/// Mirrors [`Parameters`]; batch-norm entries leave the running statistics empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerParams>,
}

impl LayerParams {
    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        match self {
            Self::None => Self::None,
            Self::Conv { w, b } => Self::Conv { w: z(w), b: z(b) },
            Self::TConv { w, b } => Self::TConv { w: z(w), b: z(b) },
            Self::BatchNorm { gamma, beta, .. } => Self::BatchNorm {
                gamma: z(gamma),
                beta: z(beta),
                running_mean: Vec::new(),
                running_var: Vec::new(),
            },
        }
    }
}

impl Parameters {
    /// Kaiming-normal kernels, zero biases, identity batch norm, and
    /// transposed-convolution kernels that start as channel-averaging
    /// nearest-neighbour upsamplers with a little noise.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, stream::INIT));
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let (ci, co) = (l.in_channels, l.out_channels);
                match l.kind {
                    LayerKind::Conv3x3 => {
                        let std = (2.0 / (9 * ci) as f64).sqrt();
                        let normal = Normal::new(0.0, std).expect("finite std");
                        LayerParams::Conv {
                            w: (0..co * ci * 9).map(|_| normal.sample(&mut rng)).collect(),
                            b: vec![0.0; co],
                        }
                    }
                    LayerKind::TConv2x2 => {
                        let noise = Normal::new(0.0, 0.01).expect("finite std");
                        LayerParams::TConv {
                            w: (0..co * ci * 4)
                                .map(|_| 1.0 / ci as f64 + noise.sample(&mut rng))
                                .collect(),
                            b: vec![0.0; co],
                        }
                    }
                    LayerKind::BatchNorm => LayerParams::BatchNorm {
                        gamma: vec![1.0; co],
                        beta: vec![0.0; co],
                        running_mean: vec![0.0; co],
                        running_var: vec![1.0; co],
                    },
                    _ => LayerParams::None,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    /// Trainable slices in a fixed order, each flagged with whether weight
    /// decay applies (kernels only).
    pub fn trainable_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Conv { w, b } | LayerParams::TConv { w, b } => {
                    out.push((w.as_mut_slice(), true));
                    out.push((b.as_mut_slice(), false));
                }
                LayerParams::BatchNorm { gamma, beta, .. } => {
                    out.push((gamma.as_mut_slice(), false));
                    out.push((beta.as_mut_slice(), false));
                }
            }
        }
        out
    }

    pub fn trainable(&self) -> Vec<&[f64]> {
        trainable_of(&self.layers)
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|s| s.len()).sum()
    }

    /// Every stored value in checkpoint order, running statistics included.
    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Conv { w, b } | LayerParams::TConv { w, b } => {
                    out.push(w.as_slice());
                    out.push(b.as_slice());
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => {
                    out.extend([gamma.as_slice(), beta.as_slice(), running_mean, running_var]);
                }
            }
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            match l {
                LayerParams::None => {}
                LayerParams::Conv { w, b } | LayerParams::TConv { w, b } => {
                    out.push(w);
                    out.push(b);
                }
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => out.extend([gamma, beta, running_mean, running_var]),
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

fn trainable_of(layers: &[LayerParams]) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for l in layers {
        match l {
            LayerParams::None => {}
            LayerParams::Conv { w, b } | LayerParams::TConv { w, b } => {
                out.push(w.as_slice());
                out.push(b.as_slice());
            }
            LayerParams::BatchNorm { gamma, beta, .. } => {
                out.push(gamma.as_slice());
                out.push(beta.as_slice());
            }
        }
    }
    out
}

impl Gradients {
    /// Same order as [`Parameters::trainable_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        trainable_of(&self.layers)
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a, b) {
                (LayerParams::Conv { w, b: bb }, LayerParams::Conv { w: w2, b: b2 })
                | (LayerParams::TConv { w, b: bb }, LayerParams::TConv { w: w2, b: b2 }) => {
                    w.iter_mut().zip(w2).for_each(|(x, y)| *x += y);
                    bb.iter_mut().zip(b2).for_each(|(x, y)| *x += y);
                }
                (
                    LayerParams::BatchNorm { gamma, beta, .. },
                    LayerParams::BatchNorm {
                        gamma: g2,
                        beta: b2,
                        ..
                    },
                ) => {
                    gamma.iter_mut().zip(g2).for_each(|(x, y)| *x += y);
                    beta.iter_mut().zip(b2).for_each(|(x, y)| *x += y);
                }
                _ => {}
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Pool(Vec<usize>),
    Bn(BnBatch),
}

/// Activations and per-layer state kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Tensor4>,
    aux: Vec<Aux>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor4 {
        self.acts.last().expect("non-empty cache")
    }

    pub fn activation(&self, layer: usize) -> &Tensor4 {
        &self.acts[layer + 1]
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn check_params(spec: &NetworkSpec, params: &Parameters) -> Result<(), NnError> {
    if params.layers.len() != spec.layers.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} parameter entries for {} layers",
            params.layers.len(),
            spec.layers.len()
        )));
    }
    Ok(())
}

pub fn forward(
    spec: &NetworkSpec,
    params: &Parameters,
    input: &Tensor4,
    mode: Mode,
) -> Result<(Tensor4, ForwardCache), NnError> {
    forward_with_hook(spec, params, input, mode, &mut |_, _| {})
}

/// [`forward`] that lets `hook` inspect or overwrite each layer output
/// before the next layer consumes it.
pub fn forward_with_hook(
    spec: &NetworkSpec,
    params: &Parameters,
    input: &Tensor4,
    mode: Mode,
    hook: &mut dyn FnMut(usize, &mut Tensor4),
) -> Result<(Tensor4, ForwardCache), NnError> {
    check_params(spec, params)?;
    if input.c != spec.input_channels {
        return Err(NnError::ShapeMismatch(format!(
            "input has {} channels, network expects {}",
            input.c, spec.input_channels
        )));
    }
    spec.output_dims(input.h, input.w)?;
    let mut acts = Vec::with_capacity(spec.layers.len() + 1);
    let mut aux = Vec::with_capacity(spec.layers.len());
    acts.push(input.clone());
    for (l, (layer, p)) in spec.layers.iter().zip(&params.layers).enumerate() {
        let x = &acts[l];
        let (mut y, a) = match (layer.kind, p) {
            (LayerKind::Conv3x3, LayerParams::Conv { w, b }) => (
                ops::conv3x3_forward(x, w, b, layer.out_channels)?,
                Aux::None,
            ),
            (LayerKind::TConv2x2, LayerParams::TConv { w, b }) => (
                ops::tconv2x2_forward(x, w, b, layer.out_channels)?,
                Aux::None,
            ),
            (
                LayerKind::BatchNorm,
                LayerParams::BatchNorm {
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                },
            ) => match mode {
                Mode::Train => {
                    let (y, batch) = ops::batchnorm_train_forward(x, gamma, beta)?;
                    (y, Aux::Bn(batch))
                }
                Mode::Eval => (
                    ops::batchnorm_eval_forward(x, gamma, beta, running_mean, running_var),
                    Aux::None,
                ),
            },
            (LayerKind::ReLU, _) => (ops::relu_forward(x), Aux::None),
            (LayerKind::Sigmoid, _) => (ops::sigmoid_forward(x), Aux::None),
            (LayerKind::MaxPool2x2, _) => {
                let (y, arg) = ops::maxpool2x2_forward(x)?;
                (y, Aux::Pool(arg))
            }
            (LayerKind::Concat(src), _) => (ops::concat_forward(x, &acts[src + 1])?, Aux::None),
            (LayerKind::ResidualAdd(src), _) => {
                (ops::residual_add_forward(x, &acts[src + 1])?, Aux::None)
            }
            (kind, _) => {
                return Err(NnError::ShapeMismatch(format!(
                    "layer {l} ({kind:?}) has mismatched parameters"
                )));
            }
        };
        hook(l, &mut y);
        if !y.all_finite() {
            return Err(NnError::NaNDetected { layer: l });
        }
        acts.push(y);
        aux.push(a);
    }
    let out = acts.last().expect("input pushed").clone();
    Ok((out, ForwardCache { mode, acts, aux }))
}

/// Eval-mode forward without a cache.
pub fn predict(
    spec: &NetworkSpec,
    params: &Parameters,
    input: &Tensor4,
) -> Result<Tensor4, NnError> {
    forward(spec, params, input, Mode::Eval).map(|(y, _)| y)
}

/// Folds the batch statistics of a train-mode pass into the running statistics.
pub fn update_running_stats(params: &mut Parameters, cache: &ForwardCache) {
    for (p, a) in params.layers.iter_mut().zip(&cache.aux) {
        if let (
            LayerParams::BatchNorm {
                running_mean,
                running_var,
                ..
            },
            Aux::Bn(batch),
        ) = (p, a)
        {
            ops::update_running(batch, running_mean, running_var);
        }
    }
}

/// Reverse pass. Returns the parameter gradients and the input gradient.
pub fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    cache: &ForwardCache,
    grad_out: &Tensor4,
) -> Result<(Gradients, Tensor4), NnError> {
    let n_layers = spec.layers.len();
    if cache.acts.len() != n_layers + 1
        || cache.aux.len() != n_layers
        || params.layers.len() != n_layers
    {
        return Err(NnError::CacheMismatch(format!(
            "cache holds {} activations for {n_layers} layers",
            cache.acts.len()
        )));
    }
    if grad_out.shape() != cache.output().shape() {
        return Err(NnError::CacheMismatch(format!(
            "gradient {:?} vs output {:?}",
            grad_out.shape(),
            cache.output().shape()
        )));
    }
    let mut grads = params.zero_gradients();
    let mut pending: Vec<Option<Tensor4>> = vec![None; n_layers];
    let mut grad = grad_out.clone();
    for l in (0..n_layers).rev() {
        if let Some(extra) = pending[l].take() {
            grad.add_assign(&extra);
        }
        let x = &cache.acts[l];
        let y = &cache.acts[l + 1];
        let layer = &spec.layers[l];
        let mismatch = || NnError::CacheMismatch(format!("layer {l} state"));
        grad = match (layer.kind, &params.layers[l], &mut grads.layers[l]) {
            (
                LayerKind::Conv3x3,
                LayerParams::Conv { w, .. },
                LayerParams::Conv { w: gw, b: gb },
            ) => {
                let (dx, dw, db) = ops::conv3x3_backward(&grad, x, w)?;
                (*gw, *gb) = (dw, db);
                dx
            }
            (
                LayerKind::TConv2x2,
                LayerParams::TConv { w, .. },
                LayerParams::TConv { w: gw, b: gb },
            ) => {
                let (dx, dw, db) = ops::tconv2x2_backward(&grad, x, w)?;
                (*gw, *gb) = (dw, db);
                dx
            }
            (
                LayerKind::BatchNorm,
                LayerParams::BatchNorm {
                    gamma,
                    running_mean,
                    running_var,
                    ..
                },
                LayerParams::BatchNorm {
                    gamma: gg,
                    beta: gbeta,
                    ..
                },
            ) => {
                let (dx, dg, db) = match (cache.mode, &cache.aux[l]) {
                    (Mode::Train, Aux::Bn(batch)) => {
                        ops::batchnorm_train_backward(&grad, batch, gamma)
                    }
                    (Mode::Eval, _) => {
                        ops::batchnorm_eval_backward(&grad, x, gamma, running_mean, running_var)
                    }
                    _ => return Err(mismatch()),
                };
                (*gg, *gbeta) = (dg, db);
                dx
            }
            (LayerKind::ReLU, ..) => ops::relu_backward(&grad, x),
            (LayerKind::Sigmoid, ..) => ops::sigmoid_backward(&grad, y),
            (LayerKind::MaxPool2x2, ..) => match &cache.aux[l] {
                Aux::Pool(arg) => ops::maxpool2x2_backward(&grad, arg, x.shape())?,
                _ => return Err(mismatch()),
            },
            (LayerKind::Concat(src), ..) => {
                let (da, db) = ops::concat_backward(&grad, x.c);
                add_pending(&mut pending[src], db);
                da
            }
            (LayerKind::ResidualAdd(src), ..) => {
                add_pending(&mut pending[src], grad.clone());
                grad
            }
            _ => return Err(mismatch()),
        };
    }
    Ok((grads, grad))
}

fn add_pending(slot: &mut Option<Tensor4>, g: Tensor4) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}
