//! The dual-input / dual-output encoder-decoder.
//!
//! The input stacks the normalized depth map and the same map translated so
//! the seed sits at the image center. The trunk emits two maps: edge logits
//! in the image frame, and mask logits in the seed-centered frame. The public
//! [`DualOutput`] translates the mask back, so both maps share the image
//! frame.

mod frame;
mod loss;

pub use frame::{normalize_depth, pad_to_multiple, recenter, uncenter};
pub use loss::{
    dual_loss, edge_only_loss, logistic_term, mask_target, DualGrads, LossParts, LossWeights,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::grid::{DepthMap, Grid, Seed};
use crate::nn::{
    conv2d_backward, conv2d_forward, maxpool2, maxpool2_backward, transposed_conv2d_backward,
    transposed_conv2d_forward, LayerSpec, NetworkParams, Padding, ParamBlock, Real, Tensor,
};

/// Mask logit assigned to image pixels whose centered-frame position falls
/// outside the image.
pub const OUTSIDE_LOGIT: f64 = -30.0;
/// Value of the recentered channel where it has no source pixel (far).
pub const RECENTER_FILL: f32 = 1.0;

const HEADER_TAG: &str = "dualnet";

/// Shape of the encoder-decoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Output channels of each encoder block; every block halves the extent.
    pub channels: Vec<usize>,
    /// Convolutions at the coarsest resolution.
    pub bottleneck_layers: usize,
    pub bottleneck_kernel: usize,
    pub padding: Padding,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            channels: vec![8, 16, 32, 32],
            bottleneck_layers: 2,
            bottleneck_kernel: 7,
            padding: Padding::Zero,
        }
    }
}

impl ArchConfig {
    pub const INPUT_CHANNELS: usize = 2;
    pub const OUTPUT_CHANNELS: usize = 2;

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(invalid(format!("bad encoder channels {:?}", self.channels)));
        }
        if self.bottleneck_kernel % 2 == 0 {
            return Err(invalid("bottleneck kernel must be odd"));
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.channels.len()
    }

    /// Total downsampling factor; input extents must be multiples of it.
    pub fn total_stride(&self) -> usize {
        1 << self.blocks()
    }

    pub fn check_extent(&self, height: usize, width: usize) -> Result<()> {
        let s = self.total_stride();
        if height == 0 || width == 0 || height % s != 0 || width % s != 0 {
            return Err(shape_err(format!(
                "input {height}x{width} is not divisible by {s}; pad to {}x{}",
                height.div_ceil(s).max(1) * s,
                width.div_ceil(s).max(1) * s
            )));
        }
        Ok(())
    }

    /// Parameterized layers in checkpoint order: encoder convs, bottleneck
    /// convs, then per decoder level (deepest first) an upsampling
    /// transposed conv and a merge conv, and finally the 1x1 head.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let c = &self.channels;
        let n = c.len();
        let pad = |s: LayerSpec| s.with_padding(self.padding);
        let mut specs = Vec::new();
        let mut cin = Self::INPUT_CHANNELS;
        for &ch in c {
            specs.push(pad(LayerSpec::conv(cin, ch, 3)));
            cin = ch;
        }
        for _ in 0..self.bottleneck_layers {
            specs.push(pad(LayerSpec::conv(c[n - 1], c[n - 1], self.bottleneck_kernel)));
        }
        for i in (0..n).rev() {
            specs.push(pad(LayerSpec::transposed_conv(c[i], c[i], 2)));
            let out = if i == 0 { c[0] } else { c[i - 1] };
            specs.push(pad(LayerSpec::conv(2 * c[i], out, 3)));
        }
        specs.push(pad(LayerSpec::conv(c[0], Self::OUTPUT_CHANNELS, 1)));
        specs
    }

    pub fn header(&self) -> String {
        let ch: Vec<String> = self.channels.iter().map(|c| c.to_string()).collect();
        format!(
            "{HEADER_TAG} channels={} bottleneck={}x{} padding={}",
            ch.join(","),
            self.bottleneck_layers,
            self.bottleneck_kernel,
            self.padding.as_str()
        )
    }

    /// Recovers the configuration from a parameter set's architecture text.
    pub fn from_params<T: Real>(params: &NetworkParams<T>) -> Result<Self> {
        let line = params
            .arch
            .lines()
            .filter_map(|l| l.strip_prefix("# "))
            .find(|l| l.starts_with(HEADER_TAG))
            .ok_or_else(|| Error::Format("architecture text has no dualnet header".into()))?;
        let mut cfg = Self::default();
        for field in line.split_whitespace().skip(1) {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed header field {field:?}")))?;
            let bad = || Error::Format(format!("bad header value {field:?}"));
            match k {
                "channels" => {
                    cfg.channels = v
                        .split(',')
                        .map(|x| x.parse().map_err(|_| bad()))
                        .collect::<Result<_>>()?
                }
                "bottleneck" => {
                    let (a, b) = v.split_once('x').ok_or_else(bad)?;
                    cfg.bottleneck_layers = a.parse().map_err(|_| bad())?;
                    cfg.bottleneck_kernel = b.parse().map_err(|_| bad())?;
                }
                "padding" => {
                    cfg.padding = match v {
                        "zero" => Padding::Zero,
                        "wrap" => Padding::Wrap,
                        _ => return Err(bad()),
                    }
                }
                _ => return Err(Error::Format(format!("unknown header field {k:?}"))),
            }
        }
        cfg.validate()?;
        if params.specs() != cfg.layer_specs() {
            return Err(Error::Format(
                "parameter blocks do not match the dualnet header".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn init_params(&self, seed: u64) -> Result<NetworkParams<f32>> {
        self.validate()?;
        NetworkParams::he_init(&self.header(), &self.layer_specs(), seed)
    }

    pub fn zero_params<T: Real>(&self) -> Result<NetworkParams<T>> {
        self.validate()?;
        NetworkParams::zeros(&self.header(), &self.layer_specs())
    }

    fn enc(&self, i: usize) -> usize {
        i
    }

    fn bott(&self, j: usize) -> usize {
        self.blocks() + j
    }

    fn up(&self, i: usize) -> usize {
        self.blocks() + self.bottleneck_layers + 2 * (self.blocks() - 1 - i)
    }

    fn merge(&self, i: usize) -> usize {
        self.up(i) + 1
    }

    fn head(&self) -> usize {
        3 * self.blocks() + self.bottleneck_layers
    }
}

/// Network input for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DualInput<T: Real = f32> {
    /// `(2, H, W)`: normalized depth and its seed-centered translation.
    pub tensor: Tensor<T>,
    pub seed: Seed,
}

impl DualInput<f32> {
    pub fn from_depth(depth: &DepthMap, seed: Seed) -> Result<Self> {
        Self::from_normalized(&normalize_depth(depth), seed)
    }

    pub fn from_normalized(depth: &Grid<f32>, seed: Seed) -> Result<Self> {
        let centered = recenter(depth, seed, RECENTER_FILL)?;
        let (h, w) = depth.dims();
        let mut data = Vec::with_capacity(2 * h * w);
        data.extend_from_slice(depth.data());
        data.extend_from_slice(centered.data());
        Ok(Self {
            tensor: Tensor::new(&[2, h, w], data)?,
            seed,
        })
    }
}

impl<T: Real> DualInput<T> {
    pub fn dims(&self) -> (usize, usize) {
        (self.tensor.shape()[1], self.tensor.shape()[2])
    }

    pub fn cast<U: Real>(&self) -> DualInput<U> {
        DualInput {
            tensor: self.tensor.cast(),
            seed: self.seed,
        }
    }
}

/// Edge and mask logits, both in the image frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DualOutput<T: Real = f32> {
    pub edge_logits: Grid<T>,
    pub mask_logits: Grid<T>,
}

/// Activations kept by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape<T: Real> {
    input: Tensor<T>,
    /// Encoder block outputs (post-ReLU), i.e. the skip features.
    features: Vec<Tensor<T>>,
    pooled: Vec<Tensor<T>>,
    argmax: Vec<Vec<u32>>,
    /// Bottleneck outputs (post-ReLU).
    bottleneck: Vec<Tensor<T>>,
    /// Per decoder level, indexed by level: upsampled (post-ReLU),
    /// concatenated, and merged (post-ReLU) activations.
    upsampled: Vec<Tensor<T>>,
    merged_in: Vec<Tensor<T>>,
    merged: Vec<Tensor<T>>,
}

fn relu_in_place<T: Real>(t: &mut Tensor<T>) {
    for v in t.data_mut() {
        if *v < T::ZERO {
            *v = T::ZERO;
        }
    }
}

fn relu_mask<T: Real>(grad: &mut Tensor<T>, out: &Tensor<T>) {
    for (g, &o) in grad.data_mut().iter_mut().zip(out.data()) {
        if o <= T::ZERO {
            *g = T::ZERO;
        }
    }
}

fn conv<T: Real>(x: &Tensor<T>, b: &ParamBlock<T>, relu: bool) -> Result<Tensor<T>> {
    let mut y = conv2d_forward(x, &b.kernel, b.bias.data(), b.spec.stride, b.spec.padding)?;
    if relu {
        relu_in_place(&mut y);
    }
    Ok(y)
}

fn tconv<T: Real>(x: &Tensor<T>, b: &ParamBlock<T>) -> Result<Tensor<T>> {
    let mut y =
        transposed_conv2d_forward(x, &b.kernel, b.bias.data(), b.spec.stride, b.spec.padding)?;
    relu_in_place(&mut y);
    Ok(y)
}

/// Backward through `relu(conv(x))` (or plain conv when `out` is `None`);
/// writes parameter gradients into `g` and returns the input gradient.
fn conv_back<T: Real>(
    x: &Tensor<T>,
    b: &ParamBlock<T>,
    out: Option<&Tensor<T>>,
    mut grad: Tensor<T>,
    g: &mut ParamBlock<T>,
) -> Result<Tensor<T>> {
    if let Some(out) = out {
        relu_mask(&mut grad, out);
    }
    let cg = conv2d_backward(x, &b.kernel, &grad, b.spec.stride, b.spec.padding)?;
    g.kernel.add_assign(&cg.kernel)?;
    for (gb, v) in g.bias.data_mut().iter_mut().zip(cg.bias) {
        *gb += v;
    }
    Ok(cg.input)
}

fn tconv_back<T: Real>(
    x: &Tensor<T>,
    b: &ParamBlock<T>,
    out: &Tensor<T>,
    mut grad: Tensor<T>,
    g: &mut ParamBlock<T>,
) -> Result<Tensor<T>> {
    relu_mask(&mut grad, out);
    let cg = transposed_conv2d_backward(x, &b.kernel, &grad, b.spec.stride, b.spec.padding)?;
    g.kernel.add_assign(&cg.kernel)?;
    for (gb, v) in g.bias.data_mut().iter_mut().zip(cg.bias) {
        *gb += v;
    }
    Ok(cg.input)
}

fn check_params<T: Real>(arch: &ArchConfig, params: &NetworkParams<T>) -> Result<()> {
    let specs = arch.layer_specs();
    if params.blocks.len() != specs.len() {
        return Err(shape_err(format!(
            "architecture has {} parameter blocks, parameters have {}",
            specs.len(),
            params.blocks.len()
        )));
    }
    for (i, (b, s)) in params.blocks.iter().zip(&specs).enumerate() {
        if b.spec != *s {
            return Err(shape_err(format!("block {i}: expected `{s}`, found `{}`", b.spec)));
        }
    }
    Ok(())
}

/// Trunk forward on a `(2, H, W)` tensor. Returns `(2, H, W)` logits:
/// channel 0 edge (image frame), channel 1 mask (seed-centered frame).
pub fn trunk_forward<T: Real>(
    arch: &ArchConfig,
    params: &NetworkParams<T>,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, Tape<T>)> {
    check_params(arch, params)?;
    let (c, h, w) = input.dims3()?;
    if c != ArchConfig::INPUT_CHANNELS {
        return Err(shape_err(format!("input has {c} channels, expected 2")));
    }
    arch.check_extent(h, w)?;
    let n = arch.blocks();
    let p = &params.blocks;
    let mut features = Vec::with_capacity(n);
    let mut pooled: Vec<Tensor<T>> = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(n);
    for i in 0..n {
        let x = if i == 0 { input } else { &pooled[i - 1] };
        let f = conv(x, &p[arch.enc(i)], true)?;
        let (pl, am) = maxpool2(&f)?;
        features.push(f);
        pooled.push(pl);
        argmax.push(am);
    }
    let mut bottleneck: Vec<Tensor<T>> = Vec::with_capacity(arch.bottleneck_layers);
    for j in 0..arch.bottleneck_layers {
        let x = if j == 0 { &pooled[n - 1] } else { &bottleneck[j - 1] };
        bottleneck.push(conv(x, &p[arch.bott(j)], true)?);
    }
    let mut upsampled = vec![Tensor::zeros(&[0]); n];
    let mut merged_in = vec![Tensor::zeros(&[0]); n];
    let mut merged = vec![Tensor::zeros(&[0]); n];
    for i in (0..n).rev() {
        let x = if i + 1 < n {
            &merged[i + 1]
        } else {
            bottleneck.last().unwrap_or(&pooled[n - 1])
        };
        let u = tconv(x, &p[arch.up(i)])?;
        let cat = Tensor::concat_channels(&[&u, &features[i]])?;
        merged[i] = conv(&cat, &p[arch.merge(i)], true)?;
        upsampled[i] = u;
        merged_in[i] = cat;
    }
    let out = conv(&merged[0], &p[arch.head()], false)?;
    let tape = Tape {
        input: input.clone(),
        features,
        pooled,
        argmax,
        bottleneck,
        upsampled,
        merged_in,
        merged,
    };
    Ok((out, tape))
}

/// Parameter gradients of the trunk for an output gradient of shape
/// `(2, H, W)`.
pub fn trunk_backward<T: Real>(
    arch: &ArchConfig,
    params: &NetworkParams<T>,
    tape: &Tape<T>,
    output_grad: &Tensor<T>,
) -> Result<NetworkParams<T>> {
    check_params(arch, params)?;
    let n = arch.blocks();
    let p = &params.blocks;
    let mut grads = params.zeros_like();
    let g = &mut grads.blocks;

    let mut grad = conv_back(&tape.merged[0], &p[arch.head()], None, output_grad.clone(), &mut g[arch.head()])?;
    // gradient arriving at each skip feature from the decoder
    let mut skip_grads: Vec<Option<Tensor<T>>> = vec![None; n];
    for i in 0..n {
        let cat_grad = conv_back(
            &tape.merged_in[i],
            &p[arch.merge(i)],
            Some(&tape.merged[i]),
            grad,
            &mut g[arch.merge(i)],
        )?;
        let cu = tape.upsampled[i].shape()[0];
        let cf = tape.features[i].shape()[0];
        let mut parts = cat_grad.split_channels(&[cu, cf])?.into_iter();
        let (ug, fg) = (parts.next().unwrap(), parts.next().unwrap());
        skip_grads[i] = Some(fg);
        let x = if i + 1 < n {
            &tape.merged[i + 1]
        } else {
            tape.bottleneck.last().unwrap_or(&tape.pooled[n - 1])
        };
        grad = tconv_back(x, &p[arch.up(i)], &tape.upsampled[i], ug, &mut g[arch.up(i)])?;
    }
    for j in (0..arch.bottleneck_layers).rev() {
        let x = if j == 0 { &tape.pooled[n - 1] } else { &tape.bottleneck[j - 1] };
        grad = conv_back(x, &p[arch.bott(j)], Some(&tape.bottleneck[j]), grad, &mut g[arch.bott(j)])?;
    }
    for i in (0..n).rev() {
        let mut fg = maxpool2_backward(tape.features[i].shape(), &tape.argmax[i], &grad)?;
        if let Some(s) = skip_grads[i].take() {
            fg.add_assign(&s)?;
        }
        let x = if i == 0 { &tape.input } else { &tape.pooled[i - 1] };
        grad = conv_back(x, &p[arch.enc(i)], Some(&tape.features[i]), fg, &mut g[arch.enc(i)])?;
    }
    Ok(grads)
}

fn split_output<T: Real>(out: &Tensor<T>, seed: Seed) -> Result<DualOutput<T>> {
    let (_, h, w) = out.dims3()?;
    let plane = h * w;
    let edge_logits = Grid::new(h, w, out.data()[..plane].to_vec())?;
    let centered = Grid::new(h, w, out.data()[plane..].to_vec())?;
    Ok(DualOutput {
        edge_logits,
        mask_logits: uncenter(&centered, seed, T::from_f64(OUTSIDE_LOGIT))?,
    })
}

fn check_input<T: Real>(input: &DualInput<T>) -> Result<()> {
    let (h, w) = input.dims();
    if input.seed.row >= h || input.seed.col >= w {
        return Err(invalid(format!(
            "seed ({}, {}) outside image bounds 0..{h} x 0..{w}",
            input.seed.row, input.seed.col
        )));
    }
    Ok(())
}

/// One forward pass.
pub fn forward<T: Real>(
    arch: &ArchConfig,
    params: &NetworkParams<T>,
    input: &DualInput<T>,
) -> Result<DualOutput<T>> {
    Ok(forward_with_tape(arch, params, input)?.0)
}

pub fn forward_with_tape<T: Real>(
    arch: &ArchConfig,
    params: &NetworkParams<T>,
    input: &DualInput<T>,
) -> Result<(DualOutput<T>, Tape<T>)> {
    check_input(input)?;
    let (out, tape) = trunk_forward(arch, params, &input.tensor)?;
    Ok((split_output(&out, input.seed)?, tape))
}

/// Parameter gradients for loss gradients given in the image frame. The mask
/// gradient is carried back into the centered frame (the adjoint of the
/// uncentering, which drops pixels without a source).
pub fn backward<T: Real>(
    arch: &ArchConfig,
    params: &NetworkParams<T>,
    tape: &Tape<T>,
    seed: Seed,
    grads: &DualGrads<T>,
) -> Result<NetworkParams<T>> {
    let centered = recenter(&grads.mask, seed, T::ZERO)?;
    let (h, w) = grads.edge.dims();
    centered.expect_dims(h, w)?;
    let mut data = Vec::with_capacity(2 * h * w);
    data.extend_from_slice(grads.edge.data());
    data.extend_from_slice(centered.data());
    trunk_backward(arch, params, tape, &Tensor::new(&[2, h, w], data)?)
}

/// One supervised seed-sample.
#[derive(Debug, Clone)]
pub struct Sample<'a, T: Real> {
    pub input: &'a DualInput<T>,
    pub edge_gt: &'a Grid<T>,
    /// `None` trains the edge head only.
    pub mask_gt: Option<&'a crate::grid::BinaryMask>,
}

/// Loss and parameter gradients of one sample.
pub fn loss_and_grad<T: Real>(
    arch: &ArchConfig,
    params: &NetworkParams<T>,
    sample: &Sample<'_, T>,
    weights: &LossWeights,
) -> Result<(LossParts, NetworkParams<T>)> {
    let (out, tape) = forward_with_tape(arch, params, sample.input)?;
    let (parts, grads) = match sample.mask_gt {
        Some(mask) => dual_loss(&out, sample.edge_gt, mask, weights)?,
        None => {
            let (edge, g) = edge_only_loss(&out, sample.edge_gt, weights.edge)?;
            (LossParts { edge, mask: 0.0 }, g)
        }
    };
    let pg = backward(arch, params, &tape, sample.input.seed, &grads)?;
    Ok((parts, pg))
}

#[cfg(test)]
mod tests;
