//! Learnable parameter blocks, SGD, He initialization and the `SDOL`
//! checkpoint format.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::conv::Padding;
use super::tensor::{Real, Tensor};
use crate::error::{invalid, shape_err, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SDOL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    TransposedConv,
    MaxPool2,
    Relu,
    Sigmoid,
}

impl LayerKind {
    fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::TransposedConv => "tconv",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::Relu => "relu",
            LayerKind::Sigmoid => "sigmoid",
        }
    }

    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::TransposedConv)
    }
}

/// Static description of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            kernel,
            in_channels,
            out_channels,
            stride: 1,
            padding: Padding::Zero,
        }
    }

    pub fn transposed_conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::TransposedConv,
            kernel,
            in_channels,
            out_channels,
            stride: 2,
            padding: Padding::Zero,
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride != 1 && self.stride != 2 {
            return Err(invalid(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        match self.kind {
            LayerKind::Conv if self.kernel % 2 == 0 => Err(invalid(format!(
                "conv kernel extent must be odd, got {}",
                self.kernel
            ))),
            // Even extents are allowed when they equal the stride (the
            // non-overlapping 2x2 upsampler).
            LayerKind::TransposedConv if self.kernel % 2 == 0 && self.kernel != self.stride => {
                Err(invalid(format!(
                    "transposed conv kernel extent must be odd or equal to the stride, got {}",
                    self.kernel
                )))
            }
            LayerKind::TransposedConv if self.kernel < self.stride => Err(invalid(format!(
                "transposed conv kernel {} smaller than stride {}",
                self.kernel, self.stride
            ))),
            _ if self.kind.has_params() && (self.in_channels == 0 || self.out_channels == 0) => {
                Err(invalid("layer with zero channels"))
            }
            _ => Ok(()),
        }
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        let k = self.kernel;
        match self.kind {
            LayerKind::TransposedConv => vec![self.in_channels, self.out_channels, k, k],
            _ => vec![self.out_channels, self.in_channels, k, k],
        }
    }

    fn fan_in(&self) -> usize {
        let k2 = self.kernel * self.kernel;
        match self.kind {
            // Each output pixel of a transposed conv sees k*k/stride^2 taps
            // per input channel.
            LayerKind::TransposedConv => {
                (self.in_channels * k2 / (self.stride * self.stride)).max(1)
            }
            _ => self.in_channels * k2,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} k={} in={} out={} stride={} pad={}",
            self.kind.as_str(),
            self.kernel,
            self.in_channels,
            self.out_channels,
            self.stride,
            self.padding.as_str()
        )
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        let kind = match parts.next() {
            Some("conv") => LayerKind::Conv,
            Some("tconv") => LayerKind::TransposedConv,
            Some("maxpool2") => LayerKind::MaxPool2,
            Some("relu") => LayerKind::Relu,
            Some("sigmoid") => LayerKind::Sigmoid,
            other => return Err(Error::Format(format!("unknown layer kind {other:?}"))),
        };
        let mut spec = LayerSpec {
            kind,
            kernel: 0,
            in_channels: 0,
            out_channels: 0,
            stride: 1,
            padding: Padding::Zero,
        };
        for field in parts {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed layer field {field:?}")))?;
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad number in {field:?}")))
            };
            match key {
                "k" => spec.kernel = num()?,
                "in" => spec.in_channels = num()?,
                "out" => spec.out_channels = num()?,
                "stride" => spec.stride = num()?,
                "pad" => {
                    spec.padding = match value {
                        "zero" => Padding::Zero,
                        "wrap" => Padding::Wrap,
                        _ => return Err(Error::Format(format!("bad padding {value:?}"))),
                    }
                }
                _ => return Err(Error::Format(format!("unknown layer field {key:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Kernel and bias of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<T: Real = f32> {
    pub spec: LayerSpec,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ParamBlock<T> {
    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            kernel: Tensor::zeros(&spec.kernel_shape()),
            bias: Tensor::zeros(&[spec.out_channels]),
            spec,
        }
    }
}

/// Ordered parameter set of a network, tagged with its architecture text.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T: Real = f32> {
    /// Free-form header lines followed by one [`LayerSpec`] line per block.
    pub arch: String,
    pub blocks: Vec<ParamBlock<T>>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(header: &str, specs: &[LayerSpec]) -> Result<Self> {
        let mut blocks = Vec::with_capacity(specs.len());
        for s in specs {
            s.validate()?;
            if !s.kind.has_params() {
                return Err(invalid(format!("layer {s} has no parameters")));
            }
            blocks.push(ParamBlock::zeros(*s));
        }
        Ok(Self {
            arch: arch_text(header, specs),
            blocks,
        })
    }

    /// He-style fan-in initialization of kernels from a seeded PRNG; biases zero.
    pub fn he_init(header: &str, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(header, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in &mut params.blocks {
            let std = (2.0 / block.spec.fan_in() as f64).sqrt();
            for v in block.kernel.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = T::from_f64(z * std);
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            blocks: self.blocks.iter().map(|b| ParamBlock::zeros(b.spec)).collect(),
        }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.blocks.iter().map(|b| b.spec).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.kernel.len() + b.bias.len())
            .sum()
    }

    /// Flat view order: for each block, kernel entries then bias entries.
    pub fn get(&self, index: usize) -> T {
        let mut i = index;
        for b in &self.blocks {
            if i < b.kernel.len() {
                return b.kernel.data()[i];
            }
            i -= b.kernel.len();
            if i < b.bias.len() {
                return b.bias.data()[i];
            }
            i -= b.bias.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set(&mut self, index: usize, value: T) {
        let mut i = index;
        for b in &mut self.blocks {
            if i < b.kernel.len() {
                b.kernel.data_mut()[i] = value;
                return;
            }
            i -= b.kernel.len();
            if i < b.bias.len() {
                b.bias.data_mut()[i] = value;
                return;
            }
            i -= b.bias.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn all_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.kernel.all_finite() && b.bias.all_finite())
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            arch: self.arch.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    spec: b.spec,
                    kernel: b.kernel.cast(),
                    bias: b.bias.cast(),
                })
                .collect(),
        }
    }

    /// `self += other * factor`, block by block.
    pub fn add_scaled(&mut self, other: &Self, factor: T) -> Result<()> {
        self.check_compatible(other)?;
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, &y) in a.kernel.data_mut().iter_mut().zip(b.kernel.data()) {
                *x += y * factor;
            }
            for (x, &y) in a.bias.data_mut().iter_mut().zip(b.bias.data()) {
                *x += y * factor;
            }
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(shape_err(format!(
                "{} parameter blocks vs {}",
                self.blocks.len(),
                other.blocks.len()
            )));
        }
        for (i, (a, b)) in self.blocks.iter().zip(&other.blocks).enumerate() {
            if a.kernel.shape() != b.kernel.shape() || a.bias.shape() != b.bias.shape() {
                return Err(shape_err(format!(
                    "block {i}: kernel {:?}/bias {:?} vs kernel {:?}/bias {:?}",
                    a.kernel.shape(),
                    a.bias.shape(),
                    b.kernel.shape(),
                    b.bias.shape()
                )));
            }
        }
        Ok(())
    }
}

fn arch_text(header: &str, specs: &[LayerSpec]) -> String {
    let mut text = String::new();
    for line in header.lines().filter(|l| !l.trim().is_empty()) {
        text.push_str("# ");
        text.push_str(line.trim_start_matches("# "));
        text.push('\n');
    }
    for s in specs {
        text.push_str(&s.to_string());
        text.push('\n');
    }
    text
}

/// Layer lines of an architecture text (header lines start with `#`).
pub fn parse_arch(text: &str) -> Result<Vec<LayerSpec>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

/// One SGD step: `p <- p - lr * (g + weight_decay * p)` on kernels and
/// `p <- p - lr * g` on biases.
///
/// Non-finite gradients reject the whole step and leave `params` untouched.
pub fn sgd_step<T: Real>(
    params: &mut NetworkParams<T>,
    grads: &NetworkParams<T>,
    lr: T,
    weight_decay: T,
) -> Result<()> {
    params.check_compatible(grads)?;
    for (i, g) in grads.blocks.iter().enumerate() {
        if !g.kernel.all_finite() || !g.bias.all_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of block {i} ({}) contains NaN or Inf; step rejected",
                g.spec
            )));
        }
    }
    for (p, g) in params.blocks.iter_mut().zip(&grads.blocks) {
        for (w, &gw) in p.kernel.data_mut().iter_mut().zip(g.kernel.data()) {
            *w -= lr * (gw + weight_decay * *w);
        }
        for (b, &gb) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
            *b -= lr * gb;
        }
    }
    Ok(())
}

/// Writes the `SDOL` checkpoint: magic, version (u32 LE), architecture text
/// (u32 LE byte length + UTF-8), then every block's kernel and bias as
/// little-endian f32 in declaration order.
pub fn write_checkpoint<T: Real>(params: &NetworkParams<T>, mut w: impl Write) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let arch = params.arch.as_bytes();
    let len = u32::try_from(arch.len()).map_err(|_| invalid("architecture text too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(arch)?;
    let mut buf = Vec::with_capacity(params.num_scalars() * 4);
    for b in &params.blocks {
        for v in b.kernel.data().iter().chain(b.bias.data()) {
            buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn checkpoint_bytes<T: Real>(params: &NetworkParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(params, &mut out).expect("writing to a Vec cannot fail");
    out
}

pub fn read_checkpoint(mut r: impl Read) -> Result<NetworkParams<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    r.read_exact(&mut word)?;
    let mut arch = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut arch)?;
    let arch =
        String::from_utf8(arch).map_err(|_| Error::Format("architecture text is not UTF-8".into()))?;
    let specs = parse_arch(&arch)?;
    let mut params = NetworkParams::<f32> {
        arch,
        blocks: specs.iter().map(|s| ParamBlock::zeros(*s)).collect(),
    };
    for b in &mut params.blocks {
        for v in b.kernel.data_mut().iter_mut().chain(b.bias.data_mut()) {
            r.read_exact(&mut word)?;
            *v = f32::from_le_bytes(word);
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{} trailing bytes after parameter data",
            rest.len()
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_layer(value: f32) -> NetworkParams<f32> {
        let mut p = NetworkParams::zeros("test", &[LayerSpec::conv(1, 1, 1)]).unwrap();
        p.blocks[0].kernel.data_mut()[0] = value;
        p.blocks[0].bias.data_mut()[0] = value;
        p
    }

    #[test]
    fn sgd_closed_forms() {
        let mut p = one_layer(1.0);
        let g = one_layer(0.0);
        sgd_step(&mut p, &g, 0.1, 0.5).unwrap();
        assert!((p.blocks[0].kernel.data()[0] - 0.95).abs() < 1e-7);
        // biases are not decayed
        assert_eq!(p.blocks[0].bias.data()[0], 1.0);

        let mut p = one_layer(2.0);
        sgd_step(&mut p, &one_layer(1.0), 0.1, 0.0).unwrap();
        assert!((p.blocks[0].kernel.data()[0] - 1.9).abs() < 1e-7);

        let mut p = one_layer(2.0);
        sgd_step(&mut p, &one_layer(123.0), 0.0, 0.3).unwrap();
        assert_eq!(p, one_layer(2.0));
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let mut p = one_layer(2.0);
        let err = sgd_step(&mut p, &one_layer(f32::NAN), 0.1, 0.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(p, one_layer(2.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let specs = [
            LayerSpec::conv(2, 4, 3),
            LayerSpec::transposed_conv(4, 3, 2),
            LayerSpec::conv(3, 2, 1).with_padding(Padding::Wrap),
        ];
        let p = NetworkParams::<f32>::he_init("toy net\nsecond line", &specs, 42).unwrap();
        let bytes = checkpoint_bytes(&p);
        assert_eq!(&bytes[..4], b"SDOL");
        let q = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(p, q);
        assert_eq!(checkpoint_bytes(&q), bytes);
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(read_checkpoint(&truncated[..]).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
    }

    #[test]
    fn layer_spec_validation() {
        assert!(LayerSpec::conv(1, 1, 2).validate().is_err());
        assert!(LayerSpec::transposed_conv(1, 1, 2).validate().is_ok());
        assert!(LayerSpec::transposed_conv(1, 1, 3).validate().is_ok());
        assert!(LayerSpec::transposed_conv(1, 1, 4).validate().is_err());
        let mut s = LayerSpec::conv(1, 1, 3);
        s.stride = 3;
        assert!(s.validate().is_err());
        let text = LayerSpec::conv(3, 5, 7).with_padding(Padding::Wrap).to_string();
        assert_eq!(text.parse::<LayerSpec>().unwrap(), LayerSpec::conv(3, 5, 7).with_padding(Padding::Wrap));
    }

    #[test]
    fn he_init_is_seeded() {
        let specs = [LayerSpec::conv(2, 4, 3)];
        let a = NetworkParams::<f32>::he_init("x", &specs, 1).unwrap();
        let b = NetworkParams::<f32>::he_init("x", &specs, 1).unwrap();
        let c = NetworkParams::<f32>::he_init("x", &specs, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.blocks[0].bias.data().iter().all(|&v| v == 0.0));
    }
}
