//! 2-D convolution and transposed convolution over `(channels, height, width)`
//! tensors, lowered to GEMM through an im2col gather and its adjoint scatter.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{shape_err, Result};

/// Out-of-bounds handling for convolution taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Taps outside the image read zero.
    #[default]
    Zero,
    /// The image is a torus.
    Wrap,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Zero => "zero",
            Padding::Wrap => "wrap",
        }
    }
}

/// Geometry shared by the gather/scatter pair: a "small" grid whose cell
/// `(y, x)` reads tap `(a, b)` from the "large" image at
/// `(y * stride + a - pad, x * stride + b - pad)`.
#[derive(Debug, Clone, Copy)]
struct Taps {
    channels: usize,
    large_h: usize,
    large_w: usize,
    small_h: usize,
    small_w: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    padding: Padding,
}

impl Taps {
    #[inline]
    fn source(&self, pos: usize, tap: usize, extent: usize) -> Option<usize> {
        let raw = (pos * self.stride + tap) as isize - self.pad as isize;
        match self.padding {
            Padding::Zero => (raw >= 0 && (raw as usize) < extent).then_some(raw as usize),
            Padding::Wrap => Some(raw.rem_euclid(extent as isize) as usize),
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.small_h * self.small_w
    }

    /// Maximal runs `(small_start, large_start, len)` along one axis for tap
    /// `tap`: small positions `small_start..small_start + len` read large
    /// positions `large_start, large_start + stride, ...`.
    fn runs(&self, tap: usize, small: usize, large: usize) -> Vec<(usize, usize, usize)> {
        let mut runs: Vec<(usize, usize, usize)> = Vec::new();
        for p in 0..small {
            let Some(s) = self.source(p, tap, large) else {
                continue;
            };
            match runs.last_mut() {
                Some((d0, s0, len)) if *d0 + *len == p && *s0 + *len * self.stride == s => {
                    *len += 1
                }
                _ => runs.push((p, s, 1)),
            }
        }
        runs
    }

    fn tap_runs(&self) -> (Vec<Vec<(usize, usize, usize)>>, Vec<Vec<(usize, usize, usize)>>) {
        let rows = (0..self.kernel)
            .map(|a| self.runs(a, self.small_h, self.large_h))
            .collect();
        let cols = (0..self.kernel)
            .map(|b| self.runs(b, self.small_w, self.large_w))
            .collect();
        (rows, cols)
    }

    /// Gathers `large` (channels x large_h x large_w) into a
    /// `(channels * k * k) x (small_h * small_w)` column matrix.
    fn gather<T: Real>(&self, large: &[T]) -> Vec<T> {
        let k = self.kernel;
        let ncols = self.cols();
        let (sw, lw, st) = (self.small_w, self.large_w, self.stride);
        let (row_runs, col_runs) = self.tap_runs();
        let mut cols = vec![T::ZERO; self.rows() * ncols];
        for c in 0..self.channels {
            let plane = &large[c * self.large_h * lw..][..self.large_h * lw];
            for a in 0..k {
                for b in 0..k {
                    let row = (c * k + a) * k + b;
                    let dst = &mut cols[row * ncols..(row + 1) * ncols];
                    for &(y0, sy0, ny) in &row_runs[a] {
                        for i in 0..ny {
                            let src_row = &plane[(sy0 + i * st) * lw..][..lw];
                            let dst_row = &mut dst[(y0 + i) * sw..][..sw];
                            for &(x0, sx0, nx) in &col_runs[b] {
                                if st == 1 {
                                    dst_row[x0..x0 + nx].copy_from_slice(&src_row[sx0..sx0 + nx]);
                                } else {
                                    for j in 0..nx {
                                        dst_row[x0 + j] = src_row[sx0 + j * st];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Adjoint of [`Taps::gather`]: accumulates a column matrix into `large`.
    fn scatter<T: Real>(&self, cols: &[T], large: &mut [T]) {
        let k = self.kernel;
        let ncols = self.cols();
        let (sw, lw, st) = (self.small_w, self.large_w, self.stride);
        let (row_runs, col_runs) = self.tap_runs();
        for c in 0..self.channels {
            let plane = &mut large[c * self.large_h * lw..][..self.large_h * lw];
            for a in 0..k {
                for b in 0..k {
                    let row = (c * k + a) * k + b;
                    let src = &cols[row * ncols..(row + 1) * ncols];
                    for &(y0, sy0, ny) in &row_runs[a] {
                        for i in 0..ny {
                            let src_row = &src[(y0 + i) * sw..][..sw];
                            let dst_row = &mut plane[(sy0 + i * st) * lw..][..lw];
                            for &(x0, sx0, nx) in &col_runs[b] {
                                if st == 1 {
                                    for (d, &v) in dst_row[sx0..sx0 + nx].iter_mut().zip(&src_row[x0..x0 + nx]) {
                                        *d += v;
                                    }
                                } else {
                                    for j in 0..nx {
                                        dst_row[sx0 + j * st] += src_row[x0 + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of a (transposed) convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Vec<T>,
}

fn check_stride(stride: usize) -> Result<()> {
    if stride == 1 || stride == 2 {
        Ok(())
    } else {
        Err(shape_err(format!("stride must be 1 or 2, got {stride}")))
    }
}

fn conv_taps<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias_len: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Taps, usize)> {
    check_stride(stride)?;
    let (cin, h, w) = input.dims3()?;
    let [cout, kcin, kh, kw] = kernel.shape()[..] else {
        return Err(shape_err(format!(
            "conv kernel must be (out, in, k, k), got {:?}",
            kernel.shape()
        )));
    };
    if kh != kw || kh % 2 == 0 {
        return Err(shape_err(format!(
            "conv kernel extent must be square and odd, got {kh}x{kw}"
        )));
    }
    if kcin != cin {
        return Err(shape_err(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if bias_len != cout {
        return Err(shape_err(format!(
            "bias has {bias_len} entries, kernel has {cout} output channels"
        )));
    }
    let taps = Taps {
        channels: cin,
        large_h: h,
        large_w: w,
        small_h: h.div_ceil(stride),
        small_w: w.div_ceil(stride),
        kernel: kh,
        stride,
        pad: (kh - 1) / 2,
        padding,
    };
    Ok((taps, cout))
}

/// Cross-correlation with "same" padding (`(k - 1) / 2`); output extent is
/// `ceil(extent / stride)`.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (taps, cout) = conv_taps(input, kernel, bias.len(), stride, padding)?;
    let cols = taps.gather(input.data());
    let n = taps.cols();
    let mut out = vec![T::ZERO; cout * n];
    for (o, &b) in out.chunks_mut(n).zip(bias) {
        o.fill(b);
    }
    T::gemm(
        cout,
        taps.rows(),
        n,
        T::ONE,
        kernel.data(),
        false,
        &cols,
        false,
        T::ONE,
        &mut out,
    );
    Tensor::new(&[cout, taps.small_h, taps.small_w], out)
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    output_grad: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGrads<T>> {
    let cout = kernel.shape().first().copied().unwrap_or(0);
    let (taps, cout) = conv_taps(input, kernel, cout, stride, padding)?;
    output_grad.expect_shape(&[cout, taps.small_h, taps.small_w])?;
    let n = taps.cols();
    let rows = taps.rows();
    let cols = taps.gather(input.data());

    let mut kernel_grad = vec![T::ZERO; cout * rows];
    T::gemm(
        cout,
        n,
        rows,
        T::ONE,
        output_grad.data(),
        false,
        &cols,
        true,
        T::ZERO,
        &mut kernel_grad,
    );
    let mut col_grad = vec![T::ZERO; rows * n];
    T::gemm(
        rows,
        cout,
        n,
        T::ONE,
        kernel.data(),
        true,
        output_grad.data(),
        false,
        T::ZERO,
        &mut col_grad,
    );
    let mut input_grad = Tensor::zeros(input.shape());
    taps.scatter(&col_grad, input_grad.data_mut());
    let bias = output_grad
        .data()
        .chunks(n)
        .map(|c| c.iter().fold(T::ZERO, |acc, &v| acc + v))
        .collect();
    Ok(ConvGrads {
        input: input_grad,
        kernel: Tensor::new(kernel.shape(), kernel_grad)?,
        bias,
    })
}

fn tconv_taps<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias_len: usize,
    stride: usize,
    padding: Padding,
) -> Result<(Taps, usize)> {
    check_stride(stride)?;
    let (cin, h, w) = input.dims3()?;
    let [kcin, cout, kh, kw] = kernel.shape()[..] else {
        return Err(shape_err(format!(
            "transposed conv kernel must be (in, out, k, k), got {:?}",
            kernel.shape()
        )));
    };
    if kh != kw || kh < stride {
        return Err(shape_err(format!(
            "transposed conv kernel must be square with extent >= stride {stride}, got {kh}x{kw}"
        )));
    }
    if kcin != cin {
        return Err(shape_err(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if bias_len != cout {
        return Err(shape_err(format!(
            "bias has {bias_len} entries, kernel has {cout} output channels"
        )));
    }
    let taps = Taps {
        channels: cout,
        large_h: h * stride,
        large_w: w * stride,
        small_h: h,
        small_w: w,
        kernel: kh,
        stride,
        pad: (kh - stride) / 2,
        padding,
    };
    Ok((taps, cout))
}

/// Transposed convolution upsampling by `stride`: output extent is
/// `extent * stride`. Kernel layout is `(in, out, k, k)`.
pub fn transposed_conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &[T],
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (taps, cout) = tconv_taps(input, kernel, bias.len(), stride, padding)?;
    let (cin, _, _) = input.dims3()?;
    let n = taps.cols();
    let mut cols = vec![T::ZERO; taps.rows() * n];
    T::gemm(
        taps.rows(),
        cin,
        n,
        T::ONE,
        kernel.data(),
        true,
        input.data(),
        false,
        T::ZERO,
        &mut cols,
    );
    let plane = taps.large_h * taps.large_w;
    let mut out = vec![T::ZERO; cout * plane];
    for (o, &b) in out.chunks_mut(plane).zip(bias) {
        o.fill(b);
    }
    taps.scatter(&cols, &mut out);
    Tensor::new(&[cout, taps.large_h, taps.large_w], out)
}

pub fn transposed_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    output_grad: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<ConvGrads<T>> {
    let cout = kernel.shape().get(1).copied().unwrap_or(0);
    let (taps, cout) = tconv_taps(input, kernel, cout, stride, padding)?;
    output_grad.expect_shape(&[cout, taps.large_h, taps.large_w])?;
    let (cin, _, _) = input.dims3()?;
    let n = taps.cols();
    let rows = taps.rows();
    let grad_cols = taps.gather(output_grad.data());

    let mut input_grad = vec![T::ZERO; cin * n];
    T::gemm(
        cin,
        rows,
        n,
        T::ONE,
        kernel.data(),
        false,
        &grad_cols,
        false,
        T::ZERO,
        &mut input_grad,
    );
    let mut kernel_grad = vec![T::ZERO; cin * rows];
    T::gemm(
        cin,
        n,
        rows,
        T::ONE,
        input.data(),
        false,
        &grad_cols,
        true,
        T::ZERO,
        &mut kernel_grad,
    );
    let plane = taps.large_h * taps.large_w;
    let bias = output_grad
        .data()
        .chunks(plane)
        .map(|c| c.iter().fold(T::ZERO, |acc, &v| acc + v))
        .collect();
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), input_grad)?,
        kernel: Tensor::new(kernel.shape(), kernel_grad)?,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ones(shape: &[usize]) -> Tensor<f64> {
        Tensor::filled(shape, 1.0)
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop cross-correlation, independent of the GEMM path.
    fn naive_conv(
        x: &Tensor<f64>,
        k: &Tensor<f64>,
        bias: &[f64],
        stride: usize,
        padding: Padding,
    ) -> Tensor<f64> {
        let (cin, h, w) = x.dims3().unwrap();
        let (cout, ks) = (k.shape()[0], k.shape()[2]);
        let p = (ks - 1) as isize / 2;
        let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
        let mut out = Tensor::zeros(&[cout, oh, ow]);
        for o in 0..cout {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for a in 0..ks {
                            for b in 0..ks {
                                let mut sy = (y * stride + a) as isize - p;
                                let mut sx = (xx * stride + b) as isize - p;
                                if padding == Padding::Wrap {
                                    sy = sy.rem_euclid(h as isize);
                                    sx = sx.rem_euclid(w as isize);
                                }
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += x.data()[(c * h + sy as usize) * w + sx as usize]
                                    * k.data()[((o * cin + c) * ks + a) * ks + b];
                            }
                        }
                    }
                    out.data_mut()[(o * oh + y) * ow + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn all_ones_zero_padding() {
        let out = conv2d_forward(&ones(&[1, 3, 3]), &ones(&[1, 1, 3, 3]), &[0.0], 1, Padding::Zero)
            .unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn all_ones_wrap_padding() {
        let out = conv2d_forward(&ones(&[1, 3, 3]), &ones(&[1, 1, 3, 3]), &[0.0], 1, Padding::Wrap)
            .unwrap();
        assert!(out.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 5, 7], &mut rng);
        let out = conv2d_forward(&x, &ones(&[1, 1, 1, 1]), &[0.0], 1, Padding::Zero).unwrap();
        assert_eq!(out, x);
        let g = conv2d_backward(&x, &ones(&[1, 1, 1, 1]), &x, 1, Padding::Zero).unwrap();
        assert_eq!(g.input, x);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (stride, padding) in [
            (1, Padding::Zero),
            (2, Padding::Zero),
            (1, Padding::Wrap),
            (2, Padding::Wrap),
        ] {
            let x = random(&[3, 7, 6], &mut rng);
            let k = random(&[2, 3, 3, 3], &mut rng);
            let bias = [0.25, -0.5];
            let fast = conv2d_forward(&x, &k, &bias, stride, padding).unwrap();
            let slow = naive_conv(&x, &k, &bias, stride, padding);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{stride} {padding:?}");
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 5, 5], &mut rng);
        let k = random(&[3, 2, 3, 3], &mut rng);
        let g = conv2d_backward(&x, &k, &Tensor::zeros(&[3, 5, 5]), 1, Padding::Zero).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernel.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors_name_dimensions() {
        let x = Tensor::<f32>::zeros(&[2, 4, 4]);
        let k = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&x, &k, &[0.0], 1, Padding::Zero).unwrap_err();
        assert!(err.to_string().contains("3 input channels"), "{err}");
        let even = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        assert!(conv2d_forward(&x, &even, &[0.0], 1, Padding::Zero).is_err());
        let k1 = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        assert!(conv2d_forward(&x, &k1, &[0.0], 3, Padding::Zero).is_err());
        assert!(conv2d_backward(&x, &k1, &Tensor::zeros(&[1, 3, 3]), 1, Padding::Zero).is_err());
    }

    #[test]
    fn transposed_single_tap() {
        let x = Tensor::<f64>::new(&[1, 1, 1], vec![2.5]).unwrap();
        let out =
            transposed_conv2d_forward(&x, &ones(&[1, 1, 2, 2]), &[0.0], 2, Padding::Zero).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 2.5));
        let zero = transposed_conv2d_forward(
            &Tensor::zeros(&[1, 3, 3]),
            &ones(&[1, 2, 3, 3]),
            &[0.0, 0.0],
            2,
            Padding::Zero,
        )
        .unwrap();
        assert_eq!(zero.shape(), &[2, 6, 6]);
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transposed_is_adjoint_of_strided_gather() {
        // <tconv(x), y> == <x, tconv_backward_input(y)> for any x, y.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for padding in [Padding::Zero, Padding::Wrap] {
            let x = random(&[2, 3, 4], &mut rng);
            let k = random(&[2, 3, 3, 3], &mut rng);
            let y = random(&[3, 6, 8], &mut rng);
            let fx = transposed_conv2d_forward(&x, &k, &[0.0; 3], 2, padding).unwrap();
            let g = transposed_conv2d_backward(&x, &k, &y, 2, padding).unwrap();
            let lhs: f64 = fx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(g.input.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }
}
