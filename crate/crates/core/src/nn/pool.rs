use super::tensor::{Real, Tensor};
use crate::error::{shape_err, Result};

/// 2x2 non-overlapping max pooling.
///
/// Returns the pooled tensor and, per output cell, the flat input index of
/// the winning element. Ties go to the smallest row-major index.
pub fn maxpool2<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(shape_err(format!(
            "max-pool needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = (ch * h + 2 * y) * w + 2 * xx;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(&[c, oh, ow], out)?, argmax))
}

/// Routes each pooled gradient to the input element that won the max.
pub fn maxpool2_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[u32],
    output_grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    if output_grad.len() != argmax.len() {
        return Err(shape_err(format!(
            "pool gradient has {} entries, argmax has {}",
            output_grad.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&i, &v) in argmax.iter().zip(output_grad.data()) {
        g[i as usize] += v;
    }
    Ok(grad)
}
