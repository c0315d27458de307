use super::tensor::{Real, Tensor};
use crate::error::Result;

/// Logits are clamped to this magnitude before a standalone sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    let lim = T::from_f64(LOGIT_CLAMP);
    let x = if x > lim {
        lim
    } else if x < -lim {
        -lim
    } else {
        x
    };
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::ZERO {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn activation_forward<T: Real>(kind: Activation, input: &Tensor<T>) -> Tensor<T> {
    match kind {
        Activation::Relu => input.map(|v| if v > T::ZERO { v } else { T::ZERO }),
        Activation::Sigmoid => input.map(sigmoid),
    }
}

/// Gradient with respect to the activation input, given that input and the
/// gradient at the output.
pub fn activation_backward<T: Real>(
    kind: Activation,
    input: &Tensor<T>,
    output_grad: &Tensor<T>,
) -> Result<Tensor<T>> {
    output_grad.expect_shape(input.shape())?;
    let data = input
        .data()
        .iter()
        .zip(output_grad.data())
        .map(|(&x, &g)| match kind {
            Activation::Relu => {
                if x > T::ZERO {
                    g
                } else {
                    T::ZERO
                }
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                g * s * (T::ONE - s)
            }
        })
        .collect();
    Tensor::new(input.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0f32), 0.5);
        let tiny = sigmoid(-50.0f32);
        assert!(tiny > 0.0);
        assert_eq!(tiny, sigmoid(-30.0f32));
        assert!((sigmoid(2.0f64) - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::new(&[2], vec![-3.0, 3.0]).unwrap();
        assert_eq!(activation_forward(Activation::Relu, &x).data(), &[0.0, 3.0]);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0f64) >= 0.0);
    }

    #[test]
    fn sigmoid_backward_matches_finite_difference() {
        let x = Tensor::<f64>::new(&[3], vec![-1.3, 0.2, 2.2]).unwrap();
        let g = activation_backward(Activation::Sigmoid, &x, &Tensor::filled(&[3], 1.0)).unwrap();
        for (i, &xi) in x.data().iter().enumerate() {
            let h = 1e-6;
            let fd = (sigmoid(xi + h) - sigmoid(xi - h)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-9);
        }
    }
}
