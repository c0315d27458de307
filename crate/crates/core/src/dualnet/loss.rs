//! Weighted pixel-wise logistic loss and the dual (edge + mask) objective.

use serde::{Deserialize, Serialize};

use super::DualOutput;
use crate::error::{invalid, shape_err, Result};
use crate::grid::{BinaryMask, Grid};
use crate::nn::{softplus, Real};

/// Trade-off weights of the positive pixels of each head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub edge: f64,
    pub mask: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            edge: 10.0,
            mask: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.edge >= 0.0 && self.mask >= 0.0 && self.edge.is_finite() && self.mask.is_finite()) {
            return Err(invalid(format!(
                "loss weights must be finite and non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[inline]
fn sigmoid_exact<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// `sum_p (1 - y) * softplus(x) + lambda * y * softplus(-x)` and its
/// gradient `(1 - y) * sigmoid(x) - lambda * y * (1 - sigmoid(x))`.
///
/// Targets must be exactly 0 or 1.
pub fn logistic_term<T: Real>(lambda: f64, target: &Grid<T>, logits: &Grid<T>) -> Result<(f64, Grid<T>)> {
    if !target.same_dims(logits) {
        return Err(shape_err(format!(
            "target is {}x{}, logits are {}x{}",
            target.height(),
            target.width(),
            logits.height(),
            logits.width()
        )));
    }
    let lam = T::from_f64(lambda);
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(logits.data().len());
    for (i, (&y, &x)) in target.data().iter().zip(logits.data()).enumerate() {
        if y == T::ONE {
            total += lambda * softplus(-x).to_f64();
            grad.push(-lam * (T::ONE - sigmoid_exact(x)));
        } else if y == T::ZERO {
            total += softplus(x).to_f64();
            grad.push(sigmoid_exact(x));
        } else {
            return Err(invalid(format!(
                "target value {} at pixel {i} is not 0 or 1",
                y.to_f64()
            )));
        }
    }
    Ok((total, Grid::new(logits.height(), logits.width(), grad)?))
}

/// Loss gradients with respect to both output maps.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGrads<T: Real = f32> {
    pub edge: Grid<T>,
    pub mask: Grid<T>,
}

/// Loss value split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossParts {
    pub edge: f64,
    pub mask: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.edge + self.mask
    }
}

pub fn mask_target<T: Real>(mask: &BinaryMask) -> Grid<T> {
    mask.grid.map(|v| if v { T::ONE } else { T::ZERO })
}

/// Edge term weighted by `w.edge` plus mask term weighted by `w.mask`, for
/// one seed-sample.
pub fn dual_loss<T: Real>(
    output: &DualOutput<T>,
    edge_gt: &Grid<T>,
    mask_gt: &BinaryMask,
    w: &LossWeights,
) -> Result<(LossParts, DualGrads<T>)> {
    w.validate()?;
    let (edge, edge_grad) = logistic_term(w.edge, edge_gt, &output.edge_logits)?;
    let (mask, mask_grad) = logistic_term(w.mask, &mask_target(mask_gt), &output.mask_logits)?;
    Ok((
        LossParts { edge, mask },
        DualGrads {
            edge: edge_grad,
            mask: mask_grad,
        },
    ))
}

/// Edge term alone; the mask gradient is zero.
pub fn edge_only_loss<T: Real>(
    output: &DualOutput<T>,
    edge_gt: &Grid<T>,
    lambda_edge: f64,
) -> Result<(f64, DualGrads<T>)> {
    let (edge, edge_grad) = logistic_term(lambda_edge, edge_gt, &output.edge_logits)?;
    let (h, w) = output.mask_logits.dims();
    Ok((
        edge,
        DualGrads {
            edge: edge_grad,
            mask: Grid::filled(h, w, T::ZERO),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(h: usize, w: usize, v: &[f64]) -> Grid<f64> {
        Grid::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn zero_logits_closed_form() {
        let target = g(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (l, grad) = logistic_term(10.0, &target, &g(2, 2, &[0.0; 4])).unwrap();
        assert!((l - 13.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(grad.data(), &[-5.0, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn saturated_negatives_vanish() {
        let target = g(1, 3, &[0.0; 3]);
        let (l, _) = logistic_term(10.0, &target, &g(1, 3, &[-30.0; 3])).unwrap();
        assert!(l < 3.0 * 1e-12);
        let (big, _) = logistic_term(10.0, &target, &g(1, 3, &[-300.0; 3])).unwrap();
        assert!(big.is_finite() && big >= 0.0);
    }

    #[test]
    fn rejects_soft_targets_and_shape() {
        assert!(logistic_term(1.0, &g(1, 1, &[0.5]), &g(1, 1, &[0.0])).is_err());
        assert!(logistic_term(1.0, &g(1, 2, &[0.0, 0.0]), &g(2, 1, &[0.0, 0.0])).is_err());
    }

    #[test]
    fn gradient_matches_differences() {
        let target = g(1, 4, &[1.0, 0.0, 1.0, 0.0]);
        let x = [0.3, -1.7, 4.0, 2.5];
        let (_, grad) = logistic_term(10.0, &target, &g(1, 4, &x)).unwrap();
        for i in 0..4 {
            let eps = 1e-6;
            let mut p = x;
            p[i] += eps;
            let mut m = x;
            m[i] -= eps;
            let lp = logistic_term(10.0, &target, &g(1, 4, &p)).unwrap().0;
            let lm = logistic_term(10.0, &target, &g(1, 4, &m)).unwrap().0;
            let num = (lp - lm) / (2.0 * eps);
            assert!(crate::nn::relative_error(grad.data()[i], num) < 1e-8, "pixel {i}");
        }
    }

    #[test]
    fn positives_weigh_lambda_times_more() {
        // equal confidence: sigmoid(x) for a negative vs 1 - sigmoid(-x) for a positive
        let (_, neg) = logistic_term(10.0, &g(1, 1, &[0.0]), &g(1, 1, &[1.3])).unwrap();
        let (_, pos) = logistic_term(10.0, &g(1, 1, &[1.0]), &g(1, 1, &[-1.3])).unwrap();
        assert!((pos.data()[0].abs() / neg.data()[0].abs() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.edge, w.mask), (10.0, 1.0));
    }
}
