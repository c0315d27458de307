//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::NetworkParams;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat parameter index with the largest error.
    pub worst_index: usize,
    pub checked: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `loss_and_grad` with central
/// differences over `coords` randomly chosen parameter coordinates (all of
/// them when there are fewer).
pub fn grad_check<F>(
    params: &NetworkParams<f64>,
    loss_and_grad: F,
    epsilon: f64,
    coords: usize,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&NetworkParams<f64>) -> (f64, NetworkParams<f64>),
{
    check(params, loss_and_grad, &[epsilon], coords, seed)
}

/// Relative disagreement with the next finer central difference above which
/// a step is taken to straddle a kink.
pub const KINK_TOLERANCE: f64 = 1e-4;

/// Like [`grad_check`] for piecewise-smooth losses (ReLU, max-pool). Each
/// coordinate starts at `max_step`; while the central difference disagrees
/// with the one at a tenfold smaller step by more than [`KINK_TOLERANCE`]
/// (plus a roundoff allowance) the step shrinks, down to `max_step / 100`.
/// The choice uses loss values only.
pub fn grad_check_piecewise<F>(
    params: &NetworkParams<f64>,
    loss_and_grad: F,
    max_step: f64,
    coords: usize,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&NetworkParams<f64>) -> (f64, NetworkParams<f64>),
{
    check(params, loss_and_grad, &[max_step, max_step / 10.0, max_step / 100.0], coords, seed)
}

fn check<F>(params: &NetworkParams<f64>, mut loss_and_grad: F, steps: &[f64], coords: usize, seed: u64) -> GradCheckReport
where
    F: FnMut(&NetworkParams<f64>) -> (f64, NetworkParams<f64>),
{
    let (base, analytic) = loss_and_grad(params);
    let total = params.num_scalars();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, total, coords.min(total)).into_vec();
    indices.sort_unstable();

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        checked: indices.len(),
    };
    for i in indices {
        let original = probe.get(i);
        let mut central = |h: f64| {
            probe.set(i, original + h);
            let (plus, _) = loss_and_grad(&probe);
            probe.set(i, original - h);
            let (minus, _) = loss_and_grad(&probe);
            probe.set(i, original);
            (plus - minus) / (2.0 * h)
        };
        let mut numeric = central(steps[0]);
        for &finer in &steps[1..] {
            let next = central(finer);
            let noise = 64.0 * f64::EPSILON * base.abs().max(1.0) / finer;
            if (numeric - next).abs() <= KINK_TOLERANCE * numeric.abs().max(next.abs()) + noise {
                break;
            }
            numeric = next;
        }
        let err = relative_error(analytic.get(i), numeric);
        if err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::LayerSpec;

    // kernel weight w and bias b of a 1x1 conv; kink of relu at w = 3e-5
    fn kinked(p: &NetworkParams<f64>) -> (f64, NetworkParams<f64>) {
        let (w, b) = (p.get(0), p.get(1));
        let mut g = p.zeros_like();
        g.set(0, if w > 3e-5 { 1000.0 } else { 0.0 });
        g.set(1, 2.0 * b);
        (1000.0 * (w - 3e-5).max(0.0) + b * b, g)
    }

    #[test]
    fn smooth_loss_matches() {
        let mut p = NetworkParams::<f64>::zeros("# t", &[LayerSpec::conv(1, 1, 1)]).unwrap();
        p.set(1, 0.7);
        let r = grad_check(&p, kinked, 1e-6, 10, 0);
        assert_eq!(r.checked, 2);
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }

    #[test]
    fn piecewise_check_steps_off_a_kink() {
        let mut p = NetworkParams::<f64>::zeros("# t", &[LayerSpec::conv(1, 1, 1)]).unwrap();
        p.set(1, 0.7);
        assert!(grad_check(&p, kinked, 1e-4, 2, 0).max_relative_error > 0.5);
        let r = grad_check_piecewise(&p, kinked, 1e-4, 2, 0);
        assert!(r.max_relative_error < 1e-8, "{r:?}");
    }
}
