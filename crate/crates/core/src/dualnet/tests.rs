use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grid::BinaryMask;
use crate::nn::grad_check;

fn tiny() -> ArchConfig {
    ArchConfig {
        channels: vec![3, 4],
        bottleneck_layers: 1,
        bottleneck_kernel: 3,
        padding: Padding::Zero,
    }
}

fn random_input(h: usize, w: usize, seed: Seed, rng: &mut ChaCha8Rng) -> DualInput<f64> {
    let depth = Grid::from_fn(h, w, |_, _| rng.random::<f32>());
    DualInput::from_normalized(&depth, seed).unwrap().cast()
}

fn random_params(arch: &ArchConfig, seed: u64) -> NetworkParams<f64> {
    let mut p = arch.init_params(seed).unwrap().cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for b in &mut p.blocks {
        for v in b.bias.data_mut() {
            *v = rng.random_range(-0.1..0.1);
        }
    }
    p
}

#[test]
fn specs_and_header_round_trip() {
    let arch = ArchConfig::default();
    let specs = arch.layer_specs();
    assert_eq!(specs.len(), 4 + 2 + 8 + 1);
    let p = arch.init_params(1).unwrap();
    assert_eq!(ArchConfig::from_params(&p).unwrap(), arch);
    let wrap = tiny().with_padding(Padding::Wrap);
    let q = wrap.zero_params::<f32>().unwrap();
    assert_eq!(ArchConfig::from_params(&q).unwrap(), wrap);
}

#[test]
fn zero_params_give_zero_logits() {
    let arch = tiny();
    let params = arch.zero_params::<f32>().unwrap();
    let depth = Grid::from_fn(8, 8, |r, c| (100 + r * 8 + c) as u16);
    let input = DualInput::from_depth(&depth, Seed::new(1, 6)).unwrap();
    let out = forward(&arch, &params, &input).unwrap();
    assert!(out.edge_logits.data().iter().all(|&v| v == 0.0));
    // inside the translated overlap the mask logits are the trunk's zeros
    let inside = uncenter(&Grid::filled(8, 8, true), input.seed, false).unwrap();
    for (&m, &v) in inside.data().iter().zip(out.mask_logits.data()) {
        assert_eq!(v, if m { 0.0 } else { OUTSIDE_LOGIT as f32 });
    }
}

#[test]
fn forward_is_pure() {
    let arch = ArchConfig::default();
    let params = arch.init_params(5).unwrap();
    let depth = Grid::from_fn(64, 64, |r, c| (200 + (r * c) % 37) as u16);
    let input = DualInput::from_depth(&depth, Seed::new(20, 40)).unwrap();
    let a = forward(&arch, &params, &input).unwrap();
    let b = forward(&arch, &params, &input).unwrap();
    let bytes = |o: &DualOutput| -> Vec<u8> {
        o.edge_logits
            .data()
            .iter()
            .chain(o.mask_logits.data())
            .flat_map(|v| v.to_le_bytes())
            .collect()
    };
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn indivisible_extent_is_rejected() {
    let arch = ArchConfig::default();
    let params = arch.zero_params::<f32>().unwrap();
    let depth = Grid::filled(60, 64, 100u16);
    let input = DualInput::from_depth(&depth, Seed::new(0, 0)).unwrap();
    let err = forward(&arch, &params, &input).unwrap_err().to_string();
    assert!(err.contains("not divisible by 16") && err.contains("64x64"), "{err}");
}

#[test]
fn mismatched_params_are_rejected() {
    let params = tiny().zero_params::<f32>().unwrap();
    let depth = Grid::filled(16, 16, 100u16);
    let input = DualInput::from_depth(&depth, Seed::new(0, 0)).unwrap();
    assert!(forward(&ArchConfig::default(), &params, &input).is_err());
}

fn sample_targets(h: usize, w: usize, rng: &mut ChaCha8Rng) -> (Grid<f64>, BinaryMask) {
    let edge = Grid::from_fn(h, w, |_, _| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
    let mask = BinaryMask::from_grid(Grid::from_fn(h, w, |r, c| r > 3 && r < 11 && c > 2 && c < 12));
    (edge, mask)
}

#[test]
fn end_to_end_gradient_check() {
    let arch = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let params = random_params(&arch, 3);
    let input = random_input(16, 16, Seed::new(6, 7), &mut rng);
    let (edge, mask) = sample_targets(16, 16, &mut rng);
    let sample = Sample {
        input: &input,
        edge_gt: &edge,
        mask_gt: Some(&mask),
    };
    let w = LossWeights::default();
    let report = grad_check(
        &params,
        |p| {
            let (l, g) = loss_and_grad(&arch, p, &sample, &w).unwrap();
            (l.total(), g)
        },
        1e-6,
        200,
        1,
    );
    assert!(report.checked >= 200);
    assert!(report.max_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn corrupted_backward_is_detected() {
    let arch = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = random_params(&arch, 4);
    let input = random_input(16, 16, Seed::new(3, 9), &mut rng);
    let (edge, mask) = sample_targets(16, 16, &mut rng);
    let sample = Sample {
        input: &input,
        edge_gt: &edge,
        mask_gt: Some(&mask),
    };
    let w = LossWeights::default();
    let report = grad_check(
        &params,
        |p| {
            let (l, mut g) = loss_and_grad(&arch, p, &sample, &w).unwrap();
            for b in &mut g.blocks {
                b.kernel.scale(1.05);
            }
            (l.total(), g)
        },
        1e-6,
        50,
        1,
    );
    assert!(report.max_relative_error > 1e-2);
}

#[test]
fn edge_only_equals_zero_mask_weight() {
    let arch = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = random_params(&arch, 8);
    let input = random_input(16, 16, Seed::new(10, 2), &mut rng);
    let (edge, mask) = sample_targets(16, 16, &mut rng);
    let out = forward(&arch, &params, &input).unwrap();
    let (l_edge, g_edge) = edge_only_loss(&out, &edge, 10.0).unwrap();
    let w = LossWeights {
        edge: 10.0,
        mask: 0.0,
    };
    let (parts, g_dual) = dual_loss(&out, &edge, &mask, &w).unwrap();
    assert_eq!(l_edge, parts.edge);
    assert_eq!(g_edge.edge, g_dual.edge);
    assert!(g_edge.mask.data().iter().all(|&v| v == 0.0));
}

#[test]
fn dual_loss_matches_scalar_loop() {
    let arch = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = random_params(&arch, 21);
    let input = random_input(16, 16, Seed::new(8, 8), &mut rng);
    let (edge, mask) = sample_targets(16, 16, &mut rng);
    let out = forward(&arch, &params, &input).unwrap();
    let (parts, _) = dual_loss(&out, &edge, &mask, &LossWeights::default()).unwrap();
    let term = |lam: f64, y: f64, x: f64| {
        let s = 1.0 / (1.0 + (-x).exp());
        -((1.0 - y) * (1.0 - s).ln() + lam * y * s.ln())
    };
    let mut oracle = 0.0;
    for i in 0..256 {
        oracle += term(10.0, edge.data()[i], out.edge_logits.data()[i]);
        let y = if mask.grid.data()[i] { 1.0 } else { 0.0 };
        oracle += term(1.0, y, out.mask_logits.data()[i]);
    }
    assert!((parts.total() - oracle).abs() < 1e-6, "{} vs {oracle}", parts.total());
}

#[test]
fn loss_weights_reject_negative() {
    let w = LossWeights {
        edge: -1.0,
        mask: 1.0,
    };
    assert!(w.validate().is_err());
}

fn roll_tensor(t: &Tensor<f32>, dr: isize, dc: isize) -> Tensor<f32> {
    let (c, h, w) = t.dims3().unwrap();
    let mut out = Tensor::zeros(&[c, h, w]);
    for ch in 0..c {
        let g = Grid::new(h, w, t.data()[ch * h * w..(ch + 1) * h * w].to_vec()).unwrap();
        out.data_mut()[ch * h * w..(ch + 1) * h * w].copy_from_slice(g.roll(dr, dc).data());
    }
    out
}

#[test]
fn wrap_trunk_commutes_with_stride_aligned_shifts() {
    let arch = tiny().with_padding(Padding::Wrap);
    let params = arch.init_params(12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..5 {
        let x = Tensor::from_fn(&[2, 16, 24], |_| rng.random::<f32>());
        let (dr, dc) = (4 * rng.random_range(-3..4i64) as isize, 4 * rng.random_range(-5..6i64) as isize);
        let (y, _) = trunk_forward(&arch, &params, &x).unwrap();
        let (ys, _) = trunk_forward(&arch, &params, &roll_tensor(&x, dr, dc)).unwrap();
        assert!(ys.max_abs_diff(&roll_tensor(&y, dr, dc)) <= 1e-5);
    }
}

#[test]
fn gradient_reaches_every_block() {
    let arch = tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let params = random_params(&arch, 30);
    let input = random_input(16, 16, Seed::new(5, 5), &mut rng);
    let (edge, mask) = sample_targets(16, 16, &mut rng);
    let sample = Sample {
        input: &input,
        edge_gt: &edge,
        mask_gt: Some(&mask),
    };
    let (_, g) = loss_and_grad(&arch, &params, &sample, &LossWeights::default()).unwrap();
    for (i, b) in g.blocks.iter().enumerate() {
        assert!(b.kernel.data().iter().any(|&v| v != 0.0), "block {i}");
    }
}
