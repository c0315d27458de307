use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{build_scene, DatasetConfig, SplitConfig};
use crate::nn::{checkpoint_bytes, read_checkpoint};
use crate::pilegen::{PileMode, SceneConfig};

fn tiny_arch() -> ArchConfig {
    ArchConfig {
        channels: vec![4, 8],
        bottleneck_layers: 1,
        bottleneck_kernel: 3,
        ..ArchConfig::default()
    }
}

fn scenes(n: usize, size: usize, drops: [usize; 2]) -> Vec<SceneSample> {
    let cfg = DatasetConfig {
        seed: 3,
        scene: SceneConfig {
            height: size,
            width: size,
            drops,
            ..SceneConfig::default()
        },
        splits: vec![SplitConfig::new("train", n, PileMode::Multi)],
        ..DatasetConfig::default()
    };
    (0..n as u64)
        .map(|i| SceneSample::from_generated(build_scene(&cfg, &cfg.splits[0], i).unwrap()))
        .collect()
}

#[test]
fn zero_lr_keeps_params() {
    let arch = tiny_arch();
    let init = arch.init_params(1).unwrap();
    let mut cfg = TrainConfig::dual(1);
    cfg.lr = 0.0;
    cfg.weight_decay = 0.0;
    let out = train(&scenes(2, 32, [3, 5]), &arch, &cfg, init.clone(), |_| {}).unwrap();
    assert_eq!(out.curve.len(), 1);
    assert!(out.aborted.is_none());
    assert_eq!(checkpoint_bytes(&out.params), checkpoint_bytes(&init));
}

#[test]
fn training_is_reproducible() {
    let arch = tiny_arch();
    let data = scenes(2, 32, [3, 5]);
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in 0..2 {
        let mut cfg = TrainConfig::dual(2);
        cfg.lr = 1e-3;
        cfg.checkpoint = Some(dir.path().join(format!("run{run}.sdol")));
        let out = train(&data, &arch, &cfg, arch.init_params(7).unwrap(), |_| {}).unwrap();
        let on_disk = std::fs::read(cfg.checkpoint.as_ref().unwrap()).unwrap();
        assert_eq!(on_disk, checkpoint_bytes(&out.params));
        bytes.push(on_disk);
    }
    assert_eq!(bytes[0], bytes[1]);
    let back = read_checkpoint(&bytes[0][..]).unwrap();
    assert_eq!(ArchConfig::from_params(&back).unwrap(), arch);
}

#[test]
fn dihedral_group_laws() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Grid::from_fn(5, 5, |_, _| rng.random::<u16>());
    assert_eq!(Dihedral::IDENTITY.apply(&g).unwrap(), g);
    let half = Dihedral::from_index(2);
    assert_eq!(half.apply(&half.apply(&g).unwrap()).unwrap(), g);
    let quarter = Dihedral::from_index(1);
    let mut r = g.clone();
    for _ in 0..4 {
        r = quarter.apply(&r).unwrap();
    }
    assert_eq!(r, g);
    let mirror = Dihedral::from_index(4);
    assert_eq!(mirror.apply(&mirror.apply(&g).unwrap()).unwrap(), g);
    // the eight transforms are distinct on a generic image
    let images: Vec<_> = Dihedral::all().map(|t| t.apply(&g).unwrap()).collect();
    for i in 0..8 {
        for j in i + 1..8 {
            assert_ne!(images[i], images[j]);
        }
    }
}

#[test]
fn quarter_turn_direction() {
    let g = Grid::new(2, 2, vec![1, 2, 3, 4]).unwrap();
    // counter-clockwise: the top-right element moves to the top-left
    assert_eq!(Dihedral::from_index(1).apply(&g).unwrap().data(), &[2, 4, 1, 3]);
}

#[test]
fn non_square_rotation_rejected() {
    let g = Grid::filled(2, 3, 0u8);
    assert!(Dihedral::from_index(1).apply(&g).is_err());
    assert!(Dihedral::from_index(2).apply(&g).is_ok());
    assert!(Dihedral::from_index(6).apply(&g).is_ok());
}

#[test]
fn contours_commute_with_augmentation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let labels = Grid::from_fn(16, 16, |_, _| rng.random_range(0..4u16));
        for t in Dihedral::all() {
            assert_eq!(
                derive_contours(&t.apply(&labels).unwrap()),
                t.apply(&derive_contours(&labels)).unwrap()
            );
        }
    }
}

#[test]
fn graspability_commutes_with_augmentation() {
    let crit = GraspCriteria::default();
    for s in scenes(3, 64, [14, 22]) {
        let base = graspable_from_labels(&s.labels, &s.meta, &crit);
        for t in Dihedral::all() {
            let moved = graspable_from_labels(&t.apply(&s.labels).unwrap(), &s.meta, &crit);
            assert_eq!(moved.len(), base.len());
            for (a, b) in base.iter().zip(&moved) {
                assert_eq!(a.owner, b.owner);
                assert_eq!(t.apply(&a.grid).unwrap(), b.grid);
            }
        }
    }
}

#[test]
fn injected_nan_aborts_with_last_good_params() {
    let arch = tiny_arch();
    let mut init = arch.init_params(2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::edge(2);
    cfg.checkpoint = Some(dir.path().join("last.sdol"));
    let data = scenes(2, 32, [3, 5]);
    let first = train(&data, &arch, &cfg, init.clone(), |_| {}).unwrap();
    assert!(first.aborted.is_none());

    init.blocks[0].kernel.data_mut()[0] = f32::NAN;
    let out = train(&data, &arch, &cfg, init.clone(), |_| {}).unwrap();
    assert!(out.aborted.is_some());
    assert!(out.curve.is_empty());
    // the checkpoint on disk still holds the previous run's finite params
    let kept = std::fs::read(cfg.checkpoint.as_ref().unwrap()).unwrap();
    assert_eq!(kept, checkpoint_bytes(&first.params));

    // an exploding step is reverted
    let mut wild = TrainConfig::edge(3);
    wild.lr = 1e35;
    wild.clip_norm = None;
    let out = train(&data, &arch, &wild, arch.init_params(2).unwrap(), |_| {}).unwrap();
    assert!(out.aborted.is_some());
    assert!(out.params.all_finite());
}

#[test]
fn batch_of_one_sample_matches_single_step() {
    let arch = tiny_arch();
    let data = scenes(1, 32, [3, 5]);
    let mut a = TrainConfig::edge(1);
    a.lr = 1e-3;
    let mut b = a.clone();
    b.batch_size = 4; // one edge sample per scene, so the batch holds one
    let pa = train(&data, &arch, &a, arch.init_params(1).unwrap(), |_| {}).unwrap();
    let pb = train(&data, &arch, &b, arch.init_params(1).unwrap(), |_| {}).unwrap();
    assert_eq!(checkpoint_bytes(&pa.params), checkpoint_bytes(&pb.params));
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::dual(1);
    c.lr = -1.0;
    assert!(c.validate().is_err());
    let mut c = TrainConfig::dual(0);
    assert!(c.validate().is_err());
    c.epochs = 1;
    c.seeds_per_instance = 0;
    assert!(c.validate().is_err());
}

#[test]
fn two_scene_overfit() {
    let arch = ArchConfig::default();
    let data = scenes(2, 64, [14, 22]);
    let mut cfg = TrainConfig::dual(300);
    cfg.augment = false;
    let out = train(&data, &arch, &cfg, arch.init_params(0).unwrap(), |_| {}).unwrap();
    let first = out.curve[0].mean_loss;
    let last = out.curve.last().unwrap().mean_loss;
    assert!(last < 0.1 * first, "first {first}, last {last}");
}
