//! Two-phase training: edge-only pretraining, then dual-objective training
//! on seed-samples of graspable instances.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{graspable_from_labels, SceneSample};
use crate::dualnet::{loss_and_grad, normalize_depth, ArchConfig, DualInput, LossParts, LossWeights, Sample};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Seed};
use crate::groundtruth::{derive_contours, sample_seeds, GraspCriteria};
use crate::nn::{checkpoint_bytes, sgd_step, NetworkParams, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Edge,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Seed-samples per SGD step; gradients are averaged.
    pub batch_size: usize,
    pub seeds_per_instance: usize,
    pub augment: bool,
    pub seed: u64,
    /// Gradient L2 norm cap applied before the step; `None` disables it.
    pub clip_norm: Option<f64>,
    pub weights: LossWeights,
    pub grasp: GraspCriteria,
    /// Where the latest finite parameters are written after every epoch.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(phase: Phase, epochs: usize) -> Self {
        Self {
            phase,
            epochs,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 1,
            seeds_per_instance: 2,
            augment: true,
            seed: 0,
            clip_norm: Some(3000.0),
            weights: LossWeights::default(),
            grasp: GraspCriteria::default(),
            checkpoint: None,
        }
    }

    pub fn edge(epochs: usize) -> Self {
        Self::new(Phase::Edge, epochs)
    }

    pub fn dual(epochs: usize) -> Self {
        Self::new(Phase::Dual, epochs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight decay must be finite and >= 0"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be >= 1"));
        }
        if self.phase == Phase::Dual && self.seeds_per_instance == 0 {
            return Err(invalid("dual phase needs at least one seed per instance"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(invalid("clip norm must be positive"));
            }
        }
        self.weights.validate()
    }
}

/// One of the 8 symmetries of the square: rotation by `quarter_turns * 90`
/// degrees counter-clockwise, preceded by a horizontal mirror if `mirror`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub mirror: bool,
}

impl Dihedral {
    pub const IDENTITY: Self = Self {
        quarter_turns: 0,
        mirror: false,
    };

    pub fn all() -> impl Iterator<Item = Self> {
        (0..8u8).map(Self::from_index)
    }

    pub fn from_index(i: u8) -> Self {
        Self {
            quarter_turns: i % 4,
            mirror: i >= 4,
        }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        Self::from_index(rng.random_range(0..8))
    }

    pub fn apply<T: Copy>(&self, grid: &Grid<T>) -> Result<Grid<T>> {
        let (h, w) = grid.dims();
        if self.quarter_turns % 2 == 1 && h != w {
            return Err(invalid(format!(
                "quarter-turn rotation needs a square image, got {h}x{w}"
            )));
        }
        let mirrored = if self.mirror {
            Grid::from_fn(h, w, |r, c| grid.get(r, w - 1 - c))
        } else {
            grid.clone()
        };
        let mut out = mirrored;
        for _ in 0..self.quarter_turns % 4 {
            let (h, w) = out.dims();
            // counter-clockwise: out(r, c) = in(c, w - 1 - r)
            out = Grid::from_fn(w, h, |r, c| out.get(c, w - 1 - r));
        }
        Ok(out)
    }
}

/// Applies one random dihedral transform to depth and labels alike.
pub fn augment<D: Copy, L: Copy>(
    depth: &Grid<D>,
    labels: &Grid<L>,
    rng: &mut impl Rng,
) -> Result<(Grid<D>, Grid<L>)> {
    let t = Dihedral::random(rng);
    Ok((t.apply(depth)?, t.apply(labels)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub phase: Phase,
    pub samples: usize,
    pub mean_loss: f64,
    pub mean_edge: f64,
    pub mean_mask: f64,
    /// Graspable instances that had no interior pixel to seed from.
    pub unseeded_instances: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Last parameters whose update was finite.
    pub params: NetworkParams<f32>,
    pub curve: Vec<EpochStats>,
    /// Why training stopped early, if it did.
    pub aborted: Option<String>,
}

/// Global L2 norm of all gradient entries.
pub fn grad_norm<T: Real>(grads: &NetworkParams<T>) -> f64 {
    grads
        .blocks
        .iter()
        .flat_map(|b| b.kernel.data().iter().chain(b.bias.data()))
        .map(|v| v.to_f64() * v.to_f64())
        .sum::<f64>()
        .sqrt()
}

fn clip<T: Real>(grads: &mut NetworkParams<T>, max_norm: f64) {
    let n = grad_norm(grads);
    if n > max_norm && n.is_finite() {
        let f = T::from_f64(max_norm / n);
        for b in &mut grads.blocks {
            b.kernel.scale(f);
            b.bias.scale(f);
        }
    }
}

struct Batch {
    grads: Option<NetworkParams<f32>>,
    count: usize,
}

fn save(params: &NetworkParams<f32>, config: &TrainConfig) -> Result<()> {
    if let Some(path) = &config.checkpoint {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, checkpoint_bytes(params))?;
        std::fs::rename(tmp, path)?;
    }
    Ok(())
}

/// Runs one training phase. `on_epoch` sees every finished epoch.
pub fn train(
    scenes: &[SceneSample],
    arch: &ArchConfig,
    config: &TrainConfig,
    init: NetworkParams<f32>,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(invalid("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = init;
    let mut curve = Vec::with_capacity(config.epochs);
    let lr = config.lr as f32;
    let wd = config.weight_decay as f32;

    for epoch in 0..config.epochs {
        let mut sum = LossParts::default();
        let mut samples = 0usize;
        let mut unseeded = 0usize;
        let mut batch = Batch {
            grads: None,
            count: 0,
        };
        let step = |params: &mut NetworkParams<f32>, batch: &mut Batch| -> Result<()> {
            let Some(mut g) = batch.grads.take() else {
                return Ok(());
            };
            if batch.count > 1 {
                let f = 1.0 / batch.count as f32;
                for b in &mut g.blocks {
                    b.kernel.scale(f);
                    b.bias.scale(f);
                }
            }
            batch.count = 0;
            if let Some(c) = config.clip_norm {
                clip(&mut g, c);
            }
            let before = params.clone();
            sgd_step(params, &g, lr, wd)?;
            if !params.all_finite() {
                *params = before;
                return Err(Error::NonFinite("parameters became non-finite; step reverted".into()));
            }
            Ok(())
        };

        for scene in scenes {
            let (depth, labels) = if config.augment {
                augment(&scene.depth, &scene.labels, &mut rng)?
            } else {
                (scene.depth.clone(), scene.labels.clone())
            };
            let (h, w) = depth.dims();
            let norm = normalize_depth(&depth);
            let edge_gt = derive_contours(&labels);

            let mut jobs: Vec<(Seed, Option<crate::grid::BinaryMask>)> = Vec::new();
            match config.phase {
                Phase::Edge => jobs.push((Seed::center(h, w), None)),
                Phase::Dual => {
                    for mask in graspable_from_labels(&labels, &scene.meta, &config.grasp) {
                        let draw = sample_seeds(&mask, &edge_gt, config.seeds_per_instance, &mut rng);
                        if draw.no_candidates {
                            unseeded += 1;
                        }
                        for s in draw.seeds {
                            jobs.push((s, Some(mask.clone())));
                        }
                    }
                }
            }

            for (seed, mask) in &jobs {
                let input = DualInput::from_normalized(&norm, *seed)?;
                let sample = Sample {
                    input: &input,
                    edge_gt: &edge_gt,
                    mask_gt: mask.as_ref(),
                };
                let (parts, g) = loss_and_grad(arch, &params, &sample, &config.weights)?;
                if !parts.total().is_finite() || !g.all_finite() {
                    let reason = format!(
                        "non-finite loss or gradient at epoch {epoch}, sample {samples}; kept last good parameters"
                    );
                    return Ok(TrainOutcome {
                        params,
                        curve,
                        aborted: Some(reason),
                    });
                }
                sum.edge += parts.edge;
                sum.mask += parts.mask;
                samples += 1;
                match &mut batch.grads {
                    Some(acc) => acc.add_scaled(&g, 1.0)?,
                    None => batch.grads = Some(g),
                }
                batch.count += 1;
                if batch.count == config.batch_size {
                    match step(&mut params, &mut batch) {
                        Ok(()) => {}
                        Err(Error::NonFinite(msg)) => {
                            return Ok(TrainOutcome {
                                params,
                                curve,
                                aborted: Some(msg),
                            })
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
        match step(&mut params, &mut batch) {
            Ok(()) => {}
            Err(Error::NonFinite(msg)) => {
                return Ok(TrainOutcome {
                    params,
                    curve,
                    aborted: Some(msg),
                })
            }
            Err(e) => return Err(e),
        }
        let n = samples.max(1) as f64;
        let stats = EpochStats {
            epoch,
            phase: config.phase,
            samples,
            mean_loss: sum.total() / n,
            mean_edge: sum.edge / n,
            mean_mask: sum.mask / n,
            unseeded_instances: unseeded,
        };
        save(&params, config)?;
        on_epoch(&stats);
        curve.push(stats);
    }
    Ok(TrainOutcome {
        params,
        curve,
        aborted: None,
    })
}

#[cfg(test)]
mod tests;
