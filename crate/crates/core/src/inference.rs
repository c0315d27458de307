//! Click-to-mask inference and grid-of-seeds proposals.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dualnet::{forward, normalize_depth, ArchConfig, DualInput};
use crate::error::Result;
use crate::grid::{check_seed, flood_fill4, BinaryMask, DepthMap, Grid, Seed};
use crate::nn::{checkpoint_bytes, read_checkpoint, sigmoid, NetworkParams};

pub const DEFAULT_MASK_THRESHOLD: f32 = 0.8;
pub const DEFAULT_GRID_STRIDE: usize = 16;
/// Proposals overlapping more than this are merged when deduplicating.
pub const DEDUP_IOU: f64 = 0.9;

/// Architecture plus parameters, ready for inference.
#[derive(Debug, Clone)]
pub struct Model {
    pub arch: ArchConfig,
    pub params: NetworkParams<f32>,
}

impl Model {
    pub fn new(params: NetworkParams<f32>) -> Result<Self> {
        Ok(Self {
            arch: ArchConfig::from_params(&params)?,
            params,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::new(read_checkpoint(&bytes[..])?)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn checkpoint_hash(&self) -> String {
        let digest = Sha256::digest(checkpoint_bytes(&self.params));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// The seed's connected component of a thresholded probability map.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub mask: BinaryMask,
    /// Mean probability over the component (0 when empty).
    pub confidence: f64,
    /// Set when the seed pixel itself is below the threshold.
    pub empty: bool,
}

/// Keeps pixels with probability `>= threshold` that are 4-connected to the
/// seed.
pub fn threshold_component(prob: &Grid<f32>, seed: Seed, threshold: f32) -> Result<Component> {
    check_seed(prob, seed)?;
    let comp = flood_fill4(&prob.map(|p| p >= threshold), seed);
    let mask = BinaryMask::from_grid(comp);
    let area = mask.area();
    if area == 0 {
        return Ok(Component {
            mask,
            confidence: 0.0,
            empty: true,
        });
    }
    let total: f64 = mask.pixels().map(|s| prob.get(s.row, s.col) as f64).sum();
    Ok(Component {
        mask,
        confidence: total / area as f64,
        empty: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub seed: Seed,
    pub threshold: f32,
    pub mask: BinaryMask,
    pub mask_probabilities: Grid<f32>,
    pub edge_probabilities: Grid<f32>,
    pub confidence: f64,
    pub empty: bool,
}

fn segment_normalized(model: &Model, norm: &Grid<f32>, seed: Seed, threshold: f32) -> Result<Segmentation> {
    check_seed(norm, seed)?;
    let input = DualInput::from_normalized(norm, seed)?;
    let out = forward(&model.arch, &model.params, &input)?;
    let mask_probabilities = out.mask_logits.map(sigmoid);
    let edge_probabilities = out.edge_logits.map(sigmoid);
    let comp = threshold_component(&mask_probabilities, seed, threshold)?;
    Ok(Segmentation {
        seed,
        threshold,
        mask: comp.mask,
        mask_probabilities,
        edge_probabilities,
        confidence: comp.confidence,
        empty: comp.empty,
    })
}

/// One forward pass for a click at `seed`.
pub fn segment_at(model: &Model, depth: &DepthMap, seed: Seed, threshold: f32) -> Result<Segmentation> {
    segment_normalized(model, &normalize_depth(depth), seed, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub stride: usize,
    pub threshold: f32,
    pub dedup: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            stride: DEFAULT_GRID_STRIDE,
            threshold: DEFAULT_MASK_THRESHOLD,
            dedup: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub seed: Seed,
    pub mask: BinaryMask,
    pub probabilities: Grid<f32>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub stride: usize,
    pub threshold: f32,
    pub proposals: Vec<Proposal>,
    /// Grid seeds whose mask came out empty.
    pub empty_seeds: Vec<Seed>,
}

impl ProposalSet {
    pub fn masks(&self) -> Vec<BinaryMask> {
        self.proposals.iter().map(|p| p.mask.clone()).collect()
    }
}

/// Grid seeds at `stride / 2 + i * stride` along both axes.
pub fn grid_seeds(height: usize, width: usize, stride: usize) -> Vec<Seed> {
    let stride = stride.max(1);
    let start = stride / 2;
    let mut seeds = Vec::new();
    for r in (start..height).step_by(stride) {
        for c in (start..width).step_by(stride) {
            seeds.push(Seed::new(r, c));
        }
    }
    seeds
}

/// Runs [`segment_at`] for every grid seed and keeps the non-empty masks.
pub fn proposals_grid(model: &Model, depth: &DepthMap, options: &GridOptions) -> Result<ProposalSet> {
    if options.stride == 0 {
        return Err(crate::error::invalid("grid stride must be >= 1"));
    }
    let norm = normalize_depth(depth);
    let (h, w) = depth.dims();
    let mut proposals = Vec::new();
    let mut empty_seeds = Vec::new();
    for seed in grid_seeds(h, w, options.stride) {
        let s = segment_normalized(model, &norm, seed, options.threshold)?;
        if s.empty {
            empty_seeds.push(seed);
        } else {
            proposals.push(Proposal {
                seed,
                mask: s.mask,
                probabilities: s.mask_probabilities,
                confidence: s.confidence,
            });
        }
    }
    if options.dedup {
        proposals = dedup(proposals);
    }
    Ok(ProposalSet {
        stride: options.stride,
        threshold: options.threshold,
        proposals,
        empty_seeds,
    })
}

/// Drops every proposal overlapping a more confident one with IoU above
/// [`DEDUP_IOU`]; survivors keep their grid order.
pub fn dedup(proposals: Vec<Proposal>) -> Vec<Proposal> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    order.sort_by(|&a, &b| proposals[b].confidence.total_cmp(&proposals[a].confidence));
    let mut keep = vec![false; proposals.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| proposals[k].mask.iou(&proposals[i].mask) <= DEDUP_IOU) {
            kept.push(i);
            keep[i] = true;
        }
    }
    proposals
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect()
}
