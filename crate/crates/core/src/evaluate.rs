//! End-to-end evaluation of a model on held-out scenes.

use serde::{Deserialize, Serialize};

use crate::dataset::SceneSample;
use crate::error::{invalid, Result};
use crate::grid::{BinaryMask, Grid, Seed};
use crate::groundtruth::GraspCriteria;
use crate::inference::{proposals_grid, segment_at, GridOptions, Model, DEFAULT_MASK_THRESHOLD};
use crate::metrics::{
    best_iou_report, boundary_prf, default_tolerance, instance_boundary_precision, matched_pairs, MatchMode, PrfPoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub grid: GridOptions,
    /// Boundary tolerance in pixels; `None` uses the diagonal rule.
    pub tolerance: Option<f64>,
    pub match_mode: MatchMode,
    pub grasp: GraspCriteria,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            grid: GridOptions {
                stride: 8,
                threshold: DEFAULT_MASK_THRESHOLD,
                dedup: false,
            },
            tolerance: None,
            match_mode: MatchMode::PerInstance,
            grasp: GraspCriteria::default(),
        }
    }
}

/// Contour detection scores at the best dataset-scale threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourScores {
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    pub threshold: f64,
    pub curve: Vec<PrfPoint>,
}

/// Instance detection scores of the best-matching proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub average_best_iou: f64,
    pub boundary_precision: f64,
    pub matched: usize,
    pub unmatched: usize,
    pub proposals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub scenes: usize,
    pub tolerance: f64,
    pub contours: ContourScores,
    pub instances: InstanceScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub architecture: String,
    pub checkpoint_sha256: String,
    pub config: EvalConfig,
    pub splits: Vec<MetricsReport>,
}

/// Scores precomputed predictions against ground truth.
pub fn score(
    split: &str,
    edge_probs: &[Grid<f32>],
    edge_gts: &[Grid<bool>],
    proposals: &[Vec<BinaryMask>],
    instances: &[Vec<BinaryMask>],
    tolerance: f64,
    mode: MatchMode,
) -> Result<MetricsReport> {
    let prf = boundary_prf(edge_probs, edge_gts, tolerance)?;
    let iou = best_iou_report(proposals, instances, mode)?;
    let bp = instance_boundary_precision(matched_pairs(&iou, proposals, instances), tolerance)?;
    Ok(MetricsReport {
        split: split.to_string(),
        scenes: edge_probs.len(),
        tolerance,
        contours: ContourScores {
            recall: prf.best.recall,
            precision: prf.best.precision,
            f_score: prf.best.f_score,
            threshold: prf.best.threshold,
            curve: prf.curve,
        },
        instances: InstanceScores {
            average_best_iou: iou.average_best_iou,
            boundary_precision: bp.precision,
            matched: iou.matched,
            unmatched: iou.unmatched,
            proposals: proposals.iter().map(Vec::len).sum(),
        },
    })
}

/// Runs the model on every scene: the edge map from a center click for the
/// contour scores, and grid proposals for the instance scores.
pub fn evaluate_split(model: &Model, split: &str, scenes: &[SceneSample], config: &EvalConfig) -> Result<MetricsReport> {
    let Some(first) = scenes.first() else {
        return Err(invalid(format!("split {split:?} has no scenes")));
    };
    let (h, w) = first.dims();
    let tolerance = config.tolerance.unwrap_or_else(|| default_tolerance(h, w));
    let mut edge_probs = Vec::with_capacity(scenes.len());
    let mut edge_gts = Vec::with_capacity(scenes.len());
    let mut proposals = Vec::with_capacity(scenes.len());
    let mut instances = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let (h, w) = scene.dims();
        let seg = segment_at(model, &scene.depth, Seed::center(h, w), config.grid.threshold)?;
        edge_probs.push(seg.edge_probabilities);
        edge_gts.push(scene.contours().map(|v| v >= 0.5));
        proposals.push(proposals_grid(model, &scene.depth, &config.grid)?.masks());
        instances.push(scene.graspable_masks(&config.grasp));
    }
    score(split, &edge_probs, &edge_gts, &proposals, &instances, tolerance, config.match_mode)
}

/// Evaluates every named split.
pub fn evaluate(model: &Model, splits: &[(String, Vec<SceneSample>)], config: &EvalConfig) -> Result<EvalReport> {
    let splits = splits
        .iter()
        .map(|(name, scenes)| evaluate_split(model, name, scenes, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        architecture: model.arch.header(),
        checkpoint_sha256: model.checkpoint_hash(),
        config: *config,
        splits,
    })
}
