//! Ground-truth structures derived from an instance label map: inter-instance
//! contours, instance masks, graspable-instance filtering, training seeds, and
//! the contour/mask duality in both directions.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{count_components4, flood_fill4, BinaryMask, ContourMap, Grid, InstanceLabelMap, Seed};

/// Binarization threshold applied to predicted contour maps.
pub const DEFAULT_CONTOUR_THRESHOLD: f32 = 0.5;

/// A pixel is a contour pixel iff its 8-neighborhood (the pixel itself
/// excluded, out-of-bounds neighbors ignored) holds at least two distinct
/// labels. The floor label 0 takes part like any other label.
pub fn derive_contours(labels: &InstanceLabelMap) -> ContourMap {
    let (h, w) = labels.dims();
    Grid::from_fn(h, w, |r, c| {
        let mut first: Option<u16> = None;
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let l = labels.get(nr as usize, nc as usize);
                match first {
                    None => first = Some(l),
                    Some(f) if f != l => return 1.0,
                    _ => {}
                }
            }
        }
        0.0
    })
}

/// One mask per distinct nonzero id, in increasing id order.
pub fn instance_masks(labels: &InstanceLabelMap) -> Vec<BinaryMask> {
    let mut ids: Vec<u16> = labels.data().iter().copied().filter(|&l| l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| BinaryMask::from_grid(labels.map(|l| l == id)).with_owner(id))
        .collect()
}

/// Contour pixels of a (possibly predicted) contour map.
pub fn binarize_contours(contours: &ContourMap, threshold: f32) -> Grid<bool> {
    contours.map(|v| v >= threshold)
}

/// The 4-connected component of the non-contour pixels that contains
/// `seed`; empty when the seed sits on a contour pixel.
pub fn seed_to_mask(contours: &ContourMap, seed: Seed, threshold: f32) -> Result<BinaryMask> {
    crate::grid::check_seed(contours, seed)?;
    let free = contours.map(|v| v < threshold);
    Ok(BinaryMask::from_grid(flood_fill4(&free, seed)))
}

/// Rebuilds a label map from pairwise disjoint masks (ids 1..=n in order,
/// floor 0) and derives its contours.
pub fn masks_to_contours(masks: &[BinaryMask], height: usize, width: usize) -> Result<ContourMap> {
    let mut labels: InstanceLabelMap = Grid::filled(height, width, 0);
    for (i, m) in masks.iter().enumerate() {
        m.grid.expect_dims(height, width)?;
        let id = u16::try_from(i + 1).map_err(|_| invalid("too many masks"))?;
        for (l, &v) in labels.data_mut().iter_mut().zip(m.grid.data()) {
            if v {
                if *l != 0 {
                    return Err(invalid(format!(
                        "masks {} and {} overlap",
                        *l as usize - 1,
                        i
                    )));
                }
                *l = id;
            }
        }
    }
    Ok(derive_contours(&labels))
}

/// Thresholds deciding which instances serve as mask ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCriteria {
    pub min_area: usize,
    pub min_visible_fraction: f64,
}

impl Default for GraspCriteria {
    fn default() -> Self {
        Self {
            min_area: 30,
            min_visible_fraction: 0.7,
        }
    }
}

impl GraspCriteria {
    pub fn accepts(&self, mask: &BinaryMask, full_footprint_area: usize) -> bool {
        let area = mask.area();
        area >= self.min_area
            && full_footprint_area > 0
            && area as f64 / full_footprint_area as f64 >= self.min_visible_fraction
            && count_components4(&mask.grid) == 1
    }
}

/// Keeps masks that are 4-connected, large enough, and not too occluded.
/// `full_area` maps a mask owner id to the area of its unoccluded footprint;
/// masks without an owner or without a known footprint are dropped.
pub fn filter_graspable(
    masks: Vec<BinaryMask>,
    full_area: impl Fn(u16) -> Option<usize>,
    criteria: &GraspCriteria,
) -> Vec<BinaryMask> {
    masks
        .into_iter()
        .filter(|m| {
            m.owner
                .and_then(&full_area)
                .is_some_and(|area| criteria.accepts(m, area))
        })
        .collect()
}

/// Seeds drawn for one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedDraw {
    pub seeds: Vec<Seed>,
    /// Set when the mask has no pixel off the contours.
    pub no_candidates: bool,
}

/// `k` seeds drawn uniformly without replacement from the mask pixels that
/// are not contour pixels (all of them when fewer than `k` exist).
pub fn sample_seeds(
    mask: &BinaryMask,
    contours: &ContourMap,
    k: usize,
    rng: &mut impl Rng,
) -> SeedDraw {
    let candidates: Vec<Seed> = mask
        .pixels()
        .filter(|s| contours.get(s.row, s.col) < DEFAULT_CONTOUR_THRESHOLD)
        .collect();
    if candidates.is_empty() {
        return SeedDraw {
            seeds: Vec::new(),
            no_candidates: true,
        };
    }
    let seeds = if candidates.len() <= k {
        candidates
    } else {
        sample(rng, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect()
    };
    SeedDraw {
        seeds,
        no_candidates: false,
    }
}
