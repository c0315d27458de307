//! Boundary precision/recall with tolerance matching, best-IoU instance
//! scores and instance-scale boundary precision.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::grid::{BinaryMask, Grid, Seed};

/// `max(1, round(0.0075 * diagonal))` pixels.
pub fn default_tolerance(height: usize, width: usize) -> f64 {
    let diag = ((height * height + width * width) as f64).sqrt();
    (0.0075 * diag).round().max(1.0)
}

/// Maximum one-to-one correspondence between predicted and ground-truth
/// boundary pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryMatching {
    /// `(predicted, ground truth)` pixel pairs.
    pub pairs: Vec<(Seed, Seed)>,
    pub pred_total: usize,
    pub gt_total: usize,
}

impl BoundaryMatching {
    pub fn size(&self) -> usize {
        self.pairs.len()
    }
}

fn offsets(tol: f64) -> Vec<(isize, isize)> {
    if !(tol >= 0.0) {
        return Vec::new();
    }
    let r = tol.floor() as isize;
    let t2 = tol * tol;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if ((dr * dr + dc * dc) as f64) <= t2 {
                out.push((dr, dc));
            }
        }
    }
    // nearest candidates first
    out.sort_by_key(|&(dr, dc)| (dr * dr + dc * dc, dr, dc));
    out
}

const NIL: u32 = u32::MAX;

/// Exact maximum bipartite matching (Hopcroft-Karp) where a predicted and a
/// ground-truth pixel are admissible iff their Euclidean distance is at
/// most `tol`.
pub fn match_boundaries(pred: &Grid<bool>, gt: &Grid<bool>, tol: f64) -> Result<BoundaryMatching> {
    if !pred.same_dims(gt) {
        return Err(shape_err(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let (h, w) = pred.dims();
    let left: Vec<usize> = (0..h * w).filter(|&i| pred.data()[i]).collect();
    let right: Vec<usize> = (0..h * w).filter(|&i| gt.data()[i]).collect();
    let mut right_index = vec![NIL; h * w];
    for (j, &p) in right.iter().enumerate() {
        right_index[p] = j as u32;
    }
    let offs = offsets(tol);
    let adj: Vec<Vec<u32>> = left
        .iter()
        .map(|&p| {
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            offs.iter()
                .filter_map(|&(dr, dc)| {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        return None;
                    }
                    let j = right_index[nr as usize * w + nc as usize];
                    (j != NIL).then_some(j)
                })
                .collect()
        })
        .collect();

    let mut hk = HopcroftKarp::new(&adj, right.len());
    hk.run();
    let seed = |p: usize| Seed::new(p / w, p % w);
    let pairs = hk
        .match_left
        .iter()
        .enumerate()
        .filter(|(_, &j)| j != NIL)
        .map(|(i, &j)| (seed(left[i]), seed(right[j as usize])))
        .collect();
    Ok(BoundaryMatching {
        pairs,
        pred_total: left.len(),
        gt_total: right.len(),
    })
}

struct HopcroftKarp<'a> {
    adj: &'a [Vec<u32>],
    match_left: Vec<u32>,
    match_right: Vec<u32>,
    dist: Vec<u32>,
}

impl<'a> HopcroftKarp<'a> {
    fn new(adj: &'a [Vec<u32>], n_right: usize) -> Self {
        Self {
            adj,
            match_left: vec![NIL; adj.len()],
            match_right: vec![NIL; n_right],
            dist: vec![0; adj.len()],
        }
    }

    fn run(&mut self) {
        while self.bfs() {
            for u in 0..self.adj.len() {
                if self.match_left[u] == NIL {
                    self.dfs(u);
                }
            }
        }
    }

    /// Layers free left vertices; true if some augmenting path exists.
    fn bfs(&mut self) -> bool {
        let mut queue = VecDeque::new();
        for u in 0..self.adj.len() {
            if self.match_left[u] == NIL {
                self.dist[u] = 0;
                queue.push_back(u);
            } else {
                self.dist[u] = NIL;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &self.adj[u] {
                let m = self.match_right[v as usize];
                if m == NIL {
                    found = true;
                } else if self.dist[m as usize] == NIL {
                    self.dist[m as usize] = self.dist[u] + 1;
                    queue.push_back(m as usize);
                }
            }
        }
        found
    }

    fn dfs(&mut self, u: usize) -> bool {
        for k in 0..self.adj[u].len() {
            let v = self.adj[u][k] as usize;
            let m = self.match_right[v];
            let ok = m == NIL || (self.dist[m as usize] == self.dist[u] + 1 && self.dfs(m as usize));
            if ok {
                self.match_left[u] = v as u32;
                self.match_right[v] = u as u32;
                return true;
            }
        }
        self.dist[u] = NIL;
        false
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean, 0 when both are 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
    pub f_score: f64,
    pub matched: usize,
    pub pred_total: usize,
    pub gt_total: usize,
}

impl PrfPoint {
    fn new(threshold: f64, matched: usize, pred_total: usize, gt_total: usize) -> Self {
        let precision = ratio(matched, pred_total);
        let recall = ratio(matched, gt_total);
        Self {
            threshold,
            recall,
            precision,
            f_score: f_score(precision, recall),
            matched,
            pred_total,
            gt_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPrf {
    pub tolerance: f64,
    /// Point of the curve with the highest F-score (first on ties).
    pub best: PrfPoint,
    pub curve: Vec<PrfPoint>,
}

/// Thresholds 0.01, 0.02, ..., 0.99.
pub fn sweep_thresholds() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

/// Dataset-scale boundary precision/recall: at each threshold every
/// prediction is binarized (`p >= t`, no thinning) and matched counts are
/// pooled over all images before forming the ratios.
pub fn boundary_prf(predictions: &[Grid<f32>], gts: &[Grid<bool>], tol: f64) -> Result<BoundaryPrf> {
    if predictions.len() != gts.len() {
        return Err(shape_err(format!(
            "{} predictions for {} ground truths",
            predictions.len(),
            gts.len()
        )));
    }
    let mut curve = Vec::new();
    for t in sweep_thresholds() {
        let (mut matched, mut pred_total, mut gt_total) = (0, 0, 0);
        for (p, g) in predictions.iter().zip(gts) {
            let bin = p.map(|v| v as f64 >= t);
            let m = match_boundaries(&bin, g, tol)?;
            matched += m.size();
            pred_total += m.pred_total;
            gt_total += m.gt_total;
        }
        curve.push(PrfPoint::new(t, matched, pred_total, gt_total));
    }
    let best = curve
        .iter()
        .copied()
        .reduce(|a, b| if b.f_score > a.f_score { b } else { a })
        .expect("non-empty sweep");
    Ok(BoundaryPrf {
        tolerance: tol,
        best,
        curve,
    })
}

/// How ground-truth instances are paired with proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    /// Each instance takes its best proposal independently; a proposal may
    /// serve several instances.
    #[default]
    PerInstance,
    /// Greedy by decreasing IoU; each proposal serves at most one instance.
    OneToOne,
}

pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceMatch {
    pub scene: usize,
    pub instance: usize,
    pub proposal: Option<usize>,
    pub iou: f64,
    /// Best IoU is strictly above [`MATCH_IOU`].
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IouReport {
    /// Mean best IoU over matched instances; 0 when none matched.
    pub average_best_iou: f64,
    pub matched: usize,
    pub unmatched: usize,
    pub matches: Vec<InstanceMatch>,
}

fn best_per_instance(scene: usize, proposals: &[BinaryMask], gts: &[BinaryMask]) -> Vec<InstanceMatch> {
    gts.iter()
        .enumerate()
        .map(|(k, gt)| {
            let mut best: Option<(usize, f64)> = None;
            for (i, p) in proposals.iter().enumerate() {
                let iou = p.iou(gt);
                if best.map_or(true, |(_, b)| iou > b) {
                    best = Some((i, iou));
                }
            }
            let iou = best.map_or(0.0, |b| b.1);
            InstanceMatch {
                scene,
                instance: k,
                proposal: best.map(|b| b.0),
                iou,
                matched: iou > MATCH_IOU,
            }
        })
        .collect()
}

fn best_one_to_one(scene: usize, proposals: &[BinaryMask], gts: &[BinaryMask]) -> Vec<InstanceMatch> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (k, gt) in gts.iter().enumerate() {
        for (i, p) in proposals.iter().enumerate() {
            cand.push((p.iou(gt), k, i));
        }
    }
    cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out: Vec<InstanceMatch> = (0..gts.len())
        .map(|k| InstanceMatch {
            scene,
            instance: k,
            proposal: None,
            iou: 0.0,
            matched: false,
        })
        .collect();
    let mut taken = vec![false; proposals.len()];
    let mut done = vec![false; gts.len()];
    for (iou, k, i) in cand {
        if done[k] || taken[i] {
            continue;
        }
        done[k] = true;
        taken[i] = true;
        out[k].proposal = Some(i);
        out[k].iou = iou;
        out[k].matched = iou > MATCH_IOU;
    }
    out
}

/// Best proposal per ground-truth instance, counted as matched iff its IoU
/// exceeds 0.5.
pub fn best_iou_report(proposals: &[Vec<BinaryMask>], gts: &[Vec<BinaryMask>], mode: MatchMode) -> Result<IouReport> {
    if proposals.len() != gts.len() {
        return Err(shape_err(format!(
            "{} proposal sets for {} scenes",
            proposals.len(),
            gts.len()
        )));
    }
    let mut matches = Vec::new();
    for (s, (p, g)) in proposals.iter().zip(gts).enumerate() {
        matches.extend(match mode {
            MatchMode::PerInstance => best_per_instance(s, p, g),
            MatchMode::OneToOne => best_one_to_one(s, p, g),
        });
    }
    let matched: Vec<f64> = matches.iter().filter(|m| m.matched).map(|m| m.iou).collect();
    let average_best_iou = if matched.is_empty() {
        0.0
    } else {
        matched.iter().sum::<f64>() / matched.len() as f64
    };
    Ok(IouReport {
        average_best_iou,
        matched: matched.len(),
        unmatched: matches.len() - matched.len(),
        matches,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstancePrecision {
    /// Mean per-instance boundary precision; 0 when `count` is 0.
    pub precision: f64,
    pub count: usize,
    /// Set when there was no matched pair to score.
    pub degenerate: bool,
}

/// Boundary precision between each matched proposal and its instance,
/// averaged over the pairs.
pub fn instance_boundary_precision<'a>(
    pairs: impl IntoIterator<Item = (&'a BinaryMask, &'a BinaryMask)>,
    tol: f64,
) -> Result<InstancePrecision> {
    let mut sum = 0.0;
    let mut count = 0;
    for (pred, gt) in pairs {
        let m = match_boundaries(&pred.boundary().grid, &gt.boundary().grid, tol)?;
        sum += ratio(m.size(), m.pred_total);
        count += 1;
    }
    Ok(InstancePrecision {
        precision: if count == 0 { 0.0 } else { sum / count as f64 },
        count,
        degenerate: count == 0,
    })
}

/// Matched (proposal, instance) pairs of a report.
pub fn matched_pairs<'a>(
    report: &IouReport,
    proposals: &'a [Vec<BinaryMask>],
    gts: &'a [Vec<BinaryMask>],
) -> Vec<(&'a BinaryMask, &'a BinaryMask)> {
    report
        .matches
        .iter()
        .filter(|m| m.matched)
        .filter_map(|m| Some((&proposals[m.scene][m.proposal?], &gts[m.scene][m.instance])))
        .collect()
}

/// Absolute difference between two scores, e.g. real vs synthetic.
pub fn synthetic_gap(a: f64, b: f64) -> f64 {
    (a - b).abs()
}
