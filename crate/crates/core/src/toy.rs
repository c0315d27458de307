//! The complete small-scale experiment: generate, pretrain edges, train the
//! dual objective, evaluate.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{generate_dataset, DatasetConfig, SceneStore};
use crate::dualnet::ArchConfig;
use crate::error::{invalid, Result};
use crate::evaluate::{evaluate, EvalConfig, EvalReport};
use crate::inference::Model;
use crate::trainer::{train, EpochStats, Phase, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub dataset: DatasetConfig,
    pub arch: ArchConfig,
    pub init_seed: u64,
    pub edge: TrainConfig,
    pub dual: TrainConfig,
    pub eval: EvalConfig,
    pub train_split: String,
    pub eval_splits: Vec<String>,
}

impl Default for ToyConfig {
    fn default() -> Self {
        let mut dual = TrainConfig::dual(40);
        dual.seed = 1;
        Self {
            dataset: DatasetConfig::default(),
            arch: ArchConfig::default(),
            init_seed: 0,
            edge: TrainConfig::edge(60),
            dual,
            eval: EvalConfig::default(),
            train_split: "train".into(),
            eval_splits: vec!["test".into(), "test-mono".into()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyOutcome {
    pub edge_checkpoint: PathBuf,
    pub dual_checkpoint: PathBuf,
    pub report: EvalReport,
    pub curve: Vec<EpochStats>,
}

/// Runs everything under `dir`: `data/`, `edge.sdol`, `dual.sdol` and
/// `report.json`.
pub fn run_toy(dir: impl AsRef<Path>, config: &ToyConfig, mut on_epoch: impl FnMut(&EpochStats)) -> Result<ToyOutcome> {
    let dir = dir.as_ref();
    let data = dir.join("data");
    let manifest = generate_dataset(&config.dataset, &data)?;
    if !manifest.complete {
        return Err(invalid(format!("dataset generation left {} file errors", manifest.errors.len())));
    }
    let store = SceneStore::open(&data)?;
    let train_set = store.load_split(&config.train_split)?;

    let mut curve = Vec::new();
    let mut params = config.arch.init_params(config.init_seed)?;
    let mut paths = Vec::new();
    for (phase, name) in [(&config.edge, "edge.sdol"), (&config.dual, "dual.sdol")] {
        let path = dir.join(name);
        let mut tc = phase.clone();
        tc.checkpoint = Some(path.clone());
        let outcome = train(&train_set, &config.arch, &tc, params, |s| {
            on_epoch(s);
            curve.push(s.clone());
        })?;
        if let Some(reason) = outcome.aborted {
            let which = if phase.phase == Phase::Edge { "edge" } else { "dual" };
            return Err(invalid(format!("{which} phase aborted: {reason}")));
        }
        params = outcome.params;
        paths.push(path);
    }

    let model = Model::new(params)?;
    let splits = config
        .eval_splits
        .iter()
        .map(|s| Ok((s.clone(), store.load_split(s)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&model, &splits, &config.eval)?;
    std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report)?)?;
    Ok(ToyOutcome {
        edge_checkpoint: paths[0].clone(),
        dual_checkpoint: paths[1].clone(),
        report,
        curve,
    })
}
