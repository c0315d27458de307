use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};

use dualseg::dataset::{generate_dataset, DatasetConfig, Manifest, SceneStore, SplitConfig};
use dualseg::dualnet::ArchConfig;
use dualseg::evaluate::{evaluate, EvalConfig, EvalReport};
use dualseg::grid::Seed;
use dualseg::inference::{segment_at, Model};
use dualseg::metrics::MatchMode;
use dualseg::nn::read_checkpoint;
use dualseg::pgm::{read_pgm, write_pgm8};
use dualseg::pilegen::PileMode;
use dualseg::trainer::{train, Phase, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Multi,
    Mono,
}

impl From<ModeArg> for PileMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Multi => PileMode::Multi,
            ModeArg::Mono => PileMode::Mono,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Edge,
    Dual,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Edge => Phase::Edge,
            PhaseArg::Dual => Phase::Dual,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Number of scenes (ignored with --config).
    #[arg(long, default_value_t = 0)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Multi)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Full dataset configuration as JSON; `--config default` uses the
    /// built-in train/test/test-mono layout.
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn generate(args: &GenerateArgs) -> Result<Manifest> {
    let config = match args.config.as_deref() {
        Some("default") => DatasetConfig {
            seed: args.seed,
            ..DatasetConfig::default()
        },
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {path}"))?
        }
        None => DatasetConfig {
            seed: args.seed,
            splits: vec![SplitConfig::new(args.split.clone(), args.count, args.mode.into())],
            ..DatasetConfig::default()
        },
    };
    let manifest = generate_dataset(&config, &args.out)?;
    if !manifest.complete {
        let first = &manifest.errors[0];
        bail!("{} files failed to write, first {}: {}", manifest.errors.len(), first.file, first.message);
    }
    Ok(manifest)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub phase: PhaseArg,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Starting checkpoint; a fresh default network when absent.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

pub fn train_cmd(args: &TrainArgs, mut log: impl FnMut(String)) -> Result<()> {
    let store = SceneStore::open(&args.dataset)?;
    let scenes = store.load_split(&args.split)?;
    if scenes.is_empty() {
        bail!("split {:?} of {} has no scenes", args.split, args.dataset.display());
    }
    let params = match &args.init {
        Some(path) => {
            let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
            read_checkpoint(&bytes[..])?
        }
        None => ArchConfig::default().init_params(args.seed)?,
    };
    let arch = ArchConfig::from_params(&params)?;
    let mut config = TrainConfig::new(args.phase.into(), args.epochs);
    config.lr = args.lr;
    config.weight_decay = args.weight_decay;
    config.seed = args.seed;
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    config.checkpoint = Some(args.out.clone());
    let outcome = train(&scenes, &arch, &config, params, |s| {
        log(format!(
            "epoch {} samples {} loss {:.4} edge {:.4} mask {:.4}",
            s.epoch, s.samples, s.mean_loss, s.mean_edge, s.mean_mask
        ))
    })?;
    if let Some(reason) = outcome.aborted {
        bail!("training aborted: {reason}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    /// Splits to evaluate; every split in the manifest when absent.
    #[arg(long = "split")]
    pub splits: Vec<String>,
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f32,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub one_to_one: bool,
}

pub fn eval_cmd(args: &EvalArgs) -> Result<EvalReport> {
    let store = SceneStore::open(&args.dataset)?;
    let model = Model::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let names: Vec<String> = if args.splits.is_empty() {
        store.manifest().split_names().into_iter().map(String::from).collect()
    } else {
        args.splits.clone()
    };
    let mut splits = Vec::new();
    for name in names {
        let scenes = store.load_split(&name)?;
        if scenes.is_empty() {
            bail!("split {name:?} has no scenes");
        }
        splits.push((name, scenes));
    }
    let mut config = EvalConfig::default();
    config.grid.stride = args.stride;
    config.grid.threshold = args.threshold;
    config.tolerance = args.tolerance;
    if args.one_to_one {
        config.match_mode = MatchMode::OneToOne;
    }
    let report = evaluate(&model, &splits, &config)?;
    write_json(&args.report, &report)?;
    Ok(report)
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Depth map (16-bit PGM).
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub row: i64,
    #[arg(long, allow_negative_numbers = true)]
    pub col: i64,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f32,
    /// Output mask PGM (0 / 255).
    #[arg(long, default_value = "mask.pgm")]
    pub out: PathBuf,
}

/// Seed from signed coordinates, or an error naming the bounds.
pub fn seed_in_bounds(row: i64, col: i64, height: usize, width: usize) -> Result<Seed, String> {
    if row < 0 || col < 0 || row as u64 >= height as u64 || col as u64 >= width as u64 {
        return Err(format!(
            "seed ({row}, {col}) is outside the {height}x{width} image (rows 0..{}, cols 0..{})",
            height.saturating_sub(1),
            width.saturating_sub(1)
        ));
    }
    Ok(Seed::new(row as usize, col as usize))
}

pub fn check_threshold(t: f32) -> Result<(), String> {
    if !(t > 0.0 && t < 1.0) {
        return Err(format!("threshold must lie in (0, 1), got {t}"));
    }
    Ok(())
}

pub fn segment_cmd(args: &SegmentArgs) -> Result<(usize, f64, bool)> {
    check_threshold(args.threshold).map_err(anyhow::Error::msg)?;
    let model = Model::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let depth = read_pgm(&args.scene).with_context(|| format!("reading {}", args.scene.display()))?;
    let (h, w) = depth.dims();
    let seed = seed_in_bounds(args.row, args.col, h, w).map_err(anyhow::Error::msg)?;
    let seg = segment_at(&model, &depth, seed, args.threshold)?;
    write_pgm8(&args.out, &seg.mask.grid.map(|v| if v { 255u8 } else { 0 }))?;
    Ok((seg.mask.area(), seg.confidence, seg.empty))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
