use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dualseg::dataset::SceneStore;
use dualseg::inference::Model;
use dualseg_cli::commands::{
    eval_cmd, generate, segment_cmd, train_cmd, EvalArgs, GenerateArgs, SegmentArgs, TrainArgs,
};
use dualseg_cli::service::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "dualseg", version, about = "Click-seeded segmentation of piled objects in depth maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Run one training phase.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a JSON report.
    Eval(EvalArgs),
    /// Segment the object under one pixel and write a mask PGM.
    Segment(SegmentArgs),
    /// Serve scenes and click-to-segment over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Checkpoint; without it segmentation answers 503.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let m = generate(&args)?;
            println!("wrote {} scenes to {}", m.scenes.len(), args.out.display());
        }
        Command::Train(args) => {
            train_cmd(&args, |line| eprintln!("{line}"))?;
            println!("wrote {}", args.out.display());
        }
        Command::Eval(args) => {
            let report = eval_cmd(&args)?;
            for s in &report.splits {
                println!(
                    "{}: best IoU {:.4}, boundary precision {:.4}, contour F {:.4}",
                    s.split, s.instances.average_best_iou, s.instances.boundary_precision, s.contours.f_score
                );
            }
        }
        Command::Segment(args) => {
            let (area, confidence, empty) = segment_cmd(&args)?;
            if empty {
                println!("no instance at this pixel; wrote empty mask to {}", args.out.display());
            } else {
                println!("mask of {area} px, confidence {confidence:.4}, wrote {}", args.out.display());
            }
        }
        Command::Serve(args) => {
            let store = SceneStore::open(&args.scenes)?;
            let model = match &args.model {
                Some(p) => Some(Model::load(p).with_context(|| format!("loading {}", p.display()))?),
                None => None,
            };
            let state = AppState::from_store(&store, model)?;
            tokio::runtime::Runtime::new()?.block_on(serve(state, &args.host, args.port))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
