use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cardioview::fsio::{read_json, write_json};
use cardioview::phantom::{write_dataset, PhantomParams};
use cardioview::pipeline::{
    emit_views, evaluate, hyperparam_search, infer_study, load_checkpoint, split_patients, train_bbox, train_landmarks,
    write_report, Dataset, PipelineConfig, SplitSpec, StudyPrediction,
};
use cardioview::volcore::{read_mvol, LandmarkSet};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] cardioview::Error),
    #[error("{0}")]
    Usage(String),
}

#[derive(Parser, Debug)]
#[command(name = "cardioview", version, about = "Cardiac landmark localization and view planning")]
struct Cli {
    /// Pipeline configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Small-scale search protocol.
    #[arg(long, global = true)]
    desk: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthetic data.
    #[command(subcommand)]
    Phantom(PhantomCmd),
    /// Patient-level train/val/test split of a dataset.
    Split {
        #[arg(long)]
        data: PathBuf,
    },
    TrainBbox(TrainArgs),
    TrainLandmarks(TrainArgs),
    /// Random search over landmark-net configurations.
    Search {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Landmarks and box for one study.
    Infer {
        /// Volume header (`.json` next to its `.raw` payload).
        #[arg(long)]
        volume: PathBuf,
        #[command(flatten)]
        nets: NetArgs,
    },
    /// Renders the 2ch/3ch/4ch cines and the SAX stack.
    Views {
        #[arg(long)]
        volume: PathBuf,
        /// A prediction from `infer` or a plain landmark map.
        #[arg(long)]
        landmarks: PathBuf,
    },
    /// Table of median landmark errors per split plus box metrics.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        nets: NetArgs,
    },
}

#[derive(Subcommand, Debug)]
enum PhantomCmd {
    Gen {
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Fraction of landmark annotations dropped at random.
        #[arg(long, default_value_t = 0.0)]
        drop: f64,
        /// Phantom parameters (JSON).
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Dataset index written by `phantom gen`.
    #[arg(long)]
    data: PathBuf,
    /// Split written by `split`; computed from the config when absent.
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Overrides the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct NetArgs {
    #[arg(long)]
    bbox_net: PathBuf,
    #[arg(long)]
    landmark_net: PathBuf,
}

fn config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => read_json::<PipelineConfig>(p)?,
        None if cli.desk => PipelineConfig::desk(),
        None => PipelineConfig::default(),
    };
    if cli.desk {
        cfg.search = PipelineConfig::desk().search;
    }
    if let Some(seed) = cli.seed {
        cfg = cfg.reseed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(d: &DataArgs, cfg: &PipelineConfig) -> Result<(Dataset, SplitSpec), CliError> {
    let ds = Dataset::load(&d.data)?;
    let split = match &d.split {
        Some(p) => read_json(p)?,
        None => split_patients(&ds.ids(), cfg.fractions, cfg.seed)?,
    };
    Ok((ds, split))
}

fn create(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("cannot create {}: {e}", dir.display())))
}

fn read_landmarks(path: &Path) -> Result<LandmarkSet, CliError> {
    let value: serde_json::Value = read_json(path)?;
    if let Ok(p) = serde_json::from_value::<StudyPrediction>(value.clone()) {
        return Ok(p.median);
    }
    serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("{}: neither a prediction nor a landmark map: {e}", path.display())))
}

#[derive(Serialize)]
struct Written<'a> {
    command: &'a str,
    out: &'a Path,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = config(cli)?;
    let out = cli.out.as_path();
    create(out)?;
    let name = match &cli.command {
        Command::Phantom(PhantomCmd::Gen { n, drop, params }) => {
            let params = match params {
                Some(p) => read_json(p)?,
                None => PhantomParams::default(),
            };
            let index = write_dataset(out, *n, &params, cfg.seed, *drop)?;
            info!("wrote {}", index.display());
            "phantom gen"
        }
        Command::Split { data } => {
            let ds = Dataset::load(data)?;
            let split = split_patients(&ds.ids(), cfg.fractions, cfg.seed)?;
            write_json(&out.join("split.json"), &split)?;
            "split"
        }
        Command::TrainBbox(a) => {
            let (ds, split) = load_data(&a.data, &cfg)?;
            let (_, outcome) = train_bbox(&ds, &cfg, &split, a.epochs.unwrap_or(cfg.bbox_epochs), Some(out))?;
            write_json(&out.join("history.json"), &outcome)?;
            "train-bbox"
        }
        Command::TrainLandmarks(a) => {
            let (ds, split) = load_data(&a.data, &cfg)?;
            let (_, outcome) = train_landmarks(&ds, &cfg, &split, a.epochs.unwrap_or(cfg.landmark_epochs), Some(out))?;
            write_json(&out.join("history.json"), &outcome)?;
            "train-landmarks"
        }
        Command::Search { data } => {
            let (ds, split) = load_data(data, &cfg)?;
            let (report, _) = hyperparam_search(&ds, &split, &cfg, &cfg.search, Some(&out.join("selected")))?;
            write_json(&out.join("search.json"), &report)?;
            "search"
        }
        Command::Infer { volume, nets } => {
            let series = read_mvol(volume)?;
            let (mut b, _) = load_checkpoint(&nets.bbox_net)?;
            let (mut l, _) = load_checkpoint(&nets.landmark_net)?;
            let pred = infer_study(&series, &mut b, &mut l, &cfg)?;
            write_json(&out.join("prediction.json"), &pred)?;
            "infer"
        }
        Command::Views { volume, landmarks } => {
            let series = read_mvol(volume)?;
            let lms = read_landmarks(landmarks)?;
            let outcomes = emit_views(&series, &lms, out, &cfg)?;
            write_json(&out.join("views.json"), &outcomes)?;
            "views"
        }
        Command::Eval { data, nets } => {
            let (ds, split) = load_data(data, &cfg)?;
            let (mut b, _) = load_checkpoint(&nets.bbox_net)?;
            let (mut l, _) = load_checkpoint(&nets.landmark_net)?;
            let report = evaluate(&ds, &split, &mut b, &mut l, &cfg)?;
            write_report(out, &report)?;
            "eval"
        }
    };
    println!("{}", serde_json::to_string(&Written { command: name, out }).expect("plain data"));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match &e {
                CliError::Pipeline(_) => "pipeline",
                CliError::Usage(_) => "usage",
            };
            eprintln!("{}", serde_json::json!({ "error": kind, "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
