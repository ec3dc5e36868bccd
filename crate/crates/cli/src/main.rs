use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nori::pipeline::{Pipeline, RunConfig, Seeds, Stage};

#[derive(Parser)]
#[command(name = "nori", version, about = "Non-intrusive word-level intelligibility prediction pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args, Clone, Default)]
struct Opts {
    /// TOML run configuration; defaults apply to anything left out
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Stage to run (with its dependencies)
    #[arg(long, global = true, value_name = "NAME")]
    stage: Option<String>,
    /// Overrides every per-stage seed
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Synthesize the clean corpus
    CorpusSynth,
    /// Mix clean utterances with noise over the SNR grid
    CorpusMix,
    /// Train per-condition recognisers with k-fold cross-validation
    AsrTrain,
    /// Extract per-keyword measures
    MeasuresExtract,
    /// Simulate the listener cohort
    ListenersSim,
    /// Cross-validate the measure-to-intelligibility mappings
    MapTrain,
    /// Compute accuracy, macroscopic, SRT and significance metrics
    Evaluate,
    /// Write tables, plots and summary.json
    Report,
    /// Run every stage
    RunAll,
}

impl Command {
    fn stage(self) -> Stage {
        match self {
            Command::CorpusSynth => Stage::CorpusSynth,
            Command::CorpusMix => Stage::CorpusMix,
            Command::AsrTrain => Stage::AsrTrain,
            Command::MeasuresExtract => Stage::MeasuresExtract,
            Command::ListenersSim => Stage::ListenersSim,
            Command::MapTrain => Stage::MapTrain,
            Command::Evaluate => Stage::Evaluate,
            Command::Report | Command::RunAll => Stage::Report,
        }
    }
}

fn config(opts: &Opts) -> nori::Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = opts.seed {
        cfg.seeds = Seeds::all(s);
    }
    if let Some(j) = opts.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &opts.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> nori::Result<()> {
    let cfg = config(&cli.opts)?;
    let target = match (&cli.opts.stage, cli.command) {
        (Some(name), _) => Stage::parse(name)?,
        (None, Some(c)) => c.stage(),
        (None, None) => Stage::Report,
    };
    nori::pipeline::init_threads(cfg.jobs);
    let pipeline = Pipeline::new(cfg)?;
    let summary = pipeline.run(target)?;
    for s in &summary.ran {
        println!("ran      {s}");
    }
    for s in &summary.skipped {
        println!("cached   {s}");
    }
    if target == Stage::Report {
        println!("report   {}", pipeline.report_dir().display());
    } else {
        println!("output   {}", pipeline.stage_dir(target).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
