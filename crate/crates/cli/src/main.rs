use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scattermap::pipeline::{run_pipeline, RunOptions, ScenarioConfig, Stage, PRESETS};

#[derive(Parser)]
#[command(
    name = "scattermap",
    version,
    about = "Radar environment mapping from beam-swept OFDM observations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize observations and ground truth for a scenario.
    Simulate(Common),
    /// Range-angle charts and detections from observations.
    Chart {
        #[command(flatten)]
        common: Common,
        /// Observation file to chart instead of <out>/observations.rfobs.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Measurement selection, tracking, smoothing and map extraction.
    Track(Common),
    /// GOSPA of the map against ground truth.
    Evaluate(Common),
    /// All stages in order.
    Run {
        #[command(flatten)]
        common: Common,
        /// Stop after this stage.
        #[arg(long, value_parser = parse_stage)]
        stage_through: Option<Stage>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::parse(s).ok_or_else(|| format!("unknown stage `{s}` (simulate, chart, track, evaluate)"))
}

impl Common {
    fn scenario(&self) -> scattermap::Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ScenarioConfig::load(path)?,
            (None, Some(name)) => ScenarioConfig::preset(name)?,
            (None, None) => ScenarioConfig::preset("corridor-desk")?,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCATTERMAP_LOG", "warn")).init();
    let cli = Cli::parse();
    let (common, opts) = match cli.command {
        Command::Simulate(c) => (c, stage_only(Stage::Simulate)),
        Command::Chart { common, input } => (
            common,
            RunOptions {
                observations: input,
                ..stage_only(Stage::Chart)
            },
        ),
        Command::Track(c) => (c, stage_only(Stage::Track)),
        Command::Evaluate(c) => (c, stage_only(Stage::Evaluate)),
        Command::Run { common, stage_through } => (
            common,
            RunOptions {
                through: stage_through,
                ..RunOptions::default()
            },
        ),
    };
    let cfg = match common.scenario() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_pipeline(&cfg, &common.out, &opts) {
        Ok(manifest) => {
            for s in &manifest.stages {
                println!("{:<9} {:>8.2}s  {} files", s.name, s.seconds, s.outputs.len());
            }
            if let Some(n) = manifest.tracks {
                println!("tracks    {n}");
            }
            if let Some(s) = manifest.summary {
                println!("map points {}", s.map_points);
                println!("GOSPA raw {:.4}", s.raw_mean);
                if let Some(f) = s.filter_mean {
                    println!("GOSPA filter {f:.4}");
                }
                println!("GOSPA smoother {:.4}", s.smoother_mean);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn stage_only(stage: Stage) -> RunOptions {
    RunOptions {
        from: Some(stage),
        through: Some(stage),
        observations: None,
    }
}
