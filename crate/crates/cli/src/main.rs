use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reserve_replay::pipeline::{write_error_record, ErrorRecord, Pipeline, PipelineOptions, Stage};

/// Offline replay and conservative certification of reserve-price policies.
#[derive(Parser, Debug)]
#[command(name = "reserve-replay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the dev (and holdout) logs into the output directory.
    Ingest(Common),
    /// Fit and freeze quantile anchors on the dev panel.
    FitQuantiles(Common),
    /// Replay every catalog policy on the dev panel.
    Replay(Common),
    /// Segment lower bounds and non-harm certificates.
    SegmentSafety(Common),
    /// Build decision.json from replay and segment results.
    Decide(Common),
    /// Boundary windows, q-local radii and bound calculators.
    DiagnoseSupport(Common),
    /// Frozen-catalog replay on the holdout panel.
    Transfer(Common),
    /// Day bootstrap of the selected policy.
    Bootstrap(Common),
    /// Generate synthetic dev and holdout panels.
    Synth(Common),
    /// Render decision.json into report.txt and CSV tables.
    Report(Common),
    /// Every stage in order.
    Run(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replay and diagnostics.
    #[arg(long, env = "RESERVE_REPLAY_WORKERS")]
    workers: Option<usize>,
    /// Overrides the generator and bootstrap seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Reject logs with any invalid row.
    #[arg(long, conflicts_with = "lenient")]
    strict: bool,
    /// Drop invalid rows and count them.
    #[arg(long)]
    lenient: bool,
}

impl Command {
    fn parts(&self) -> (Option<Stage>, &Common) {
        match self {
            Command::Ingest(c) => (Some(Stage::Ingest), c),
            Command::FitQuantiles(c) => (Some(Stage::FitQuantiles), c),
            Command::Replay(c) => (Some(Stage::Replay), c),
            Command::SegmentSafety(c) => (Some(Stage::SegmentSafety), c),
            Command::Decide(c) => (Some(Stage::Decide), c),
            Command::DiagnoseSupport(c) => (Some(Stage::DiagnoseSupport), c),
            Command::Transfer(c) => (Some(Stage::Transfer), c),
            Command::Bootstrap(c) => (Some(Stage::Bootstrap), c),
            Command::Synth(c) => (Some(Stage::Synth), c),
            Command::Report(c) => (Some(Stage::Report), c),
            Command::Run(c) => (None, c),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, common) = cli.command.parts();
    let options = PipelineOptions {
        out_dir: common.out.clone(),
        workers: common.workers,
        seed: common.seed,
        strict: if common.strict {
            Some(true)
        } else if common.lenient {
            Some(false)
        } else {
            None
        },
    };
    let stage_name = stage.map_or("run", Stage::as_str);

    let pipeline = match Pipeline::from_file(&common.config, options) {
        Ok(p) => p,
        Err(e) => {
            let record = ErrorRecord { stage: stage_name.into(), kind: e.kind().into(), message: e.to_string() };
            if let Some(dir) = &common.out {
                let _ = write_error_record(dir, &record);
            }
            eprintln!("error: {}", record.message);
            println!("{}", serde_json::to_string(&record).unwrap_or_default());
            return ExitCode::from(2);
        }
    };
    let result = match stage {
        Some(s) => pipeline.run_stage(s),
        None => pipeline.run(),
    };
    match result {
        Ok(()) => {
            let _ = std::fs::remove_file(pipeline.path("error.json"));
            ExitCode::SUCCESS
        }
        Err(failure) => {
            let _ = pipeline.write_error(&failure);
            eprintln!("error: {failure}");
            println!("{}", serde_json::to_string(&failure.record()).unwrap_or_default());
            ExitCode::from(1)
        }
    }
}
