//! File-based stages driven by one [`RunConfig`].
//!
//! Every stage reads its inputs from and writes its outputs to the output
//! directory, so any stage can be rerun on its own once its upstream files
//! exist. `decision.json` is the record the report renders from.

mod config;
mod report;
mod stages;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction_log::LogError;
use crate::decision::DecisionError;
use crate::policy_catalog::CatalogError;
use crate::replay::ReplayError;
use crate::segment_safety::SegmentError;
use crate::support::SupportError;
use crate::synth::SynthError;
use crate::validation::ValidationError;

pub use config::{
    BootstrapConfig, CalculatorConfig, DecisionConfig, InputConfig, RunConfig, SchemaSpec, SegmentConfig, SupportConfig, TransferConfig,
};
pub use report::{render_report, RenderedReport};
pub use stages::{
    BootstrapSummary, DecisionReport, LeaderSegments, Manifest, PanelInfo, ReplayArtifact, SegmentArtifact,
    SupportArtifact, SupportSummary, TransferSummary,
};

/// Pipeline stages in execution order for `run`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Ingest,
    Synth,
    FitQuantiles,
    Replay,
    SegmentSafety,
    DiagnoseSupport,
    Transfer,
    Bootstrap,
    Decide,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Synth => "synth",
            Stage::FitQuantiles => "fit-quantiles",
            Stage::Replay => "replay",
            Stage::SegmentSafety => "segment-safety",
            Stage::DiagnoseSupport => "diagnose-support",
            Stage::Transfer => "transfer",
            Stage::Bootstrap => "bootstrap",
            Stage::Decide => "decide",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing {file}; run the `{requires}` stage first")]
    Dependency { file: String, requires: Stage },
    #[error("{file} was produced for a different catalog or panel; rerun `{requires}`")]
    Stale { file: String, requires: Stage },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("auction_log: {0}")]
    Log(#[from] LogError),
    #[error("policy_catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("replay_engine: {0}")]
    Replay(#[from] ReplayError),
    #[error("uncertainty_decision: {0}")]
    Decision(#[from] DecisionError),
    #[error("support_diagnostics: {0}")]
    Support(#[from] SupportError),
    #[error("segment_safety: {0}")]
    Segment(#[from] SegmentError),
    #[error("validation: {0}")]
    Validation(#[from] ValidationError),
    #[error("synth: {0}")]
    Synth(#[from] SynthError),
}

impl PipelineError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Dependency { .. } => "dependency",
            PipelineError::Stale { .. } => "stale",
            PipelineError::Io { .. } => "io",
            PipelineError::Format { .. } => "format",
            PipelineError::Log(_) => "auction_log",
            PipelineError::Catalog(_) => "policy_catalog",
            PipelineError::Replay(_) => "replay_engine",
            PipelineError::Decision(_) => "uncertainty_decision",
            PipelineError::Support(_) => "support_diagnostics",
            PipelineError::Segment(_) => "segment_safety",
            PipelineError::Validation(_) => "validation",
            PipelineError::Synth(_) => "synth",
        }
    }
}

/// A failed stage, as written to `error.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug)]
pub struct StageFailure {
    pub stage: Stage,
    pub error: PipelineError,
}

impl fmt::Display for StageFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageFailure {}

impl StageFailure {
    pub fn record(&self) -> ErrorRecord {
        ErrorRecord { stage: self.stage.to_string(), kind: self.error.kind().into(), message: self.error.to_string() }
    }
}

/// Command-line overrides applied on top of the configuration.
#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    /// Replaces the generator and bootstrap seeds.
    pub seed: Option<u64>,
    pub strict: Option<bool>,
}

pub struct Pipeline {
    config: RunConfig,
    out: PathBuf,
    workers: Option<usize>,
}

impl Pipeline {
    /// Applies overrides and validates. The output directory is created on first write.
    pub fn new(mut config: RunConfig, options: PipelineOptions) -> Result<Pipeline, PipelineError> {
        if let Some(seed) = options.seed {
            if let Some(g) = config.synth.as_mut() {
                g.seed = seed;
            }
            config.bootstrap.seed = seed;
        }
        if let (Some(strict), Some(input)) = (options.strict, config.input.as_mut()) {
            input.strict = strict;
        }
        if options.workers == Some(0) {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        let out = options
            .out_dir
            .or_else(|| config.out_dir.clone())
            .ok_or_else(|| PipelineError::Config("no output directory: set out_dir or pass --out".into()))?;
        config.validate()?;
        Ok(Pipeline { config, out, workers: options.workers })
    }

    pub fn from_file(path: &Path, options: PipelineOptions) -> Result<Pipeline, PipelineError> {
        let text = fs::read_to_string(path).map_err(|source| io_err(path, source))?;
        Pipeline::new(RunConfig::from_toml(&text)?, options)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    /// Runs one stage and records it in the manifest.
    pub fn run_stage(&self, stage: Stage) -> Result<(), StageFailure> {
        let result = match stage {
            Stage::Ingest => self.ingest(),
            Stage::Synth => self.synth_stage(),
            Stage::FitQuantiles => self.fit_quantiles(),
            Stage::Replay => self.replay(),
            Stage::SegmentSafety => self.segment_safety(),
            Stage::DiagnoseSupport => self.diagnose_support(),
            Stage::Transfer => self.transfer(),
            Stage::Bootstrap => self.bootstrap(),
            Stage::Decide => self.decide(),
            Stage::Report => self.report(),
        };
        result.and_then(|()| self.record_stage(stage)).map_err(|error| StageFailure { stage, error })
    }

    /// The full pipeline. Diagnostics run before `decide` so their summaries
    /// land in `decision.json`.
    pub fn run(&self) -> Result<(), StageFailure> {
        for stage in [
            Stage::Ingest,
            Stage::FitQuantiles,
            Stage::Replay,
            Stage::SegmentSafety,
            Stage::DiagnoseSupport,
            Stage::Transfer,
            Stage::Bootstrap,
            Stage::Decide,
            Stage::Report,
        ] {
            self.run_stage(stage)?;
        }
        Ok(())
    }

    /// Writes `error.json` for a failure; best effort.
    pub fn write_error(&self, failure: &StageFailure) -> Result<(), PipelineError> {
        write_error_record(&self.out, &failure.record())
    }
}

/// Writes `error.json` into `dir`, creating it if needed.
pub fn write_error_record(dir: &Path, record: &ErrorRecord) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json(&dir.join("error.json"), record)
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Io { path: path.display().to_string(), source }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| PipelineError::Format { path: path.display().to_string(), message: e.to_string() })?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_err(path, e))
}

/// Reads an upstream artifact; absence is a dependency error naming `requires`.
pub(crate) fn read_json<T: DeserializeOwned>(path: &Path, requires: Stage) -> Result<T, PipelineError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(PipelineError::Dependency { file: file_name(path), requires })
        }
        Err(e) => return Err(io_err(path, e)),
    };
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Format { path: path.display().to_string(), message: e.to_string() })
}

pub(crate) fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Nonfinite values as JSON null.
pub(crate) fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}
