use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::auction_log::{IngestOptions, Schema, SegmentDimension};
use crate::policy_catalog::{CatalogSpec, STANDARD19};
use crate::replay::DailyBaseline;
use crate::support::{BoundCalculatorInputs, DEFAULT_KAPPA, DEFAULT_Q_GRID};
use crate::synth::GeneratorConfig;
use crate::validation::{BootstrapRanking, BootstrapUnit};

use super::PipelineError;

/// One run, as read from a TOML file. Exactly one of `input` and `synth` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub input: Option<InputConfig>,
    #[serde(default)]
    pub synth: Option<GeneratorConfig>,
    #[serde(default = "default_catalog")]
    pub catalog: CatalogSpec,
    #[serde(default)]
    pub decision: DecisionConfig,
    #[serde(default)]
    pub support: SupportConfig,
    #[serde(default)]
    pub segments: SegmentConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub transfer: TransferConfig,
}

fn default_catalog() -> CatalogSpec {
    CatalogSpec::preset(STANDARD19)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSpec {
    Preset(String),
    Columns(Schema),
}

impl Default for SchemaSpec {
    fn default() -> Self {
        SchemaSpec::Preset("standard".into())
    }
}

impl SchemaSpec {
    pub fn resolve(&self) -> Result<Schema, PipelineError> {
        match self {
            SchemaSpec::Preset(name) => {
                Schema::preset(name).ok_or_else(|| PipelineError::Config(format!("unknown schema preset `{name}`")))
            }
            SchemaSpec::Columns(s) => Ok(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub dev: PathBuf,
    #[serde(default)]
    pub holdout: Option<PathBuf>,
    #[serde(default)]
    pub schema: SchemaSpec,
    /// Single-byte field separator; `"\t"` for tab. Defaults to tab for the
    /// iPinYou preset and comma otherwise.
    #[serde(default)]
    pub delimiter: Option<String>,
    #[serde(default = "yes")]
    pub strict: bool,
}

fn yes() -> bool {
    true
}

impl InputConfig {
    pub fn ingest_options(&self) -> Result<IngestOptions, PipelineError> {
        let default = match &self.schema {
            SchemaSpec::Preset(p) if p == "ipinyou" => b'\t',
            _ => b',',
        };
        let delimiter = match self.delimiter.as_deref() {
            None => default,
            Some(d) if d.len() == 1 => d.as_bytes()[0],
            Some(d) => return Err(PipelineError::Config(format!("delimiter must be a single byte, got {d:?}"))),
        };
        Ok(IngestOptions { delimiter, strict: self.strict })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub tolerance: f64,
    pub tolerance_grid: Vec<f64>,
    pub catalog_sizes: Vec<usize>,
    pub daily_baseline: DailyBaseline,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            alpha: 0.05,
            lambda: 1.0,
            tolerance: 0.0,
            tolerance_grid: vec![0.0, 0.02, 0.04, 0.06, 0.08, 0.10],
            catalog_sizes: vec![3, 5, 7, 10, 13, 16, 19],
            daily_baseline: DailyBaseline::DayLocal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupportConfig {
    /// Boundary window half-widths, minor units.
    pub h_grid: Vec<f64>,
    pub kappa: f64,
    pub q_grid: Vec<f64>,
    pub localized_draws: usize,
    pub calculator: CalculatorConfig,
    /// Planning value for the response gap in the ranking check, minor units.
    pub response_eta: f64,
}

impl Default for SupportConfig {
    fn default() -> Self {
        SupportConfig {
            h_grid: vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0],
            kappa: DEFAULT_KAPPA,
            q_grid: DEFAULT_Q_GRID.to_vec(),
            localized_draws: 200,
            calculator: CalculatorConfig::default(),
            response_eta: 0.0,
        }
    }
}

/// Calculator constants. `b`, `mu0`, `n` and `catalog_size` left unset are
/// taken from the panel: largest logged bid, baseline mean yield (both minor
/// units), row count and catalog size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalculatorConfig {
    pub b: Option<f64>,
    pub mu0: Option<f64>,
    pub n: Option<f64>,
    pub catalog_size: Option<usize>,
    pub delta: f64,
    pub c: f64,
    pub l_pi: f64,
    pub c0: f64,
    pub a: f64,
}

impl Default for CalculatorConfig {
    fn default() -> Self {
        let d = BoundCalculatorInputs::default();
        CalculatorConfig { b: None, mu0: None, n: None, catalog_size: None, delta: d.delta, c: d.c, l_pi: d.l_pi, c0: d.c0, a: d.a }
    }
}

impl CalculatorConfig {
    pub fn resolve(&self, b: f64, mu0: f64, n: f64, catalog_size: usize, l_s: f64, cover_radius: f64) -> BoundCalculatorInputs {
        BoundCalculatorInputs {
            b: self.b.unwrap_or(b),
            mu0: self.mu0.unwrap_or(mu0),
            n: self.n.unwrap_or(n),
            catalog_size: self.catalog_size.unwrap_or(catalog_size),
            delta: self.delta,
            c: self.c,
            l_pi: self.l_pi,
            c0: self.c0,
            a: self.a,
            l_s,
            cover_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub dimensions: Vec<SegmentDimension>,
    pub min_rows: usize,
    /// Bid-gap bucket edges, minor units.
    pub gap_bucket_edges: Vec<i64>,
    pub l_s: f64,
    pub cover_radius: f64,
    pub radius_grid: Vec<f64>,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            dimensions: vec![SegmentDimension::Advertiser, SegmentDimension::Exchange, SegmentDimension::Region],
            min_rows: 500,
            gap_bucket_edges: Vec::new(),
            l_s: 0.0,
            cover_radius: 0.0,
            radius_grid: vec![0.0, 0.25, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub draws: usize,
    pub seed: u64,
    pub unit: BootstrapUnit,
    pub ranking: BootstrapRanking,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { draws: 1000, seed: 0, unit: BootstrapUnit::Day, ranking: BootstrapRanking::FullReplay }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub top_k: usize,
    /// With a synthetic source, also generate a holdout panel.
    pub synth_holdout: bool,
    /// Holdout generator seed; defaults to the dev seed plus one.
    pub holdout_seed: Option<u64>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig { top_k: 5, synth_holdout: true, holdout_seed: None }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Configuration for a synthetic run with every other section at its default.
    pub fn synthetic(generator: GeneratorConfig) -> RunConfig {
        RunConfig {
            out_dir: None,
            input: None,
            synth: Some(generator),
            catalog: default_catalog(),
            decision: DecisionConfig::default(),
            support: SupportConfig::default(),
            segments: SegmentConfig::default(),
            bootstrap: BootstrapConfig::default(),
            transfer: TransferConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        match (&self.input, &self.synth) {
            (None, None) => return bad("config needs either an [input] or a [synth] section".into()),
            (Some(_), Some(_)) => return bad("config has both [input] and [synth]; choose one".into()),
            _ => {}
        }
        let d = &self.decision;
        if !(d.alpha > 0.0 && d.alpha < 1.0) {
            return bad(format!("decision.alpha must lie in (0, 1), got {}", d.alpha));
        }
        if !(d.lambda >= 0.0) || !(d.tolerance >= 0.0) || d.tolerance_grid.iter().any(|t| !(*t >= 0.0)) {
            return bad("decision.lambda and tolerances must be nonnegative".into());
        }
        if self.bootstrap.draws == 0 || self.support.localized_draws == 0 {
            return bad("bootstrap draw counts must be positive".into());
        }
        if self.segments.dimensions.is_empty() {
            return bad("segments.dimensions must not be empty".into());
        }
        if let Some(input) = &self.input {
            input.schema.resolve()?;
            input.ingest_options()?;
        }
        if let Some(g) = &self.synth {
            g.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn holdout_seed(&self) -> Option<u64> {
        let g = self.synth.as_ref()?;
        self.transfer.synth_holdout.then(|| self.transfer.holdout_seed.unwrap_or(g.seed.wrapping_add(1)))
    }
}
