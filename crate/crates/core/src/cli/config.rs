//! TOML experiment files.
//!
//! ```toml
//! seed = 7
//! out = "runs/demo"
//! pipelines = ["santhi-like", "camma-like"]
//!
//! [data]
//! scale = "desk"
//!
//! [data.generator]
//! feature_skew = { scale = 0.5, shift = 2.0 }
//!
//! [evaluation]
//! holdout_center = "4"
//! bootstrap_iterations = 1000
//! ```
//!
//! Keys under `[data.generator]` override the chosen scale's defaults one
//! by one. A pipeline entry is a preset name or a full pipeline table.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::datagen::{GeneratorConfig, MetricKind};
use crate::fedsim::{StrategyPipeline, PRESET_NAMES};
use crate::metrics::F1Convention;
use crate::ranking::{BootstrapConfig, Stratification, WilcoxonMode};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataScale {
    /// 20 frames per video.
    #[default]
    Desk,
    /// 200 frames per video.
    Paper,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Existing dataset bundle; excludes `generator`.
    pub path: Option<PathBuf>,
    pub scale: DataScale,
    pub generator: Option<toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PipelineEntry {
    Preset(String),
    Spec(Box<StrategyPipeline>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    pub holdout_center: String,
    pub f1_convention: F1Convention,
    pub num_classes: usize,
    pub bootstrap_iterations: usize,
    pub metrics: Vec<MetricKind>,
    pub ci_level: f64,
    pub wilcoxon_mode: WilcoxonMode,
    pub stratification: Stratification,
    /// Thread count for training and bootstrapping; 0 picks one per core.
    pub workers: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        Self {
            holdout_center: "4".into(),
            f1_convention: F1Convention::Zero,
            num_classes: 6,
            bootstrap_iterations: b.iterations,
            metrics: b.metrics,
            ci_level: b.ci_level,
            wilcoxon_mode: b.wilcoxon_mode,
            stratification: b.stratification,
            workers: 0,
        }
    }
}

impl EvaluationSection {
    pub fn bootstrap(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            iterations: self.bootstrap_iterations,
            seed,
            workers: self.workers,
            stratification: self.stratification,
            metrics: self.metrics.clone(),
            ci_level: self.ci_level,
            wilcoxon_mode: self.wilcoxon_mode,
            f1_convention: self.f1_convention,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataSection,
    pub pipelines: Vec<PipelineEntry>,
    pub evaluation: EvaluationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            data: DataSection::default(),
            pipelines: PRESET_NAMES.iter().map(|n| PipelineEntry::Preset(n.to_string())).collect(),
            evaluation: EvaluationSection::default(),
        }
    }
}

/// Where the centers come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Bundle(PathBuf),
    Generate(GeneratorConfig),
}

fn merge(base: &mut toml::Table, overrides: &toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(key.clone(), value.clone());
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// The generator settings: scale defaults, then the master seed, then
    /// the `[data.generator]` overrides.
    pub fn generator(&self) -> Result<GeneratorConfig, CliError> {
        let mut base = match self.data.scale {
            DataScale::Desk => GeneratorConfig::desk_scale(),
            DataScale::Paper => GeneratorConfig::default(),
        };
        base.seed = self.seed;
        let cfg = match &self.data.generator {
            None => base,
            Some(overrides) => {
                let mut table = toml::Table::try_from(&base).map_err(|e| CliError::Runtime(e.to_string()))?;
                merge(&mut table, overrides);
                table
                    .try_into()
                    .map_err(|e| CliError::Validation(format!("invalid [data.generator]: {e}")))?
            }
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn data_source(&self) -> Result<DataSource, CliError> {
        match (&self.data.path, &self.data.generator) {
            (Some(_), Some(_)) => Err(CliError::Validation(
                "[data] takes either `path` or a `generator` table, not both".into(),
            )),
            (Some(path), None) => Ok(DataSource::Bundle(path.clone())),
            (None, _) => Ok(DataSource::Generate(self.generator()?)),
        }
    }

    pub fn resolve_pipelines(&self) -> Result<Vec<StrategyPipeline>, CliError> {
        if self.pipelines.is_empty() {
            return Err(CliError::Validation("no pipelines configured".into()));
        }
        let mut out: Vec<StrategyPipeline> = Vec::with_capacity(self.pipelines.len());
        for entry in &self.pipelines {
            let p = match entry {
                PipelineEntry::Preset(name) => StrategyPipeline::preset(name).ok_or_else(|| {
                    CliError::Validation(format!(
                        "unknown pipeline preset `{name}` (known: {})",
                        PRESET_NAMES.join(", ")
                    ))
                })?,
                PipelineEntry::Spec(spec) => (**spec).clone(),
            };
            p.validate().map_err(|e| CliError::Validation(e.to_string()))?;
            if out.iter().any(|q| q.name == p.name) {
                return Err(CliError::Validation(format!("pipeline `{}` listed twice", p.name)));
            }
            out.push(p);
        }
        Ok(out)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<(), CliError> {
        self.data_source()?;
        self.resolve_pipelines()?;
        let e = &self.evaluation;
        if e.holdout_center.is_empty() {
            return Err(CliError::Validation("holdout_center must not be empty".into()));
        }
        if e.num_classes < 2 {
            return Err(CliError::Validation("num_classes must be at least 2".into()));
        }
        if e.bootstrap_iterations == 0 {
            return Err(CliError::Validation("bootstrap_iterations must be at least 1".into()));
        }
        if e.metrics.is_empty() {
            return Err(CliError::Validation("metrics must not be empty".into()));
        }
        if !(e.ci_level > 0.0 && e.ci_level < 1.0) {
            return Err(CliError::Validation("ci_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}
