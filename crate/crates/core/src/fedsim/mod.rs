//! Federated rounds and the two challenge tasks.
//!
//! A round broadcasts the global parameters, lets every training center run
//! a few local epochs while keeping its best checkpoint on a local
//! validation split, and aggregates those checkpoints on the server. Task 1
//! scores the final global model on the held-out center; task 2 fine-tunes
//! a copy per training center and scores it on that center's test set.

mod pipeline;
mod results;
mod train;

pub use pipeline::{PipelineModel, ResolvedSampler, SamplerSpec, REFERENCE_LENGTH};
pub use results::{write_results, RESULTS_FILE, PREDICTIONS_FILE, PREDICTIONS_DIR};
pub use train::{
    evaluate_task1, run_challenge, run_federated_training, run_task2_adaptation, AverageReport, CenterReport,
    ChallengeConfig, ChallengeResult, ClientTelemetry, PipelineResult, RoundTelemetry, Task2Result,
    TrainedGlobal,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggregationError, ServerOptConfig};
use crate::metrics::{F1Convention, MetricsError};
use crate::models::{ModelError, OptimizerKind, PrototypeMode};

#[derive(Debug, Error)]
pub enum FedSimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("incompatible pipeline {pipeline}: {reason}")]
    Incompatible { pipeline: String, reason: String },
    #[error("no training centers besides the holdout center {0}")]
    NoTrainingCenters(String),
    #[error("holdout center {0} not found")]
    UnknownHoldout(String),
    #[error("center {0} has no training data")]
    EmptyTrainSet(String),
    #[error("center {0} has no test data")]
    EmptyTestSet(String),
    #[error("non-finite loss in round {round} on client {client}")]
    NonFiniteLoss { round: usize, client: String },
    #[error("non-finite loss while fine-tuning on center {0}")]
    NonFiniteFineTune(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Server-side aggregation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregationStrategy {
    FedAvg,
    FedMedian,
    /// FedAvg followed by a server optimizer step on the pseudo-gradient.
    FedOpt { server: ServerOptConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederatedConfig {
    pub strategy: AggregationStrategy,
    pub client_optimizer: OptimizerKind,
    pub fl_rounds: usize,
    pub local_epochs: usize,
    /// Cross-entropy epochs run before the local epochs of each round, for
    /// pipelines whose main loss does not train the classification head.
    pub head_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub fine_tune_epochs: usize,
    /// Share of each client's training cases kept for checkpoint selection.
    pub validation_fraction: f64,
    pub holdout_center: String,
    /// Convention for classes absent from an evaluation set.
    pub f1_convention: F1Convention,
    pub seed: u64,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        Self {
            strategy: AggregationStrategy::FedAvg,
            client_optimizer: OptimizerKind::Adam,
            fl_rounds: 5,
            local_epochs: 5,
            head_epochs: 0,
            learning_rate: 1e-3,
            batch_size: 8,
            fine_tune_epochs: 5,
            validation_fraction: 0.2,
            holdout_center: "4".into(),
            f1_convention: F1Convention::Zero,
            seed: 0,
        }
    }
}

impl FederatedConfig {
    pub fn validate(&self) -> Result<(), FedSimError> {
        let bad = |m: &str| Err(FedSimError::InvalidConfig(m.into()));
        if self.fl_rounds == 0 {
            return bad("fl_rounds must be at least 1");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if let AggregationStrategy::FedOpt { server } = &self.strategy {
            server.validate()?;
        }
        if let OptimizerKind::Sam { rho, .. } = self.client_optimizer {
            if !(rho > 0.0 && rho.is_finite()) {
                return bad("SAM rho must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Linear softmax head on raw features.
    Softmax,
    /// Linear projection to a unit-norm embedding with a softmax head.
    Embedding { embed_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    CrossEntropy,
    /// Inverse-frequency weights from the local training labels.
    WeightedCrossEntropy,
    Triplet { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InferenceSpec {
    /// Softmax on the pooled video input.
    Direct,
    /// Per-frame softmax, then a majority vote over frames.
    MajorityVote,
    /// Nearest class in embedding space against a labeled support set.
    Prototype { mode: PrototypeMode },
}

/// A complete submission: model, loss, frame sampling, inference and
/// federated schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyPipeline {
    pub name: String,
    pub model: ModelSpec,
    pub loss: LossSpec,
    pub sampler: SamplerSpec,
    pub inference: InferenceSpec,
    pub federated: FederatedConfig,
}

pub const PRESET_NAMES: [&str; 3] = ["santhi-like", "elbflorenz-like", "camma-like"];

impl StrategyPipeline {
    /// Video-level softmax head on 32 hybrid-sampled frames, FedAvg.
    pub fn santhi_like() -> Self {
        Self {
            name: "santhi-like".into(),
            model: ModelSpec::Softmax,
            loss: LossSpec::CrossEntropy,
            sampler: SamplerSpec::Hybrid {
                k: 32,
                halfwidth: 16,
                center_bias: 0.6,
            },
            inference: InferenceSpec::Direct,
            federated: FederatedConfig {
                strategy: AggregationStrategy::FedAvg,
                client_optimizer: OptimizerKind::Adam,
                fl_rounds: 5,
                local_epochs: 20,
                learning_rate: 1e-4,
                batch_size: 4,
                ..FederatedConfig::default()
            },
        }
    }

    /// Per-frame head with weighted cross-entropy on 100 equidistant frames,
    /// adaptive SAM on clients and an adaptive server optimizer.
    pub fn elbflorenz_like() -> Self {
        Self {
            name: "elbflorenz-like".into(),
            model: ModelSpec::Softmax,
            loss: LossSpec::WeightedCrossEntropy,
            sampler: SamplerSpec::Equidistant { k: 100 },
            inference: InferenceSpec::MajorityVote,
            federated: FederatedConfig {
                strategy: AggregationStrategy::FedOpt {
                    server: ServerOptConfig::default(),
                },
                client_optimizer: OptimizerKind::Sam {
                    rho: 0.05,
                    adaptive: true,
                },
                fl_rounds: 50,
                local_epochs: 2,
                learning_rate: 1e-3,
                batch_size: 128,
                ..FederatedConfig::default()
            },
        }
    }

    /// Triplet-trained embedding on similarity-selected frames, prototype
    /// inference, FedMedian.
    pub fn camma_like() -> Self {
        Self {
            name: "camma-like".into(),
            model: ModelSpec::Embedding { embed_dim: 16 },
            loss: LossSpec::Triplet { margin: 0.5 },
            sampler: SamplerSpec::Similarity { k: 32 },
            inference: InferenceSpec::Prototype {
                mode: PrototypeMode::Prototype,
            },
            federated: FederatedConfig {
                strategy: AggregationStrategy::FedMedian,
                client_optimizer: OptimizerKind::Adam,
                fl_rounds: 10,
                local_epochs: 5,
                head_epochs: 10,
                learning_rate: 1e-6,
                batch_size: 1,
                ..FederatedConfig::default()
            },
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "santhi-like" => Some(Self::santhi_like()),
            "elbflorenz-like" => Some(Self::elbflorenz_like()),
            "camma-like" => Some(Self::camma_like()),
            _ => None,
        }
    }

    pub fn presets() -> Vec<Self> {
        PRESET_NAMES.iter().filter_map(|n| Self::preset(n)).collect()
    }

    /// Checks that model, loss, sampler and inference fit together.
    pub fn validate(&self) -> Result<(), FedSimError> {
        self.federated.validate()?;
        let embedding = matches!(self.model, ModelSpec::Embedding { .. });
        let fail = |reason: &str| {
            Err(FedSimError::Incompatible {
                pipeline: self.name.clone(),
                reason: reason.into(),
            })
        };
        if self.name.trim().is_empty() {
            return fail("pipeline name is empty");
        }
        if let ModelSpec::Embedding { embed_dim: 0 } = self.model {
            return fail("embed_dim must be at least 1");
        }
        if matches!(self.inference, InferenceSpec::Prototype { .. }) != embedding {
            return fail("prototype inference and an embedding model go together");
        }
        if matches!(self.loss, LossSpec::Triplet { .. }) && !embedding {
            return fail("triplet loss needs an embedding model");
        }
        if let LossSpec::Triplet { margin } = self.loss {
            if !(margin >= 0.0 && margin.is_finite()) {
                return fail("triplet margin must be non-negative");
            }
        }
        if matches!(self.sampler, SamplerSpec::Similarity { .. }) && !embedding {
            return fail("similarity frame selection needs an embedding model");
        }
        if matches!(self.sampler, SamplerSpec::Similarity { .. }) && matches!(self.inference, InferenceSpec::MajorityVote) {
            return fail("majority vote needs a fixed frame sampler");
        }
        self.sampler.validate().map_err(|reason| FedSimError::Incompatible {
            pipeline: self.name.clone(),
            reason,
        })
    }
}
