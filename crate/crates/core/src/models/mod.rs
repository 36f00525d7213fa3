//! Toy models behind a uniform training contract, their losses, frame
//! samplers and video-level inference rules.
//!
//! The models stand in for a frozen backbone plus trainable head: inputs are
//! raw synthetic frame features, and only a small linear map is learned.

mod embedding;
mod inference;
mod optim;
mod sampling;
mod softmax;

pub use embedding::{triplet_margin_loss, EmbeddingNet};
pub use inference::{argmax, majority_vote, prototype_classify, PrototypeMode, SupportSet};
pub use optim::{Adam, LocalOptimizer, OptimizerKind};
pub use sampling::{
    keyframe_index, sample_indices_equidistant, sample_indices_hybrid, select_frames_by_similarity,
    HybridSampler,
};
pub use softmax::SoftmaxHead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{AggregationError, ParameterVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("input has dimension {got}, model expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("label {label} outside 0..{num_classes}")]
    Label { label: usize, num_classes: usize },
    #[error("{model} cannot be trained with {loss} loss")]
    IncompatibleLoss { model: &'static str, loss: &'static str },
    #[error("class weights: {0}")]
    ClassWeights(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Params(#[from] AggregationError),
}

/// One simulated case: a fixed-length sequence of frame feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoInstance {
    pub frames: Vec<Vec<f64>>,
    pub label: usize,
    pub center_id: String,
    pub case_id: String,
}

impl VideoInstance {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Mean of the frames at `indices`.
    pub fn pooled(&self, indices: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.feature_dim()];
        for &i in indices {
            for (o, v) in out.iter_mut().zip(&self.frames[i]) {
                *o += v;
            }
        }
        let n = indices.len().max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    WeightedCrossEntropy,
    TripletMargin,
}

impl LossKind {
    fn name(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::WeightedCrossEntropy => "weighted cross-entropy",
            LossKind::TripletMargin => "triplet margin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    pub class_weights: Option<Vec<f64>>,
    pub margin: f64,
}

impl LossConfig {
    pub const DEFAULT_MARGIN: f64 = 0.5;

    pub fn cross_entropy() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            class_weights: None,
            margin: Self::DEFAULT_MARGIN,
        }
    }

    pub fn weighted_cross_entropy(class_weights: Vec<f64>) -> Result<Self, ModelError> {
        let cfg = Self {
            kind: LossKind::WeightedCrossEntropy,
            class_weights: Some(class_weights),
            margin: Self::DEFAULT_MARGIN,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn triplet(margin: f64) -> Result<Self, ModelError> {
        let cfg = Self {
            kind: LossKind::TripletMargin,
            class_weights: None,
            margin,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(w) = &self.class_weights {
            if w.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(ModelError::ClassWeights("weights must be positive".into()));
            }
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(ModelError::InvalidArgument("margin must be >= 0".into()));
        }
        Ok(())
    }

    /// Per-class weight; 1.0 unless weighted cross-entropy is configured.
    pub(crate) fn weight_for(&self, label: usize) -> Result<f64, ModelError> {
        match (&self.kind, &self.class_weights) {
            (LossKind::WeightedCrossEntropy, Some(w)) => {
                w.get(label).copied().ok_or(ModelError::ClassWeights(format!(
                    "no weight for class {label} ({} weights given)",
                    w.len()
                )))
            }
            (LossKind::WeightedCrossEntropy, None) => {
                Err(ModelError::ClassWeights("weighted loss without weights".into()))
            }
            _ => Ok(1.0),
        }
    }
}

/// Inverse-frequency weights `N / (C · N_c)` from local labels. Classes not
/// seen locally receive the largest observed weight.
pub fn inverse_frequency_weights(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l < num_classes {
            counts[l] += 1;
        }
    }
    let total = counts.iter().sum::<usize>() as f64;
    let observed: Vec<Option<f64>> = counts
        .iter()
        .map(|&n| (n > 0).then(|| total / (num_classes as f64 * n as f64)))
        .collect();
    let max = observed
        .iter()
        .flatten()
        .copied()
        .fold(f64::NAN, f64::max);
    let fallback = if max.is_nan() { 1.0 } else { max };
    observed.into_iter().map(|w| w.unwrap_or(fallback)).collect()
}

/// Raw input triple for metric learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Training data handed to [`Model::loss_and_gradient`].
#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Labeled {
        inputs: Vec<Vec<f64>>,
        labels: Vec<usize>,
    },
    Triplets(Vec<Triplet>),
}

impl Batch {
    pub fn len(&self) -> usize {
        match self {
            Batch::Labeled { inputs, .. } => inputs.len(),
            Batch::Triplets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Training contract shared by every trainable model.
pub trait Model: Send + Sync {
    fn num_params(&self) -> usize;

    fn params(&self) -> ParameterVector;

    fn set_params(&mut self, params: &ParameterVector) -> Result<(), ModelError>;

    /// Mean loss over the batch and its gradient, evaluated at `params`
    /// rather than the stored weights.
    fn loss_and_gradient_at(
        &self,
        params: &[f64],
        batch: &Batch,
        loss: &LossConfig,
    ) -> Result<(f64, Vec<f64>), ModelError>;

    fn loss_and_gradient(&self, batch: &Batch, loss: &LossConfig) -> Result<(f64, Vec<f64>), ModelError> {
        self.loss_and_gradient_at(self.params().as_slice(), batch, loss)
    }

    /// Class probabilities for one input vector.
    fn predict_proba(&self, input: &[f64]) -> Vec<f64>;
}

/// Models that map an input to a unit-norm embedding.
pub trait Embedder {
    fn embed(&self, input: &[f64]) -> Vec<f64>;
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
