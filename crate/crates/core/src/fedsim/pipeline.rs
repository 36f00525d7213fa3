//! Model construction, frame selection and video-level prediction for a
//! pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InferenceSpec, ModelSpec};
use crate::aggregation::ParameterVector;
use crate::models::{
    argmax, majority_vote, prototype_classify, sample_indices_equidistant, sample_indices_hybrid,
    select_frames_by_similarity, Batch, Embedder, EmbeddingNet, LossConfig, Model, ModelError, SoftmaxHead,
    SupportSet, VideoInstance,
};

/// Frame counts are given for 200-frame videos and scaled to the actual
/// length, so the same pipeline runs on short desk-scale videos.
pub const REFERENCE_LENGTH: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerSpec {
    /// `k` frames, two thirds from a window around the keyframe.
    Hybrid { k: usize, halfwidth: usize, center_bias: f64 },
    Equidistant { k: usize },
    /// The keyframe plus the `k - 1` frames closest to it in embedding space.
    Similarity { k: usize },
}

impl SamplerSpec {
    pub(crate) fn validate(&self) -> Result<(), String> {
        let k = match *self {
            SamplerSpec::Hybrid { k, center_bias, .. } => {
                if !(0.0..=1.0).contains(&center_bias) {
                    return Err("center_bias must lie in [0, 1]".into());
                }
                k
            }
            SamplerSpec::Equidistant { k } | SamplerSpec::Similarity { k } => k,
        };
        if k == 0 {
            return Err("sampler k must be at least 1".into());
        }
        Ok(())
    }

    /// Scales frame counts from [`REFERENCE_LENGTH`] to `seq_len`.
    pub fn resolve(&self, seq_len: usize) -> Result<ResolvedSampler, ModelError> {
        if seq_len == 0 {
            return Err(ModelError::InvalidArgument("videos have no frames".into()));
        }
        let scale = |x: usize| ((x * seq_len) as f64 / REFERENCE_LENGTH as f64).round() as usize;
        let count = |k: usize| scale(k).clamp(1, seq_len);
        Ok(match *self {
            SamplerSpec::Hybrid {
                k,
                halfwidth,
                center_bias,
            } => {
                let mid = seq_len / 2;
                ResolvedSampler::Hybrid {
                    k: count(k),
                    halfwidth: scale(halfwidth).min(mid).min(seq_len - 1 - mid),
                    center_bias,
                }
            }
            SamplerSpec::Equidistant { k } => {
                ResolvedSampler::Equidistant(sample_indices_equidistant(seq_len, count(k))?)
            }
            SamplerSpec::Similarity { k } => ResolvedSampler::Similarity { k: count(k) },
        })
    }
}

/// A sampler bound to one video length.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedSampler {
    Hybrid { k: usize, halfwidth: usize, center_bias: f64 },
    Equidistant(Vec<usize>),
    Similarity { k: usize },
}

impl ResolvedSampler {
    pub fn indices<R: Rng + ?Sized>(
        &self,
        video: &VideoInstance,
        model: &PipelineModel,
        rng: &mut R,
    ) -> Result<Vec<usize>, ModelError> {
        match self {
            ResolvedSampler::Hybrid {
                k,
                halfwidth,
                center_bias,
            } => sample_indices_hybrid(video.len(), *k, *halfwidth, *center_bias, rng),
            ResolvedSampler::Equidistant(idx) => Ok(idx.clone()),
            ResolvedSampler::Similarity { k } => match model {
                PipelineModel::Embedding(net) => select_frames_by_similarity(video, net, *k),
                PipelineModel::Softmax(_) => Err(ModelError::InvalidArgument(
                    "similarity selection needs an embedding model".into(),
                )),
            },
        }
    }
}

/// The trainable model behind a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum PipelineModel {
    Softmax(SoftmaxHead),
    Embedding(EmbeddingNet),
}

impl PipelineModel {
    pub fn build<R: Rng + ?Sized>(
        spec: ModelSpec,
        input_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        Ok(match spec {
            ModelSpec::Softmax => PipelineModel::Softmax(SoftmaxHead::new(input_dim, num_classes)?),
            ModelSpec::Embedding { embed_dim } => {
                PipelineModel::Embedding(EmbeddingNet::new(input_dim, embed_dim, num_classes, rng)?)
            }
        })
    }

    pub fn embedder(&self) -> Option<&EmbeddingNet> {
        match self {
            PipelineModel::Embedding(net) => Some(net),
            PipelineModel::Softmax(_) => None,
        }
    }
}

impl Model for PipelineModel {
    fn num_params(&self) -> usize {
        match self {
            PipelineModel::Softmax(m) => m.num_params(),
            PipelineModel::Embedding(m) => m.num_params(),
        }
    }

    fn params(&self) -> ParameterVector {
        match self {
            PipelineModel::Softmax(m) => m.params(),
            PipelineModel::Embedding(m) => m.params(),
        }
    }

    fn set_params(&mut self, params: &ParameterVector) -> Result<(), ModelError> {
        match self {
            PipelineModel::Softmax(m) => m.set_params(params),
            PipelineModel::Embedding(m) => m.set_params(params),
        }
    }

    fn loss_and_gradient_at(&self, params: &[f64], batch: &Batch, loss: &LossConfig) -> Result<(f64, Vec<f64>), ModelError> {
        match self {
            PipelineModel::Softmax(m) => m.loss_and_gradient_at(params, batch, loss),
            PipelineModel::Embedding(m) => m.loss_and_gradient_at(params, batch, loss),
        }
    }

    fn predict_proba(&self, input: &[f64]) -> Vec<f64> {
        match self {
            PipelineModel::Softmax(m) => m.predict_proba(input),
            PipelineModel::Embedding(m) => m.predict_proba(input),
        }
    }
}

/// 64-bit FNV-1a, used to turn labels into RNG stream ids.
fn fnv1a(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Independent generator for a named purpose under the master seed.
pub(crate) fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label));
    rng
}

/// Model inputs for one video: a single pooled vector, or one vector per
/// selected frame when the pipeline votes over frames.
pub(crate) fn video_inputs<R: Rng + ?Sized>(
    sampler: &ResolvedSampler,
    per_frame: bool,
    video: &VideoInstance,
    model: &PipelineModel,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let idx = sampler.indices(video, model, rng)?;
    Ok(if per_frame {
        idx.iter().map(|&i| video.frames[i].clone()).collect()
    } else {
        vec![video.pooled(&idx)]
    })
}

/// Everything needed to turn a video into a class prediction.
pub(crate) struct Predictor<'a> {
    pub inference: InferenceSpec,
    pub sampler: &'a ResolvedSampler,
    pub model: &'a PipelineModel,
    pub support: Option<SupportSet>,
    pub seed: u64,
}

impl<'a> Predictor<'a> {
    /// Builds the support set from `support_videos` when inference needs one.
    pub fn new(
        inference: InferenceSpec,
        sampler: &'a ResolvedSampler,
        model: &'a PipelineModel,
        support_videos: &[&VideoInstance],
        num_classes: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        let support = match (inference, model.embedder()) {
            (InferenceSpec::Prototype { .. }, Some(net)) => {
                let mut items = Vec::with_capacity(support_videos.len());
                for v in support_videos {
                    let input = eval_inputs(sampler, false, v, model, seed)?.remove(0);
                    items.push((net.embed(&input), v.label));
                }
                Some(SupportSet::from_labeled(items, num_classes)?)
            }
            (InferenceSpec::Prototype { .. }, None) => {
                return Err(ModelError::InvalidArgument("prototype inference needs an embedding model".into()))
            }
            _ => None,
        };
        Ok(Self {
            inference,
            sampler,
            model,
            support,
            seed,
        })
    }

    pub fn predict(&self, video: &VideoInstance) -> Result<usize, ModelError> {
        let per_frame = matches!(self.inference, InferenceSpec::MajorityVote);
        let inputs = eval_inputs(self.sampler, per_frame, video, self.model, self.seed)?;
        match self.inference {
            InferenceSpec::Direct => Ok(argmax(&self.model.predict_proba(&inputs[0]))),
            InferenceSpec::MajorityVote => {
                let probs: Vec<Vec<f64>> = inputs.iter().map(|x| self.model.predict_proba(x)).collect();
                majority_vote(&probs)
            }
            InferenceSpec::Prototype { mode } => {
                let net = self.model.embedder().expect("checked in new");
                let support = self.support.as_ref().expect("built in new");
                prototype_classify(&net.embed(&inputs[0]), support, mode)
            }
        }
    }
}

/// Evaluation-time inputs: random samplers draw from a stream keyed by the
/// case id, so a case is always seen through the same frames.
fn eval_inputs(
    sampler: &ResolvedSampler,
    per_frame: bool,
    video: &VideoInstance,
    model: &PipelineModel,
    seed: u64,
) -> Result<Vec<Vec<f64>>, ModelError> {
    let mut rng = stream_rng(seed, &format!("eval/{}/{}", video.center_id, video.case_id));
    video_inputs(sampler, per_frame, video, model, &mut rng)
}
