use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{dot, l2_norm, softmax_in_place, Batch, Embedder, LossConfig, LossKind, Model, ModelError};
use crate::aggregation::ParameterVector;

/// Triplet margin loss on unit embeddings with cosine distance
/// `d(x, y) = 1 - cos(x, y)`: `max(0, d(a, p) - d(a, n) + margin)`.
pub fn triplet_margin_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let d_ap = 1.0 - dot(anchor, positive);
    let d_an = 1.0 - dot(anchor, negative);
    (d_ap - d_an + margin).max(0.0)
}

/// Linear projection followed by L2 normalization, with an auxiliary linear
/// classification head on the embedding.
///
/// Parameter layout: projection `E x D`, head `C x E`, head bias `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    input_dim: usize,
    embed_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

struct Projection {
    unit: Vec<f64>,
    norm: f64,
}

impl EmbeddingNet {
    pub const DEFAULT_EMBED_DIM: usize = 16;

    /// Gaussian projection with variance `1 / input_dim`, zero head.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        embed_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        if input_dim == 0 || embed_dim == 0 || num_classes < 2 {
            return Err(ModelError::InvalidArgument(
                "embedding net needs positive dimensions and at least 2 classes".into(),
            ));
        }
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("valid std");
        let mut params: Vec<f64> = (0..embed_dim * input_dim).map(|_| normal.sample(rng)).collect();
        params.resize(params.len() + num_classes * (embed_dim + 1), 0.0);
        Ok(Self {
            input_dim,
            embed_dim,
            num_classes,
            params,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn head_offset(&self) -> usize {
        self.embed_dim * self.input_dim
    }

    fn project(&self, params: &[f64], x: &[f64]) -> Projection {
        let w = &params[..self.head_offset()];
        let z: Vec<f64> = w.chunks(self.input_dim).map(|row| dot(row, x)).collect();
        let norm = l2_norm(&z);
        if norm < 1e-300 {
            // degenerate direction: pin to the first axis, no gradient flows
            let mut unit = vec![0.0; self.embed_dim];
            unit[0] = 1.0;
            return Projection { unit, norm: 0.0 };
        }
        Projection {
            unit: z.iter().map(|v| v / norm).collect(),
            norm,
        }
    }

    fn head_logits(&self, params: &[f64], e: &[f64]) -> Vec<f64> {
        let off = self.head_offset();
        let h = &params[off..off + self.num_classes * self.embed_dim];
        let b = &params[off + self.num_classes * self.embed_dim..];
        h.chunks(self.embed_dim).zip(b).map(|(row, bias)| bias + dot(row, e)).collect()
    }

    /// Backpropagates `de` (gradient w.r.t. the unit embedding) into the
    /// projection block of `grad`.
    fn backprop_projection(&self, proj: &Projection, de: &[f64], x: &[f64], grad: &mut [f64]) {
        if proj.norm == 0.0 {
            return;
        }
        let radial = dot(&proj.unit, de);
        for (k, (ek, dek)) in proj.unit.iter().zip(de).enumerate() {
            let dz = (dek - ek * radial) / proj.norm;
            for (g, xi) in grad[k * self.input_dim..(k + 1) * self.input_dim].iter_mut().zip(x) {
                *g += dz * xi;
            }
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::InputDim {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn classification_loss(
        &self,
        params: &[f64],
        inputs: &[Vec<f64>],
        labels: &[usize],
        loss: &LossConfig,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let n = inputs.len() as f64;
        let c = self.num_classes;
        let e_dim = self.embed_dim;
        let off = self.head_offset();
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            self.check_input(x)?;
            if y >= c {
                return Err(ModelError::Label { label: y, num_classes: c });
            }
            let weight = loss.weight_for(y)?;
            let proj = self.project(params, x);
            let mut p = self.head_logits(params, &proj.unit);
            softmax_in_place(&mut p);
            total += -weight * p[y].max(f64::MIN_POSITIVE).ln();
            let mut de = vec![0.0; e_dim];
            for k in 0..c {
                let dlogit = weight * (p[k] - f64::from(u8::from(k == y))) / n;
                let row = off + k * e_dim;
                for j in 0..e_dim {
                    grad[row + j] += dlogit * proj.unit[j];
                    de[j] += dlogit * params[row + j];
                }
                grad[off + c * e_dim + k] += dlogit;
            }
            self.backprop_projection(&proj, &de, x, &mut grad);
        }
        Ok((total / n, grad))
    }

    fn triplet_loss(
        &self,
        params: &[f64],
        triplets: &[super::Triplet],
        margin: f64,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let n = triplets.len() as f64;
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        for t in triplets {
            for x in [&t.anchor, &t.positive, &t.negative] {
                self.check_input(x)?;
            }
            let a = self.project(params, &t.anchor);
            let p = self.project(params, &t.positive);
            let neg = self.project(params, &t.negative);
            let value = triplet_margin_loss(&a.unit, &p.unit, &neg.unit, margin);
            total += value;
            if value > 0.0 {
                // L = a·n - a·p + margin
                let da: Vec<f64> = neg.unit.iter().zip(&p.unit).map(|(x, y)| (x - y) / n).collect();
                let dp: Vec<f64> = a.unit.iter().map(|v| -v / n).collect();
                let dn: Vec<f64> = a.unit.iter().map(|v| v / n).collect();
                self.backprop_projection(&a, &da, &t.anchor, &mut grad);
                self.backprop_projection(&p, &dp, &t.positive, &mut grad);
                self.backprop_projection(&neg, &dn, &t.negative, &mut grad);
            }
        }
        Ok((total / n, grad))
    }
}

impl Embedder for EmbeddingNet {
    fn embed(&self, input: &[f64]) -> Vec<f64> {
        self.project(&self.params, input).unit
    }
}

impl Model for EmbeddingNet {
    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn params(&self) -> ParameterVector {
        ParameterVector::new(self.params.clone()).expect("model parameters are finite")
    }

    fn set_params(&mut self, params: &ParameterVector) -> Result<(), ModelError> {
        if params.dimension() != self.params.len() {
            return Err(ModelError::ParamCount {
                expected: self.params.len(),
                got: params.dimension(),
            });
        }
        self.params.copy_from_slice(params.as_slice());
        Ok(())
    }

    fn loss_and_gradient_at(
        &self,
        params: &[f64],
        batch: &Batch,
        loss: &LossConfig,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::ParamCount {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        match (batch, loss.kind) {
            (Batch::Triplets(t), LossKind::TripletMargin) => self.triplet_loss(params, t, loss.margin),
            (Batch::Labeled { inputs, labels }, LossKind::CrossEntropy | LossKind::WeightedCrossEntropy) => {
                self.classification_loss(params, inputs, labels, loss)
            }
            (_, kind) => Err(ModelError::IncompatibleLoss {
                model: "embedding net",
                loss: kind.name(),
            }),
        }
    }

    fn predict_proba(&self, input: &[f64]) -> Vec<f64> {
        let e = self.embed(input);
        let mut p = self.head_logits(&self.params, &e);
        softmax_in_place(&mut p);
        p
    }
}
