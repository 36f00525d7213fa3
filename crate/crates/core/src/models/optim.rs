//! Client-side optimizers used during local training.

use serde::{Deserialize, Serialize};

use super::{Batch, LossConfig, Model, ModelError};
use crate::aggregation::{sam_step, ParameterVector, SamConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    /// Sharpness-aware SGD; the step size is the training learning rate.
    Sam { rho: f64, adaptive: bool },
}

/// Adam moments for one local training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(dimension: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; dimension],
            v: vec![0.0; dimension],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let b1 = 1.0 - self.beta1.powi(self.step);
        let b2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / b1) / ((self.v[i] / b2).sqrt() + self.epsilon);
        }
    }
}

/// Stateful optimizer bound to one model's parameter count.
#[derive(Debug, Clone)]
pub enum LocalOptimizer {
    Sgd,
    Adam(Adam),
    Sam { rho: f64, adaptive: bool },
}

impl LocalOptimizer {
    pub fn new(kind: OptimizerKind, dimension: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::Sgd,
            OptimizerKind::Adam => Self::Adam(Adam::new(dimension)),
            OptimizerKind::Sam { rho, adaptive } => Self::Sam { rho, adaptive },
        }
    }

    /// One step on `batch`; returns the batch loss at the pre-step weights.
    pub fn step<M: Model + ?Sized>(
        &mut self,
        model: &mut M,
        batch: &Batch,
        loss: &LossConfig,
        lr: f64,
    ) -> Result<f64, ModelError> {
        let params = model.params();
        let (value, grad) = model.loss_and_gradient_at(params.as_slice(), batch, loss)?;
        if lr == 0.0 {
            return Ok(value);
        }
        let next = match self {
            Self::Sgd => ParameterVector::new(
                params
                    .as_slice()
                    .iter()
                    .zip(&grad)
                    .map(|(w, g)| w - lr * g)
                    .collect(),
            )?,
            Self::Adam(adam) => {
                let mut p = params.into_inner();
                adam.update(&mut p, &grad, lr);
                ParameterVector::new(p)?
            }
            Self::Sam { rho, adaptive } => {
                let cfg = SamConfig::new(*rho, *adaptive, lr)?;
                let failure = std::cell::RefCell::new(None);
                let first = std::cell::Cell::new(Some(grad));
                let next = sam_step(
                    |w| {
                        if let Some(g) = first.take() {
                            return g;
                        }
                        match model.loss_and_gradient_at(w, batch, loss) {
                            Ok((_, g)) => g,
                            Err(e) => {
                                failure.borrow_mut().get_or_insert(e);
                                vec![0.0; w.len()]
                            }
                        }
                    },
                    &params,
                    &cfg,
                );
                if let Some(e) = failure.into_inner() {
                    return Err(e);
                }
                next?
            }
        };
        model.set_params(&next)?;
        Ok(value)
    }
}
