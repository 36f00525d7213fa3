use super::{softmax_in_place, Batch, LossConfig, LossKind, Model, ModelError};
use crate::aggregation::ParameterVector;

/// Linear map followed by softmax. Parameters are the `C x D` weight
/// matrix in row-major order followed by the `C` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    input_dim: usize,
    num_classes: usize,
    params: Vec<f64>,
}

impl SoftmaxHead {
    /// Zero-initialized head, so the first prediction is uniform.
    pub fn new(input_dim: usize, num_classes: usize) -> Result<Self, ModelError> {
        if input_dim == 0 || num_classes < 2 {
            return Err(ModelError::InvalidArgument(
                "softmax head needs input_dim >= 1 and at least 2 classes".into(),
            ));
        }
        Ok(Self {
            input_dim,
            num_classes,
            params: vec![0.0; num_classes * (input_dim + 1)],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn logits(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let (w, b) = params.split_at(self.num_classes * self.input_dim);
        w.chunks(self.input_dim)
            .zip(b)
            .map(|(row, bias)| bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
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
}

impl Model for SoftmaxHead {
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
        let (inputs, labels) = match (batch, loss.kind) {
            (_, LossKind::TripletMargin) | (Batch::Triplets(_), _) => {
                return Err(ModelError::IncompatibleLoss {
                    model: "softmax head",
                    loss: LossKind::TripletMargin.name(),
                })
            }
            (Batch::Labeled { inputs, labels }, _) => (inputs, labels),
        };
        if inputs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let n = inputs.len() as f64;
        let c = self.num_classes;
        let d = self.input_dim;
        let mut grad = vec![0.0; params.len()];
        let mut total = 0.0;
        for (x, &y) in inputs.iter().zip(labels) {
            self.check_input(x)?;
            if y >= c {
                return Err(ModelError::Label {
                    label: y,
                    num_classes: c,
                });
            }
            let weight = loss.weight_for(y)?;
            let mut p = self.logits(params, x);
            softmax_in_place(&mut p);
            total += -weight * p[y].max(f64::MIN_POSITIVE).ln();
            for k in 0..c {
                let dz = weight * (p[k] - f64::from(u8::from(k == y))) / n;
                for (g, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *g += dz * xi;
                }
                grad[c * d + k] += dz;
            }
        }
        Ok((total / n, grad))
    }

    fn predict_proba(&self, input: &[f64]) -> Vec<f64> {
        let mut p = self.logits(&self.params, input);
        softmax_in_place(&mut p);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::super::testing::{finite_difference, relative_error};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, c: usize) -> Batch {
        Batch::Labeled {
            inputs: (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
            labels: (0..n).map(|_| rng.random_range(0..c)).collect(),
        }
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let head = SoftmaxHead::new(4, 6).unwrap();
        let p = head.predict_proba(&[1.0, -3.0, 2.0, 0.5]);
        assert!(p.iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let head = SoftmaxHead::new(5, 4).unwrap();
        for trial in 0..20 {
            let params: Vec<f64> = (0..head.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let batch = random_batch(&mut rng, 7, 5, 4);
            let loss = if trial % 2 == 0 {
                LossConfig::cross_entropy()
            } else {
                LossConfig::weighted_cross_entropy(vec![0.5, 2.0, 1.0, 3.0]).unwrap()
            };
            let (_, analytic) = head.loss_and_gradient_at(&params, &batch, &loss).unwrap();
            let numeric = finite_difference(&head, &params, &batch, &loss, 1e-5);
            assert!(relative_error(&analytic, &numeric) < 1e-5);
        }
    }

    #[test]
    fn weighted_loss_on_single_sample() {
        let mut head = SoftmaxHead::new(2, 3).unwrap();
        head.set_params(&ParameterVector::new(vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2, 0.0, 0.1, -0.1]).unwrap())
            .unwrap();
        let x = vec![1.0, 2.0];
        let weights = vec![3.0, 0.5, 1.5];
        let batch = Batch::Labeled {
            inputs: vec![x.clone()],
            labels: vec![2],
        };
        let loss = LossConfig::weighted_cross_entropy(weights.clone()).unwrap();
        let (value, _) = head.loss_and_gradient(&batch, &loss).unwrap();
        let p = head.predict_proba(&x);
        assert!((value - weights[2] * -p[2].ln()).abs() < 1e-14);
    }

    #[test]
    fn rejects_triplets_and_bad_shapes() {
        let head = SoftmaxHead::new(2, 3).unwrap();
        let triplet = LossConfig::triplet(0.5).unwrap();
        let batch = Batch::Labeled {
            inputs: vec![vec![1.0, 1.0]],
            labels: vec![0],
        };
        assert!(matches!(
            head.loss_and_gradient(&batch, &triplet),
            Err(ModelError::IncompatibleLoss { .. })
        ));
        let bad = Batch::Labeled {
            inputs: vec![vec![1.0]],
            labels: vec![0],
        };
        assert!(head.loss_and_gradient(&bad, &LossConfig::cross_entropy()).is_err());
        let bad_label = Batch::Labeled {
            inputs: vec![vec![1.0, 0.0]],
            labels: vec![3],
        };
        assert!(head.loss_and_gradient(&bad_label, &LossConfig::cross_entropy()).is_err());
    }
}
