//! Video-level decision rules.

use serde::{Deserialize, Serialize};

use super::{dot, l2_norm, ModelError};

/// Index of the largest value; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Majority vote over per-frame argmaxes.
///
/// A count tie is broken by the mean max-probability of each tied class's
/// supporting frames; a remaining tie goes to the lower class index.
pub fn majority_vote(frame_probs: &[Vec<f64>]) -> Result<usize, ModelError> {
    let classes = frame_probs
        .first()
        .map(Vec::len)
        .ok_or_else(|| ModelError::InvalidArgument("majority vote over zero frames".into()))?;
    let mut votes = vec![0usize; classes];
    let mut confidence = vec![0.0f64; classes];
    for p in frame_probs {
        if p.len() != classes {
            return Err(ModelError::InvalidArgument("frames disagree on class count".into()));
        }
        let c = argmax(p);
        votes[c] += 1;
        confidence[c] += p[c];
    }
    let top = *votes.iter().max().expect("non-empty");
    let mut best: Option<(usize, f64)> = None;
    for c in (0..classes).filter(|&c| votes[c] == top) {
        let mean_conf = confidence[c] / votes[c] as f64;
        if best.is_none_or(|(_, b)| mean_conf > b) {
            best = Some((c, mean_conf));
        }
    }
    Ok(best.expect("at least one class has the top count").0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeMode {
    /// Cosine similarity to each class's re-normalized mean embedding.
    #[default]
    Prototype,
    /// Mean cosine distance to every member of each class.
    PerSample,
}

/// Labeled unit-norm embeddings, grouped by class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupportSet {
    per_class: Vec<Vec<Vec<f64>>>,
}

impl SupportSet {
    const UNIT_TOL: f64 = 1e-9;

    pub fn new(per_class: Vec<Vec<Vec<f64>>>) -> Result<Self, ModelError> {
        if per_class.iter().all(Vec::is_empty) {
            return Err(ModelError::InvalidArgument("support set has no embeddings".into()));
        }
        for (c, members) in per_class.iter().enumerate() {
            for e in members {
                if (l2_norm(e) - 1.0).abs() > Self::UNIT_TOL {
                    return Err(ModelError::InvalidArgument(format!(
                        "support embedding for class {c} is not unit-norm"
                    )));
                }
            }
        }
        Ok(Self { per_class })
    }

    /// Groups `(embedding, label)` pairs into a support set with `num_classes` slots.
    pub fn from_labeled(
        items: impl IntoIterator<Item = (Vec<f64>, usize)>,
        num_classes: usize,
    ) -> Result<Self, ModelError> {
        let mut per_class = vec![Vec::new(); num_classes];
        for (e, label) in items {
            let slot = per_class.get_mut(label).ok_or(ModelError::Label {
                label,
                num_classes,
            })?;
            slot.push(e);
        }
        Self::new(per_class)
    }

    pub fn class(&self, c: usize) -> &[Vec<f64>] {
        &self.per_class[c]
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }
}

/// Nearest-class decision in embedding space. Empty classes are skipped and
/// ties resolve to the lower class index.
pub fn prototype_classify(query: &[f64], support: &SupportSet, mode: PrototypeMode) -> Result<usize, ModelError> {
    let mut best: Option<(usize, f64)> = None;
    for (c, members) in support.per_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        // higher score is better
        let score = match mode {
            PrototypeMode::Prototype => {
                let mut mean = vec![0.0; query.len()];
                for e in members {
                    for (m, v) in mean.iter_mut().zip(e) {
                        *m += v;
                    }
                }
                let norm = l2_norm(&mean);
                if norm == 0.0 {
                    0.0
                } else {
                    dot(&mean, query) / norm
                }
            }
            PrototypeMode::PerSample => {
                let mean_dist = members.iter().map(|e| 1.0 - dot(e, query)).sum::<f64>() / members.len() as f64;
                -mean_dist
            }
        };
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((c, score));
        }
    }
    best.map(|(c, _)| c)
        .ok_or_else(|| ModelError::InvalidArgument("all support classes are empty".into()))
}
