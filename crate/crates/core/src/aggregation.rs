//! Federated optimization primitives.
//!
//! Server side: example-weighted averaging, coordinate-wise median and an
//! adaptive server optimizer over the pseudo-gradient. Client side: a
//! sharpness-aware minimization step with optional adaptive scaling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("no client updates to aggregate")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter vector must be non-empty")]
    ZeroDimension,
    #[error("non-finite parameter at coordinate {0}")]
    NonFinite(usize),
    #[error("client update `{0}` reports zero examples")]
    NoExamples(String),
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
}

/// Flat vector of model weights, the unit of aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self, AggregationError> {
        if values.is_empty() {
            return Err(AggregationError::ZeroDimension);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AggregationError::NonFinite(i));
        }
        Ok(Self(values))
    }

    pub fn zeros(dimension: usize) -> Result<Self, AggregationError> {
        Self::new(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    fn check_same_dimension(&self, other: &Self) -> Result<(), AggregationError> {
        if self.dimension() != other.dimension() {
            return Err(AggregationError::DimensionMismatch {
                expected: self.dimension(),
                got: other.dimension(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = AggregationError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.0
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// What one client sends to the server after a round of local training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: String,
    pub params: ParameterVector,
    pub num_examples: usize,
    /// Validation macro-F1 of the submitted checkpoint.
    pub local_best_score: f64,
}

impl ClientUpdate {
    pub fn new(
        client_id: impl Into<String>,
        params: ParameterVector,
        num_examples: usize,
        local_best_score: f64,
    ) -> Result<Self, AggregationError> {
        let client_id = client_id.into();
        if num_examples == 0 {
            return Err(AggregationError::NoExamples(client_id));
        }
        Ok(Self {
            client_id,
            params,
            num_examples,
            local_best_score,
        })
    }
}

fn common_dimension(updates: &[ClientUpdate]) -> Result<usize, AggregationError> {
    let first = updates.first().ok_or(AggregationError::Empty)?;
    let dim = first.params.dimension();
    for u in &updates[1..] {
        if u.params.dimension() != dim {
            return Err(AggregationError::DimensionMismatch {
                expected: dim,
                got: u.params.dimension(),
            });
        }
    }
    Ok(dim)
}

/// Coordinate-wise mean weighted by each client's example count.
pub fn fed_avg(updates: &[ClientUpdate]) -> Result<ParameterVector, AggregationError> {
    let dim = common_dimension(updates)?;
    let total: f64 = updates.iter().map(|u| u.num_examples as f64).sum();
    let mut out = vec![0.0; dim];
    for u in updates {
        let w = u.num_examples as f64 / total;
        for (o, v) in out.iter_mut().zip(u.params.as_slice()) {
            *o += w * v;
        }
    }
    // Rounding in the weighted sum can step outside the hull by an ulp.
    for (d, o) in out.iter_mut().enumerate() {
        let (lo, hi) = updates.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| {
            let v = u.params.as_slice()[d];
            (lo.min(v), hi.max(v))
        });
        *o = o.clamp(lo, hi);
    }
    ParameterVector::new(out)
}

/// Coordinate-wise median; even counts take the mean of the two middle
/// values. Example counts are ignored.
pub fn fed_median(updates: &[ClientUpdate]) -> Result<ParameterVector, AggregationError> {
    let dim = common_dimension(updates)?;
    let mut column = Vec::with_capacity(updates.len());
    let out = (0..dim)
        .map(|d| {
            column.clear();
            column.extend(updates.iter().map(|u| u.params.as_slice()[d]));
            column.sort_by(f64::total_cmp);
            let mid = column.len() / 2;
            if column.len() % 2 == 0 {
                column[mid - 1] + (column[mid] - column[mid - 1]) / 2.0
            } else {
                column[mid]
            }
        })
        .collect();
    ParameterVector::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServerOptMode {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerOptConfig {
    pub server_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub mode: ServerOptMode,
}

impl Default for ServerOptConfig {
    fn default() -> Self {
        Self {
            server_lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            mode: ServerOptMode::Adam,
        }
    }
}

impl ServerOptConfig {
    pub fn validate(&self) -> Result<(), AggregationError> {
        let bad = |what: &str| Err(AggregationError::InvalidConfig(what.to_string()));
        if !(self.server_lr.is_finite() && self.server_lr >= 0.0) {
            return bad("server_lr must be a finite non-negative number");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }
}

/// Server optimizer state carried between rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerOptState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub hyperparams: ServerOptConfig,
}

impl ServerOptState {
    pub fn new(dimension: usize, hyperparams: ServerOptConfig) -> Result<Self, AggregationError> {
        hyperparams.validate()?;
        if dimension == 0 {
            return Err(AggregationError::ZeroDimension);
        }
        Ok(Self {
            step_count: 0,
            first_moment: vec![0.0; dimension],
            second_moment: vec![0.0; dimension],
            hyperparams,
        })
    }
}

/// One server optimizer step on the pseudo-gradient `global - aggregated`.
///
/// The input state is left untouched; the advanced state is returned.
pub fn fed_opt_apply(
    state: &ServerOptState,
    global: &ParameterVector,
    aggregated: &ParameterVector,
) -> Result<(ParameterVector, ServerOptState), AggregationError> {
    global.check_same_dimension(aggregated)?;
    if state.first_moment.len() != global.dimension() {
        return Err(AggregationError::DimensionMismatch {
            expected: state.first_moment.len(),
            got: global.dimension(),
        });
    }
    let hp = state.hyperparams;
    let mut next = state.clone();
    next.step_count += 1;
    let g = global.as_slice();
    let a = aggregated.as_slice();

    let new_global: Vec<f64> = match hp.mode {
        ServerOptMode::Sgd => g
            .iter()
            .zip(a)
            .map(|(&gi, &ai)| {
                // unit step is plain replacement; keep it exact
                if hp.server_lr == 1.0 {
                    ai
                } else {
                    gi - hp.server_lr * (gi - ai)
                }
            })
            .collect(),
        ServerOptMode::Adam => {
            let t = next.step_count as i32;
            let bias1 = 1.0 - hp.beta1.powi(t);
            let bias2 = 1.0 - hp.beta2.powi(t);
            (0..g.len())
                .map(|d| {
                    let delta = g[d] - a[d];
                    let m = hp.beta1 * state.first_moment[d] + (1.0 - hp.beta1) * delta;
                    let v = hp.beta2 * state.second_moment[d] + (1.0 - hp.beta2) * delta * delta;
                    next.first_moment[d] = m;
                    next.second_moment[d] = v;
                    let m_hat = m / bias1;
                    let v_hat = v / bias2;
                    g[d] - hp.server_lr * m_hat / (v_hat.sqrt() + hp.epsilon)
                })
                .collect()
        }
    };
    Ok((ParameterVector::new(new_global)?, next))
}

/// Perturbation radius, adaptivity and base step size for [`sam_step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamConfig {
    pub rho: f64,
    pub adaptive: bool,
    pub base_lr: f64,
}

impl SamConfig {
    pub fn new(rho: f64, adaptive: bool, base_lr: f64) -> Result<Self, AggregationError> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(AggregationError::InvalidConfig("rho must be positive".into()));
        }
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(AggregationError::InvalidConfig("base_lr must be positive".into()));
        }
        Ok(Self {
            rho,
            adaptive,
            base_lr,
        })
    }
}

/// The ascent perturbation `ε` used by SAM at `w` with gradient `g`.
///
/// Non-adaptive: `ρ·g/‖g‖`. Adaptive: `ρ·(w²⊙g)/‖|w|⊙g‖`. A zero
/// normalizer yields a zero perturbation.
pub fn sam_perturbation(w: &[f64], g: &[f64], rho: f64, adaptive: bool) -> Vec<f64> {
    let (scaled, norm): (Vec<f64>, f64) = if adaptive {
        let norm = w
            .iter()
            .zip(g)
            .map(|(wi, gi)| (wi.abs() * gi).powi(2))
            .sum::<f64>()
            .sqrt();
        (w.iter().zip(g).map(|(wi, gi)| wi * wi * gi).collect(), norm)
    } else {
        (g.to_vec(), g.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    if norm == 0.0 || !norm.is_finite() {
        return vec![0.0; w.len()];
    }
    scaled.into_iter().map(|s| rho * s / norm).collect()
}

/// One sharpness-aware step: gradient at `w + ε`, applied at `w`.
pub fn sam_step<F>(gradient_fn: F, w: &ParameterVector, cfg: &SamConfig) -> Result<ParameterVector, AggregationError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let ws = w.as_slice();
    let g = gradient_fn(ws);
    if g.len() != ws.len() {
        return Err(AggregationError::DimensionMismatch {
            expected: ws.len(),
            got: g.len(),
        });
    }
    let eps = sam_perturbation(ws, &g, cfg.rho, cfg.adaptive);
    let perturbed: Vec<f64> = ws.iter().zip(&eps).map(|(a, b)| a + b).collect();
    let g_sharp = gradient_fn(&perturbed);
    if g_sharp.len() != ws.len() {
        return Err(AggregationError::DimensionMismatch {
            expected: ws.len(),
            got: g_sharp.len(),
        });
    }
    ParameterVector::new(
        ws.iter()
            .zip(&g_sharp)
            .map(|(wi, gi)| wi - cfg.base_lr * gi)
            .collect(),
    )
}
