//! Synthetic multi-center datasets and external table ingestion.
//!
//! Each center is a simulated hospital with its own class priors and an
//! affine feature transform, so pooled training sees both label skew and
//! feature skew. Frames of a class-`c` video follow
//! `A_center · (μ_c + drift_t) + b_center + noise`.

mod bundle;
mod tables;

pub use bundle::{load_bundle, write_bundle, DatasetBundle, BUNDLE_MANIFEST};
pub use tables::{
    load_metric_table, load_predictions, read_metric_table, read_predictions, write_metric_table,
    write_predictions, CenterPredictions, MetricKind, MetricTable, PredictionRecord, PredictionSet,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, weighted::WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::VideoInstance;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("invalid class priors for center {center}: {reason}")]
    InvalidPriors { center: String, reason: String },
    #[error("{path}: line {line}: {reason}")]
    Malformed { path: String, line: u64, reason: String },
    #[error("{path}: {reason}")]
    Table { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

/// Strength of the per-center affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSkew {
    /// Magnitude of the random perturbation of the identity map.
    pub scale: f64,
    /// Norm of the per-center offset, in a random direction.
    pub shift: f64,
}

impl FeatureSkew {
    pub const NONE: FeatureSkew = FeatureSkew { scale: 0.0, shift: 0.0 };
}

/// Within-video variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Standard deviation of i.i.d. gaussian frame noise.
    pub frame_std: f64,
    /// Expected norm of a video's linear temporal ramp, end to end.
    pub drift: f64,
}

impl NoiseConfig {
    pub const NONE: NoiseConfig = NoiseConfig { frame_std: 0.0, drift: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub num_centers: usize,
    pub videos_per_center: Vec<usize>,
    pub test_fractions: Vec<f64>,
    pub frames_per_video: usize,
    pub feature_dim: usize,
    pub class_priors: Vec<Vec<f64>>,
    /// Distance of each class code from the origin.
    pub class_separation: f64,
    pub feature_skew: FeatureSkew,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            num_centers: 4,
            videos_per_center: vec![50, 42, 102, 29],
            test_fractions: vec![10.0 / 50.0, 9.0 / 42.0, 22.0 / 102.0, 1.0],
            frames_per_video: 200,
            feature_dim: 8,
            class_priors: vec![
                vec![0.05, 0.10, 0.30, 0.35, 0.15, 0.05],
                vec![0.02, 0.08, 0.40, 0.30, 0.15, 0.05],
                vec![0.05, 0.15, 0.25, 0.30, 0.20, 0.05],
                vec![0.03, 0.07, 0.25, 0.40, 0.20, 0.05],
            ],
            class_separation: 3.5,
            feature_skew: FeatureSkew { scale: 1.5, shift: 5.0 },
            noise: NoiseConfig { frame_std: 1.5, drift: 1.0 },
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    /// Short videos for fast experiments: 20 frames of 8 features.
    pub fn desk_scale() -> Self {
        Self {
            frames_per_video: 20,
            feature_dim: 8,
            ..Self::default()
        }
    }

    /// Every center shares one label distribution and there is no feature
    /// skew, so a held-out center looks like the training centers.
    pub fn iid(mut self) -> Self {
        let c = self.num_classes;
        let mut pooled = vec![0.0; c];
        for p in &self.class_priors {
            for (acc, v) in pooled.iter_mut().zip(p) {
                *acc += v / self.class_priors.len() as f64;
            }
        }
        let total: f64 = pooled.iter().sum();
        pooled.iter_mut().for_each(|v| *v /= total);
        self.class_priors = vec![pooled; self.num_centers];
        self.feature_skew = FeatureSkew::NONE;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn center_id(&self, index: usize) -> String {
        (index + 1).to_string()
    }

    /// Train/test counts for one center.
    pub fn split_counts(&self, index: usize) -> (usize, usize) {
        let n = self.videos_per_center[index];
        let test = ((n as f64) * self.test_fractions[index]).round() as usize;
        let test = test.min(n);
        (n - test, test)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if self.num_centers == 0 {
            return bad("num_centers must be positive".into());
        }
        if self.frames_per_video == 0 || self.feature_dim == 0 {
            return bad("frames_per_video and feature_dim must be positive".into());
        }
        for (name, len) in [
            ("videos_per_center", self.videos_per_center.len()),
            ("test_fractions", self.test_fractions.len()),
            ("class_priors", self.class_priors.len()),
        ] {
            if len != self.num_centers {
                return bad(format!("{name} has {len} entries for {} centers", self.num_centers));
            }
        }
        if let Some(f) = self.test_fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("test fraction {f} outside (0, 1]"));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("feature_skew.scale", self.feature_skew.scale),
            ("feature_skew.shift", self.feature_skew.shift),
            ("noise.frame_std", self.noise.frame_std),
            ("noise.drift", self.noise.drift),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number"));
            }
        }
        for (i, priors) in self.class_priors.iter().enumerate() {
            let fail = |reason: String| {
                Err(DataError::InvalidPriors {
                    center: self.center_id(i),
                    reason,
                })
            };
            if priors.len() != self.num_classes {
                return fail(format!("{} values for {} classes", priors.len(), self.num_classes));
            }
            if priors.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return fail("negative or non-finite prior".into());
            }
            let sum: f64 = priors.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return fail(format!("priors sum to {sum}, not 1"));
            }
        }
        Ok(())
    }
}

/// One simulated hospital.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterDataset {
    pub center_id: String,
    pub train: Vec<VideoInstance>,
    pub test: Vec<VideoInstance>,
    pub class_priors: Vec<f64>,
}

impl CenterDataset {
    pub fn is_holdout(&self) -> bool {
        self.train.is_empty()
    }
}

/// Class codes: scaled axis vectors while `C <= D`, seeded random
/// directions for the rest. Shared by every center.
fn codebook(cfg: &GeneratorConfig) -> Vec<Vec<f64>> {
    let d = cfg.feature_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    (0..cfg.num_classes)
        .map(|c| {
            let dir: Vec<f64> = if c < d {
                (0..d).map(|j| f64::from(u8::from(j == c))).collect()
            } else {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x / n).collect()
            };
            dir.into_iter().map(|x| x * cfg.class_separation).collect()
        })
        .collect()
}

struct CenterTransform {
    matrix: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl CenterTransform {
    fn sample(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.feature_dim;
        let root_d = (d as f64).sqrt();
        let matrix = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| {
                        let g: f64 = rng.sample(StandardNormal);
                        f64::from(u8::from(i == j)) + cfg.feature_skew.scale * g / root_d
                    })
                    .collect()
            })
            .collect();
        let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let offset = dir.into_iter().map(|x| cfg.feature_skew.shift * x / norm).collect();
        Self { matrix, offset }
    }

    fn apply(&self, latent: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.offset)
            .map(|(row, b)| row.iter().zip(latent).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect()
    }
}

fn generate_center(cfg: &GeneratorConfig, index: usize, codes: &[Vec<f64>]) -> Result<CenterDataset, DataError> {
    let center_id = cfg.center_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let transform = CenterTransform::sample(cfg, &mut rng);
    let priors = &cfg.class_priors[index];
    let labels = WeightedIndex::new(priors).map_err(|e| DataError::InvalidPriors {
        center: center_id.clone(),
        reason: e.to_string(),
    })?;
    let d = cfg.feature_dim;
    let len = cfg.frames_per_video;
    let noise = Normal::new(0.0, cfg.noise.frame_std).expect("validated std");
    let (n_train, n_test) = cfg.split_counts(index);

    let mut videos = Vec::with_capacity(n_train + n_test);
    for v in 0..n_train + n_test {
        let label = labels.sample(&mut rng);
        let ramp: Vec<f64> = (0..d)
            .map(|_| cfg.noise.drift * rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt())
            .collect();
        let frames = (0..len)
            .map(|t| {
                let phase = if len > 1 { t as f64 / (len - 1) as f64 - 0.5 } else { 0.0 };
                let latent: Vec<f64> = codes[label].iter().zip(&ramp).map(|(m, r)| m + phase * r).collect();
                let mut x = transform.apply(&latent);
                if cfg.noise.frame_std > 0.0 {
                    x.iter_mut().for_each(|xi| *xi += noise.sample(&mut rng));
                }
                x
            })
            .collect();
        let split = if v < n_train { "train" } else { "test" };
        let ordinal = if v < n_train { v } else { v - n_train };
        videos.push(VideoInstance {
            frames,
            label,
            center_id: center_id.clone(),
            case_id: format!("c{center_id}-{split}-{ordinal:04}"),
        });
    }
    let test = videos.split_off(n_train);
    Ok(CenterDataset {
        center_id,
        train: videos,
        test,
        class_priors: priors.clone(),
    })
}

/// Generates every center. Each center draws from its own RNG stream, so
/// the output does not depend on how the work is scheduled.
pub fn generate_multicenter(cfg: &GeneratorConfig) -> Result<Vec<CenterDataset>, DataError> {
    cfg.validate()?;
    let codes = codebook(cfg);
    (0..cfg.num_centers)
        .into_par_iter()
        .map(|i| generate_center(cfg, i, &codes))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            frames_per_video: 4,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn default_sizes_and_splits() {
        let data = generate_multicenter(&small()).unwrap();
        let sizes: Vec<usize> = data.iter().map(|c| c.train.len() + c.test.len()).collect();
        assert_eq!(sizes, vec![50, 42, 102, 29]);
        let splits: Vec<(usize, usize)> = data.iter().map(|c| (c.train.len(), c.test.len())).collect();
        assert_eq!(splits, vec![(40, 10), (33, 9), (80, 22), (0, 29)]);
        assert!(data[3].is_holdout());
        assert_eq!(data[0].center_id, "1");
    }

    #[test]
    fn full_test_fraction() {
        let cfg = GeneratorConfig {
            test_fractions: vec![1.0; 4],
            ..small()
        };
        assert!(generate_multicenter(&cfg).unwrap().iter().all(|c| c.train.is_empty()));
    }

    #[test]
    fn degenerate_generator_emits_class_codes() {
        let cfg = GeneratorConfig {
            feature_skew: FeatureSkew::NONE,
            noise: NoiseConfig::NONE,
            ..small()
        };
        let codes = codebook(&cfg);
        for center in generate_multicenter(&cfg).unwrap() {
            for v in center.train.iter().chain(&center.test) {
                assert!(v.frames.iter().all(|f| f == &codes[v.label]));
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small().with_seed(17);
        let a = serde_json::to_vec(&generate_multicenter(&cfg).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate_multicenter(&cfg).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_vec(&generate_multicenter(&cfg.with_seed(18)).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_priors_rejected() {
        let mut cfg = small();
        cfg.class_priors[1] = vec![0.5, 0.5, 0.1, 0.0, 0.0, 0.0];
        let err = generate_multicenter(&cfg).unwrap_err();
        assert!(matches!(err, DataError::InvalidPriors { ref center, .. } if center == "2"));
        cfg.class_priors[1] = vec![1.2, -0.2, 0.0, 0.0, 0.0, 0.0];
        assert!(generate_multicenter(&cfg).is_err());
        cfg.class_priors[1] = vec![1.0];
        assert!(generate_multicenter(&cfg).is_err());
    }

    #[test]
    fn label_frequencies_track_priors() {
        let cfg = GeneratorConfig {
            videos_per_center: vec![10_000; 4],
            test_fractions: vec![1e-9; 4],
            frames_per_video: 1,
            ..GeneratorConfig::default()
        };
        for center in generate_multicenter(&cfg).unwrap() {
            let mut counts = vec![0usize; 6];
            center.train.iter().for_each(|v| counts[v.label] += 1);
            for (count, prior) in counts.iter().zip(&center.class_priors) {
                let freq = *count as f64 / center.train.len() as f64;
                assert!((freq - prior).abs() < 0.02, "{freq} vs {prior}");
            }
        }
    }

    #[test]
    fn iid_variant_shares_priors() {
        let cfg = GeneratorConfig::desk_scale().iid();
        cfg.validate().unwrap();
        assert!(cfg.class_priors.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(cfg.feature_skew, FeatureSkew::NONE);
    }
}
