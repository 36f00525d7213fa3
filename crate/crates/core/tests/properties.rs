use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedsurg::aggregation::ParameterVector;
use fedsurg::datagen::{generate_multicenter, CenterDataset, GeneratorConfig};
use fedsurg::metrics::LabelSpace;
use fedsurg::models::{Embedder, EmbeddingNet, Model, SoftmaxHead};
use fedsurg::ranking::{bootstrap_ranking, BootstrapConfig, BootstrapInput, Stratification, Stratum};

fn pooled_features(center: &CenterDataset) -> Vec<Vec<f64>> {
    center
        .train
        .iter()
        .chain(&center.test)
        .map(|v| v.pooled(&(0..v.len()).collect::<Vec<_>>()))
        .collect()
}

/// Training accuracy of a standardized logistic regression separating `a`
/// from `b`.
fn probe_accuracy(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let dim = a[0].len();
    let all: Vec<(&Vec<f64>, f64)> = a.iter().map(|x| (x, 0.0)).chain(b.iter().map(|x| (x, 1.0))).collect();
    let n = all.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|d| all.iter().map(|(x, _)| x[d]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|d| (all.iter().map(|(x, _)| (x[d] - mean[d]).powi(2)).sum::<f64>() / n).sqrt().max(1e-12))
        .collect();
    let z: Vec<(Vec<f64>, f64)> = all
        .iter()
        .map(|(x, y)| ((0..dim).map(|d| (x[d] - mean[d]) / std[d]).collect(), *y))
        .collect();
    let mut w = vec![0.0; dim + 1];
    for _ in 0..3000 {
        let mut g = vec![0.0; dim + 1];
        for (x, y) in &z {
            let logit = w[dim] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-logit).exp()) - y;
            for d in 0..dim {
                g[d] += err * x[d] / n;
            }
            g[dim] += err / n;
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= 0.5 * gi;
        }
    }
    let correct = z
        .iter()
        .filter(|(x, y)| {
            let logit = w[dim] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            (logit > 0.0) == (*y == 1.0)
        })
        .count();
    correct as f64 / n
}

#[test]
fn feature_skew_makes_centers_separable() {
    for seed in 0..3 {
        let centers = generate_multicenter(&GeneratorConfig::desk_scale().with_seed(seed)).unwrap();
        let features: Vec<Vec<Vec<f64>>> = centers.iter().map(pooled_features).collect();
        for i in 0..centers.len() {
            for j in i + 1..centers.len() {
                let acc = probe_accuracy(&features[i], &features[j]);
                assert!(acc > 0.9, "seed {seed}: centers {i} and {j} probe accuracy {acc:.3}");
            }
        }
    }
}

#[test]
fn iid_centers_are_not_separable() {
    let centers = generate_multicenter(&GeneratorConfig::desk_scale().with_seed(1).iid()).unwrap();
    let a = pooled_features(&centers[0]);
    let b = pooled_features(&centers[2]);
    assert!(probe_accuracy(&a, &b) < 0.9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generated_data_respects_its_config(seed in 0u64..1000, frames in 1usize..12, dim in 1usize..6) {
        let cfg = GeneratorConfig {
            frames_per_video: frames,
            feature_dim: dim,
            ..GeneratorConfig::desk_scale()
        }
        .with_seed(seed);
        let centers = generate_multicenter(&cfg).unwrap();
        prop_assert_eq!(centers.len(), cfg.num_centers);
        for (i, c) in centers.iter().enumerate() {
            prop_assert!((c.class_priors.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(c.class_priors.iter().all(|&p| p >= 0.0));
            let (train, test) = cfg.split_counts(i);
            prop_assert_eq!((c.train.len(), c.test.len()), (train, test));
            for v in c.train.iter().chain(&c.test) {
                prop_assert_eq!(v.len(), frames);
                prop_assert!(v.frames.iter().all(|f| f.len() == dim && f.iter().all(|x| x.is_finite())));
                prop_assert!(v.label < cfg.num_classes);
                prop_assert_eq!(&v.center_id, &c.center_id);
            }
        }
        prop_assert!(centers.iter().any(|c| c.is_holdout() && c.train.is_empty()));
    }

    #[test]
    fn model_outputs_are_distributions(
        seed in any::<u64>(),
        params in prop::collection::vec(-3.0f64..3.0, 64),
        input in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let mut head = SoftmaxHead::new(4, 5).unwrap();
        head.set_params(&ParameterVector::new(params[..head.num_params()].to_vec()).unwrap()).unwrap();
        let p = head.predict_proba(&input);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = EmbeddingNet::new(4, 3, 5, &mut rng).unwrap();
        let n = net.num_params();
        net.set_params(&ParameterVector::new(params.iter().cycle().take(n).copied().collect()).unwrap()).unwrap();
        let p = net.predict_proba(&input);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let e = net.embed(&input);
        prop_assert!((e.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn bootstrap_statistics_are_consistent(
        cases in prop::collection::vec((0usize..4, 0usize..4, 0usize..4, 0usize..4), 4..30),
        seed in any::<u64>(),
        pooled in any::<bool>(),
    ) {
        let half = cases.len() / 2;
        let strata = [&cases[..half], &cases[half..]]
            .iter()
            .enumerate()
            .map(|(i, part)| Stratum {
                name: i.to_string(),
                truths: part.iter().map(|c| c.0).collect(),
                preds: vec![
                    part.iter().map(|c| c.1).collect(),
                    part.iter().map(|c| c.2).collect(),
                    part.iter().map(|c| c.3).collect(),
                ],
            })
            .collect();
        let teams = vec!["x".to_string(), "y".to_string(), "z".to_string()];
        let input = BootstrapInput::new(teams, strata, LabelSpace::new(4).unwrap()).unwrap();
        let cfg = BootstrapConfig {
            iterations: 60,
            seed,
            workers: 1,
            stratification: if pooled { Stratification::Pooled } else { Stratification::Stratified },
            ..BootstrapConfig::default()
        };
        let result = bootstrap_ranking(&input, &cfg).unwrap();
        for m in &result.metrics {
            for t in 0..3 {
                prop_assert!((m.rank_freq[t].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(m.ci[t].0 <= m.median_rank[t] && m.median_rank[t] <= m.ci[t].1);
                prop_assert!(m.original_ranks[t] >= 1);
                for u in 0..3 {
                    if t != u {
                        let total = m.win_prob[t][u] + m.win_prob[u][t] + m.tie_prob[t][u];
                        prop_assert!((total - 1.0).abs() <= 1e-12);
                        prop_assert_eq!(m.tie_prob[t][u], m.tie_prob[u][t]);
                    }
                }
            }
        }
    }
}
