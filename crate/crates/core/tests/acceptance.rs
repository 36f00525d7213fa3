//! End-to-end acceptance checks. Run with `cargo test --test acceptance`;
//! prints one PASS/FAIL line per criterion and exits non-zero on failure.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedsurg::aggregation::{
    fed_avg, fed_median, fed_opt_apply, sam_step, ClientUpdate, ParameterVector, SamConfig, ServerOptConfig,
    ServerOptMode, ServerOptState,
};
use fedsurg::cli::{cmd_rank, cmd_simulate, CommonArgs, RankArgs, SimulateArgs};
use fedsurg::datagen::{generate_multicenter, GeneratorConfig, PredictionRecord};
use fedsurg::fedsim::{run_challenge, ChallengeConfig, PipelineResult, StrategyPipeline};
use fedsurg::metrics::{expected_cost, macro_f1, macro_f1_with, score_labels, ConfusionMatrix, F1Convention, LabelSpace};
use fedsurg::models::{Batch, EmbeddingNet, LossConfig, Model, SoftmaxHead, Triplet};
use fedsurg::ranking::{
    bootstrap_ranking, wilcoxon_signed_rank, BootstrapConfig, BootstrapInput, Stratum, WilcoxonMode,
};

const REFERENCE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/reference_metrics.csv");

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration, what: &str) -> Result<(), String> {
    ensure(elapsed < limit, || format!("{what} took {elapsed:.2?}, limit {limit:?}"))
}

fn rank_args(input: &Path, out: &Path) -> RankArgs {
    RankArgs {
        input: input.to_path_buf(),
        common: CommonArgs {
            out: Some(out.to_path_buf()),
            ..CommonArgs::default()
        },
        bootstrap_iters: None,
        wilcoxon_mode: None,
        stratification: None,
        f1_absent_convention: None,
        holdout_center: None,
        workers: None,
        num_classes: None,
    }
}

fn reference_leaderboard() -> Result<(fedsurg::ranking::RankTable, Duration), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = cmd_rank(&rank_args(Path::new(REFERENCE), dir.path()), &mut Vec::new()).map_err(|e| e.to_string())?;
    Ok((out.leaderboard, start.elapsed()))
}

fn leaderboard_reproduction() -> Outcome {
    let (table, elapsed) = reference_leaderboard()?;
    // team: task 1 (ec, f1, avg), task 2 (ec, f1, avg), final
    let expected = [
        ("Camma", [3, 3, 3, 3, 1, 2, 2]),
        ("Elbflorenz", [2, 2, 2, 2, 3, 3, 2]),
        ("Santhi", [1, 1, 1, 1, 2, 1, 1]),
    ];
    ensure(table.rows.len() == 3, || format!("{} teams", table.rows.len()))?;
    for (team, ranks) in expected {
        let row = table.row(team).ok_or(format!("{team} missing"))?;
        let got = [
            row.task1.ec_rank,
            row.task1.f1_rank,
            row.task1.rank,
            row.task2.ec_rank,
            row.task2.f1_rank,
            row.task2.rank,
            row.final_rank,
        ];
        ensure(got == ranks, || format!("{team}: got {got:?}, want {ranks:?}"))?;
    }
    within(elapsed, Duration::from_secs(1), "rank")?;
    Ok(format!("ranks match, {elapsed:.2?}"))
}

fn task2_averaging() -> Outcome {
    let (table, _) = reference_leaderboard()?;
    let expected = [
        ("Camma", 21.79, 18.91),
        ("Elbflorenz", 21.35, 13.14),
        ("Santhi", 20.44, 15.40),
    ];
    let mut worst: f64 = 0.0;
    for (team, ec, f1) in expected {
        let row = table.row(team).ok_or(format!("{team} missing"))?;
        for (got, want, metric) in [(100.0 * row.task2.ec, ec, "EC"), (100.0 * row.task2.f1, f1, "F1")] {
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure(err <= 0.005, || format!("{team} {metric}: {got:.4} vs {want}"))?;
        }
    }
    Ok(format!("max deviation {worst:.4} pp"))
}

/// Per-sample scoring of a confusion matrix expanded into labels.
fn oracle_scores(rows: &[Vec<u64>], exclude_absent: bool) -> (f64, f64) {
    let c = rows.len();
    let mut samples = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            samples.extend(std::iter::repeat_n((t, p), n as usize));
        }
    }
    let cost: f64 = samples.iter().map(|&(t, p)| (t as f64 - p as f64).abs() / (c - 1) as f64).sum();
    let mut f1s = Vec::new();
    for k in 0..c {
        let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
        for &(t, p) in &samples {
            match (t == k, p == k) {
                (true, true) => tp += 1.0,
                (false, true) => fp += 1.0,
                (true, false) => fneg += 1.0,
                _ => {}
            }
        }
        if tp + fp + fneg == 0.0 {
            if !exclude_absent {
                f1s.push(0.0);
            }
        } else {
            f1s.push(2.0 * tp / (2.0 * tp + fp + fneg));
        }
    }
    let f1 = if f1s.is_empty() { 0.0 } else { f1s.iter().sum::<f64>() / f1s.len() as f64 };
    (f1, cost / samples.len() as f64)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Instant::now();
    let mut checked = 0;
    while checked < 1000 {
        let c = rng.random_range(2..=8);
        let rows: Vec<Vec<u64>> = (0..c).map(|_| (0..c).map(|_| rng.random_range(0..=20)).collect()).collect();
        if rows.iter().flatten().all(|&n| n == 0) {
            continue;
        }
        let cm = ConfusionMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let (f1, ec) = oracle_scores(&rows, false);
        let (f1_ex, _) = oracle_scores(&rows, true);
        let got_ec = expected_cost(&cm).map_err(|e| e.to_string())?;
        let got_f1 = macro_f1(&cm);
        let got_ex = macro_f1_with(&cm, F1Convention::ExcludeAbsent);
        ensure((got_f1 - f1).abs() <= 1e-12, || format!("macro F1 {got_f1} vs {f1} for {rows:?}"))?;
        ensure((got_ex - f1_ex).abs() <= 1e-12, || format!("exclude-absent F1 {got_ex} vs {f1_ex}"))?;
        ensure((got_ec - ec).abs() <= 1e-12, || format!("EC {got_ec} vs {ec} for {rows:?}"))?;
        checked += 1;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(5), "metric oracle")?;
    Ok(format!("{checked} matrices, {elapsed:.2?}"))
}

fn aggregation_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..1000 {
        let dim = rng.random_range(1..=6);
        let honest = rng.random_range(2..=8);
        let mut updates = Vec::new();
        for i in 0..honest {
            let params: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let n = rng.random_range(1..=50);
            updates.push(ClientUpdate::new(i.to_string(), ParameterVector::new(params).unwrap(), n, 0.0).unwrap());
        }
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let adversary = vec![sign * 1e9; dim];
        let slot = rng.random_range(0..=honest);
        let adv = ClientUpdate::new("adv", ParameterVector::new(adversary).unwrap(), rng.random_range(1..=50), 0.0)
            .unwrap();
        updates.insert(slot, adv);

        let avg = fed_avg(&updates).map_err(|e| e.to_string())?;
        let med = fed_median(&updates).map_err(|e| e.to_string())?;
        let total: f64 = updates.iter().map(|u| u.num_examples as f64).sum();
        for d in 0..dim {
            let column: Vec<f64> = updates.iter().map(|u| u.params.as_slice()[d]).collect();
            let lo = column.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let a = avg.as_slice()[d];
            let slack = 1e-12 * hi.abs().max(lo.abs());
            ensure(a >= lo - slack && a <= hi + slack, || format!("trial {trial}: fed_avg {a} outside [{lo}, {hi}]"))?;
            let mean: f64 = updates
                .iter()
                .map(|u| u.num_examples as f64 / total * u.params.as_slice()[d])
                .sum();
            ensure((a - mean).abs() <= 1e-9 * mean.abs().max(1.0), || {
                format!("trial {trial}: fed_avg {a} vs weighted mean {mean}")
            })?;
            let honest_col: Vec<f64> = updates
                .iter()
                .filter(|u| u.client_id != "adv")
                .map(|u| u.params.as_slice()[d])
                .collect();
            let hlo = honest_col.iter().copied().fold(f64::INFINITY, f64::min);
            let hhi = honest_col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let m = med.as_slice()[d];
            ensure(m >= hlo && m <= hhi, || format!("trial {trial}: fed_median {m} outside honest [{hlo}, {hhi}]"))?;
        }

        let global: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
        let cfg = ServerOptConfig {
            server_lr: 1.0,
            mode: ServerOptMode::Sgd,
            ..ServerOptConfig::default()
        };
        let state = ServerOptState::new(dim, cfg).map_err(|e| e.to_string())?;
        let (next, _) = fed_opt_apply(&state, &ParameterVector::new(global).unwrap(), &avg).map_err(|e| e.to_string())?;
        ensure(next == avg, || format!("trial {trial}: fed_opt sgd lr=1 differs from the aggregate"))?;
    }
    Ok("1000 update sets".into())
}

struct Quadratic {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Quadratic {
    fn random(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let m: Vec<Vec<f64>> = (0..dim).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        // MᵀM + I keeps the quadratic convex
        let a = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| (0..dim).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let b = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        Self { a, b }
    }

    fn grad(&self, w: &[f64]) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, bi)| row.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + bi)
            .collect()
    }
}

fn sam_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut worst_limit: f64 = 0.0;
    for _ in 0..200 {
        let dim = rng.random_range(1..=8);
        let q = Quadratic::random(&mut rng, dim);
        let w: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let rho = rng.random_range(0.01..1.0);
        let lr = rng.random_range(0.001..0.5);
        let adaptive = rng.random_bool(0.5);
        let pv = ParameterVector::new(w.clone()).unwrap();

        let g = q.grad(&w);
        let eps: Vec<f64> = if adaptive {
            let norm = w.iter().zip(&g).map(|(wi, gi)| (wi * gi).powi(2)).sum::<f64>().sqrt();
            w.iter().zip(&g).map(|(wi, gi)| rho * wi * wi * gi / norm).collect()
        } else {
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.iter().map(|gi| rho * gi / norm).collect()
        };
        let shifted: Vec<f64> = w.iter().zip(&eps).map(|(a, b)| a + b).collect();
        let expected: Vec<f64> = w.iter().zip(q.grad(&shifted)).map(|(wi, gi)| wi - lr * gi).collect();
        let cfg = SamConfig::new(rho, adaptive, lr).map_err(|e| e.to_string())?;
        let got = sam_step(|x| q.grad(x), &pv, &cfg).map_err(|e| e.to_string())?;
        for (x, y) in got.as_slice().iter().zip(&expected) {
            worst = worst.max((x - y).abs());
        }

        let cfg = SamConfig::new(1e-9, adaptive, lr).map_err(|e| e.to_string())?;
        let got = sam_step(|x| q.grad(x), &pv, &cfg).map_err(|e| e.to_string())?;
        for (x, (wi, gi)) in got.as_slice().iter().zip(w.iter().zip(&g)) {
            worst_limit = worst_limit.max((x - (wi - lr * gi)).abs());
        }
    }
    ensure(worst <= 1e-8, || format!("two-point formula off by {worst:e}"))?;
    ensure(worst_limit <= 1e-6, || format!("small-rho limit off by {worst_limit:e}"))?;
    Ok(format!("max error {worst:.1e}, small-rho {worst_limit:.1e}"))
}

fn central_difference<M: Model>(model: &M, params: &[f64], batch: &Batch, loss: &LossConfig) -> Vec<f64> {
    let h = 1e-5;
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            p[i] = params[i] + h;
            let up = model.loss_and_gradient_at(&p, batch, loss).unwrap().0;
            p[i] = params[i] - h;
            let down = model.loss_and_gradient_at(&p, batch, loss).unwrap().0;
            p[i] = params[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn labeled_batch(rng: &mut ChaCha8Rng, dim: usize, classes: usize) -> Batch {
    let n = rng.random_range(1..=6);
    Batch::Labeled {
        inputs: (0..n).map(|_| random_vec(rng, dim)).collect(),
        labels: (0..n).map(|_| rng.random_range(0..classes)).collect(),
    }
}

fn check_model<M: Model>(model: &M, batch: &Batch, loss: &LossConfig, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let params = random_vec(rng, model.num_params());
    let (_, analytic) = model.loss_and_gradient_at(&params, batch, loss).map_err(|e| e.to_string())?;
    Ok(relative_error(&analytic, &central_difference(model, &params, batch, loss)))
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        // one input dimension makes every embedding ±w/|w|, a flat triplet loss
        let dim = rng.random_range(2..=6);
        let classes = rng.random_range(2..=6);
        let weights: Vec<f64> = (0..classes).map(|_| rng.random_range(0.2..3.0)).collect();
        let weighted = LossConfig::weighted_cross_entropy(weights).map_err(|e| e.to_string())?;

        let head = SoftmaxHead::new(dim, classes).map_err(|e| e.to_string())?;
        let batch = labeled_batch(&mut rng, dim, classes);
        worst[0] = worst[0].max(check_model(&head, &batch, &LossConfig::cross_entropy(), &mut rng)?);
        worst[1] = worst[1].max(check_model(&head, &batch, &weighted, &mut rng)?);

        let embed = rng.random_range(2..=5);
        let net = EmbeddingNet::new(dim, embed, classes, &mut rng).map_err(|e| e.to_string())?;
        let batch = labeled_batch(&mut rng, dim, classes);
        worst[2] = worst[2].max(check_model(&net, &batch, &LossConfig::cross_entropy(), &mut rng)?);
        let triplets = (0..rng.random_range(1..=4))
            .map(|_| Triplet {
                anchor: random_vec(&mut rng, dim),
                positive: random_vec(&mut rng, dim),
                negative: random_vec(&mut rng, dim),
            })
            .collect();
        // a margin of 2 keeps every triplet on the active side of the hinge
        let triplet = LossConfig::triplet(2.0).map_err(|e| e.to_string())?;
        worst[3] = worst[3].max(check_model(&net, &Batch::Triplets(triplets), &triplet, &mut rng)?);
    }
    let names = ["softmax/ce", "softmax/weighted", "embedding/ce", "embedding/triplet"];
    for (name, err) in names.iter().zip(worst) {
        ensure(err < 1e-4, || format!("{name}: relative error {err:e}"))?;
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    Ok(format!("4 model/loss pairs x 100 trials, max relative error {max:.1e}"))
}

/// Doubled average ranks of `|d|`, computed by counting.
fn doubled_ranks(diffs: &[f64]) -> Vec<u64> {
    diffs
        .iter()
        .map(|d| {
            let below = diffs.iter().filter(|e| e.abs() < d.abs()).count() as u64;
            let equal = diffs.iter().filter(|e| e.abs() == d.abs()).count() as u64;
            2 * below + equal + 1
        })
        .collect()
}

fn enumeration_p(diffs: &[f64]) -> f64 {
    let ranks = doubled_ranks(diffs);
    let total: u64 = ranks.iter().sum();
    let plus: u64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let observed = plus.min(total - plus);
    let n = diffs.len();
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s.min(total - s) <= observed {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

fn wilcoxon_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    for n in 1..=12usize {
        for sample in 0..100 {
            // half the samples use small integers to produce ties and zeros
            let draw = |rng: &mut ChaCha8Rng| {
                if sample % 2 == 0 {
                    rng.random_range(0..5) as f64
                } else {
                    rng.random_range(-1.0..1.0)
                }
            };
            let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
            let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
            let got = wilcoxon_signed_rank(&x, &y, WilcoxonMode::Exact);
            if diffs.is_empty() {
                ensure(got.is_err(), || "all-zero differences must be degenerate".into())?;
                continue;
            }
            let got = got.map_err(|e| e.to_string())?;
            let want = enumeration_p(&diffs);
            ensure((got.p_value - want).abs() <= 1e-12, || {
                format!("n={n}: exact p {} vs enumeration {want}", got.p_value)
            })?;
            cases += 1;
        }
    }

    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let n = 50;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-1.0..0.8)).collect();
        let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let ranks = doubled_ranks(&diffs);
        let total: u64 = ranks.iter().sum();
        let plus: u64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
        let observed = plus.min(total - plus);
        let draws = 1_000_000;
        let mut hits = 0u64;
        for _ in 0..draws {
            let bits: u64 = rng.random();
            let s: u64 = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| ranks[i]).sum();
            if s.min(total - s) <= observed {
                hits += 1;
            }
        }
        let oracle = hits as f64 / draws as f64;
        let got = wilcoxon_signed_rank(&x, &y, WilcoxonMode::NormalApprox).map_err(|e| e.to_string())?;
        worst = worst.max((got.p_value - oracle).abs());
        ensure((got.p_value - oracle).abs() <= 0.01, || {
            format!("normal approximation p {} vs sign-flip oracle {oracle}", got.p_value)
        })?;
    }
    Ok(format!("{cases} exact cases, normal approximation within {worst:.4}"))
}

fn bootstrap_input(rng: &mut ChaCha8Rng) -> BootstrapInput {
    let cfg = GeneratorConfig::default();
    let teams = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let strata = (0..cfg.num_centers)
        .map(|i| {
            let n = cfg.split_counts(i).1;
            let truths: Vec<usize> = (0..n).map(|_| rng.random_range(0..6)).collect();
            let preds = (0..teams.len())
                .map(|_| {
                    truths
                        .iter()
                        .map(|&t| if rng.random_bool(0.4) { t } else { rng.random_range(0..6) })
                        .collect()
                })
                .collect();
            Stratum {
                name: cfg.center_id(i),
                truths,
                preds,
            }
        })
        .collect();
    BootstrapInput::new(teams, strata, LabelSpace::CHALLENGE).unwrap()
}

fn bootstrap_integrity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let input = bootstrap_input(&mut rng);
    let cases: usize = input.strata.iter().map(|s| s.truths.len()).sum();
    ensure(cases == 70, || format!("{cases} test cases"))?;

    let cfg = |workers, iterations| BootstrapConfig {
        iterations,
        seed: 11,
        workers,
        ..BootstrapConfig::default()
    };
    let reference = bootstrap_ranking(&input, &cfg(1, 1000)).map_err(|e| e.to_string())?;
    for workers in [4, 8] {
        let other = bootstrap_ranking(&input, &cfg(workers, 1000)).map_err(|e| e.to_string())?;
        ensure(other == reference, || format!("{workers} workers differ from 1 worker"))?;
    }

    let start = Instant::now();
    let full = bootstrap_ranking(&input, &cfg(0, 10_000)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    for result in [&reference, &full] {
        for m in &result.metrics {
            for row in &m.rank_freq {
                let sum: f64 = row.iter().sum();
                ensure((sum - 1.0).abs() <= 1e-12, || format!("{:?} rank frequencies sum to {sum}", m.metric))?;
            }
        }
    }
    within(elapsed, Duration::from_secs(60), "B=10000 bootstrap")?;
    Ok(format!("identical across 1/4/8 workers, B=10000 in {elapsed:.2?}"))
}

fn rescored_f1(records: &[PredictionRecord], convention: F1Convention) -> f64 {
    let truths: Vec<usize> = records.iter().map(|r| r.true_label).collect();
    let preds: Vec<usize> = records.iter().map(|r| r.pred_label).collect();
    score_labels(&truths, &preds, LabelSpace::CHALLENGE, convention).unwrap().f1_macro
}

/// (task 1, mean task 2) macro-F1 of one pipeline under `convention`.
fn task_f1(p: &PipelineResult, convention: F1Convention) -> (f64, f64) {
    let t1 = rescored_f1(&p.task1.predictions, convention);
    let t2: f64 = p.task2.centers.iter().map(|c| rescored_f1(&c.predictions, convention)).sum::<f64>()
        / p.task2.centers.len() as f64;
    (t1, t2)
}

fn heterogeneity_trend() -> Outcome {
    let start = Instant::now();
    let pipelines = StrategyPipeline::presets();
    let mut wins = vec![0usize; pipelines.len()];
    let mut wins_excl = vec![0usize; pipelines.len()];
    let mut iid_gap = vec![0.0; pipelines.len()];
    let mut iid_gap_zero = vec![0.0; pipelines.len()];
    let seeds = 10;
    for seed in 0..seeds {
        let challenge = ChallengeConfig {
            seed,
            ..ChallengeConfig::default()
        };
        let skewed = generate_multicenter(&GeneratorConfig::desk_scale().with_seed(seed)).map_err(|e| e.to_string())?;
        let r = run_challenge(&pipelines, &skewed, &challenge).map_err(|e| e.to_string())?;
        for (i, p) in r.pipelines.iter().enumerate() {
            let (t1, t2) = task_f1(p, F1Convention::Zero);
            wins[i] += (t2 > t1) as usize;
            let (t1, t2) = task_f1(p, F1Convention::ExcludeAbsent);
            wins_excl[i] += (t2 > t1) as usize;
        }

        let iid = generate_multicenter(&GeneratorConfig::desk_scale().with_seed(seed).iid()).map_err(|e| e.to_string())?;
        let r = run_challenge(&pipelines, &iid, &challenge).map_err(|e| e.to_string())?;
        for (i, p) in r.pipelines.iter().enumerate() {
            let (t1, t2) = task_f1(p, F1Convention::ExcludeAbsent);
            iid_gap[i] += (t1 - t2) / seeds as f64;
            let (t1, t2) = task_f1(p, F1Convention::Zero);
            iid_gap_zero[i] += (t1 - t2) / seeds as f64;
        }
    }
    let elapsed = start.elapsed();
    let names: Vec<&str> = pipelines.iter().map(|p| p.name.as_str()).collect();
    let fmt = |v: &[f64]| v.iter().map(|g| format!("{g:+.3}")).collect::<Vec<_>>().join(" ");
    println!("      pipelines {names:?}");
    println!("      skewed wins (zero) {wins:?}, (exclude-absent) {wins_excl:?} of {seeds}");
    println!("      iid mean gap (exclude-absent) {}", fmt(&iid_gap));
    println!("      iid mean gap (zero, informational) {}", fmt(&iid_gap_zero));
    for (i, name) in names.iter().enumerate() {
        ensure(wins[i] >= 7, || format!("{name} improves on task 2 in only {}/{seeds} seeds", wins[i]))?;
        let gap: f64 = iid_gap[i];
        ensure(gap.abs() < 0.1, || format!("{name}: iid gap {gap:.3}"))?;
    }
    within(elapsed, Duration::from_secs(600), "heterogeneity runs")?;
    Ok(format!("wins {wins:?}, {elapsed:.2?}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let args = SimulateArgs {
            common: CommonArgs {
                seed: Some(42),
                out: Some(out.clone()),
                ..CommonArgs::default()
            },
            ..SimulateArgs::default()
        };
        cmd_simulate(&args, &mut Vec::new()).map_err(|e| e.to_string())?;
        let files: Vec<Vec<u8>> = ["results.json", "predictions.csv"]
            .iter()
            .map(|f| std::fs::read(out.join(f)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        outputs.push(files);
    }
    ensure(outputs[0][0] == outputs[1][0], || "results.json differs".into())?;
    ensure(outputs[0][1] == outputs[1][1], || "predictions.csv differs".into())?;
    Ok(format!("{} + {} bytes identical", outputs[0][0].len(), outputs[0][1].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("leaderboard reproduction", leaderboard_reproduction),
        ("task 2 averaging", task2_averaging),
        ("metric oracle equivalence", metric_oracle),
        ("aggregation algebra", aggregation_algebra),
        ("SAM correctness", sam_correctness),
        ("gradient checks", gradient_checks),
        ("Wilcoxon correctness", wilcoxon_correctness),
        ("bootstrap integrity", bootstrap_integrity),
        ("heterogeneity trend", heterogeneity_trend),
        ("determinism", determinism),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed in {:.1?}", criteria.len() - failed, criteria.len(), start.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
