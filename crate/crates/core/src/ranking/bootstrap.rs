//! Paired bootstrap of the test set and the resulting rank statistics.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{rank_values, wilcoxon_signed_rank, Direction, RankingError, WilcoxonMode, WilcoxonResult};
use crate::datagen::{MetricKind, PredictionSet};
use crate::metrics::{expected_cost, macro_f1_with, ConfusionMatrix, F1Convention, LabelSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratification {
    /// Resample within each center and average the per-center metrics.
    #[default]
    Stratified,
    /// Merge all centers and resample the pooled cases.
    Pooled,
}

impl std::str::FromStr for Stratification {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stratified" => Ok(Self::Stratified),
            "pooled" => Ok(Self::Pooled),
            other => Err(format!("unknown stratification `{other}` (stratified, pooled)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub seed: u64,
    /// Thread count; 0 uses rayon's default.
    pub workers: usize,
    pub stratification: Stratification,
    pub metrics: Vec<MetricKind>,
    pub ci_level: f64,
    pub wilcoxon_mode: WilcoxonMode,
    pub f1_convention: F1Convention,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            seed: 0,
            workers: 0,
            stratification: Stratification::Stratified,
            metrics: MetricKind::ALL.to_vec(),
            ci_level: 0.95,
            wilcoxon_mode: WilcoxonMode::Auto,
            f1_convention: F1Convention::Zero,
        }
    }
}

/// Cases of one center: shared truths and each team's predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub name: String,
    pub truths: Vec<usize>,
    /// Indexed like [`BootstrapInput::teams`].
    pub preds: Vec<Vec<usize>>,
}

/// Paired predictions: every team scored on the same cases.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapInput {
    pub teams: Vec<String>,
    pub strata: Vec<Stratum>,
    pub labels: LabelSpace,
}

impl BootstrapInput {
    /// Aligns every team's predictions for `centers` by case id. Teams must
    /// cover exactly the same cases with the same true labels.
    pub fn from_predictions(
        set: &PredictionSet,
        centers: &[String],
        labels: LabelSpace,
    ) -> Result<Self, RankingError> {
        let teams: Vec<String> = set.teams.keys().cloned().collect();
        if teams.is_empty() || centers.is_empty() {
            return Err(RankingError::Empty);
        }
        let mut strata = Vec::with_capacity(centers.len());
        for center in centers {
            let mut reference: Option<BTreeMap<&str, usize>> = None;
            let mut preds = Vec::with_capacity(teams.len());
            for team in &teams {
                let group = set.teams[team]
                    .get(center)
                    .ok_or_else(|| RankingError::Unpaired(format!("team {team} has no cases for center {center}")))?;
                let mut by_case = BTreeMap::new();
                for (i, id) in group.case_ids.iter().enumerate() {
                    if by_case.insert(id.as_str(), i).is_some() {
                        return Err(RankingError::Unpaired(format!(
                            "team {team} lists case {id} twice in center {center}"
                        )));
                    }
                }
                match &reference {
                    None => reference = Some(by_case.clone()),
                    Some(r) => {
                        let same_cases = r.len() == by_case.len() && r.keys().eq(by_case.keys());
                        let first = &set.teams[&teams[0]][center];
                        if !same_cases
                            || r.iter().any(|(id, &i)| first.truths[i] != group.truths[by_case[id]])
                        {
                            return Err(RankingError::Unpaired(format!(
                                "teams {} and {team} disagree on the cases of center {center}",
                                teams[0]
                            )));
                        }
                    }
                }
                preds.push(by_case.values().map(|&i| group.preds[i]).collect::<Vec<_>>());
            }
            let first = &set.teams[&teams[0]][center];
            let reference = reference.expect("at least one team");
            if reference.is_empty() {
                return Err(RankingError::InvalidArgument(format!("center {center} has no cases")));
            }
            strata.push(Stratum {
                name: center.clone(),
                truths: reference.values().map(|&i| first.truths[i]).collect(),
                preds,
            });
        }
        Self::new(teams, strata, labels)
    }

    pub fn new(teams: Vec<String>, strata: Vec<Stratum>, labels: LabelSpace) -> Result<Self, RankingError> {
        if teams.is_empty() || strata.is_empty() {
            return Err(RankingError::Empty);
        }
        for s in &strata {
            if s.truths.is_empty() {
                return Err(RankingError::InvalidArgument(format!("stratum {} has no cases", s.name)));
            }
            if s.preds.len() != teams.len() || s.preds.iter().any(|p| p.len() != s.truths.len()) {
                return Err(RankingError::Unpaired(format!(
                    "stratum {} does not hold one prediction per case for every team",
                    s.name
                )));
            }
            if let Some(bad) = s.truths.iter().chain(s.preds.iter().flatten()).find(|&&l| !labels.contains(l)) {
                return Err(RankingError::InvalidArgument(format!(
                    "label {bad} in stratum {} is outside 0..{}",
                    s.name,
                    labels.num_classes()
                )));
            }
        }
        Ok(Self { teams, strata, labels })
    }

    fn pooled(&self) -> Self {
        let mut merged = Stratum {
            name: "pooled".into(),
            truths: Vec::new(),
            preds: vec![Vec::new(); self.teams.len()],
        };
        for s in &self.strata {
            merged.truths.extend(&s.truths);
            for (dst, src) in merged.preds.iter_mut().zip(&s.preds) {
                dst.extend(src);
            }
        }
        Self {
            teams: self.teams.clone(),
            strata: vec![merged],
            labels: self.labels,
        }
    }
}

/// Rank statistics for one metric. Team-indexed matrices follow
/// [`BootstrapResult::teams`]; `rank_freq[t][r]` is the share of iterations
/// in which team `t` placed `r + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBootstrap {
    pub metric: MetricKind,
    pub original_values: Vec<f64>,
    pub original_ranks: Vec<usize>,
    pub value_mean: Vec<f64>,
    pub value_std: Vec<f64>,
    pub rank_freq: Vec<Vec<f64>>,
    pub median_rank: Vec<usize>,
    pub ci: Vec<(usize, usize)>,
    /// `win_prob[a][b]`: share of iterations where `a` strictly outranks `b`.
    pub win_prob: Vec<Vec<f64>>,
    pub tie_prob: Vec<Vec<f64>>,
    /// `None` on the diagonal and where all paired values coincide.
    pub wilcoxon: Vec<Vec<Option<WilcoxonResult>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub iterations: usize,
    pub seed: u64,
    pub stratification: Stratification,
    pub ci_level: f64,
    pub teams: Vec<String>,
    pub metrics: Vec<MetricBootstrap>,
}

impl BootstrapResult {
    pub fn metric(&self, metric: MetricKind) -> Option<&MetricBootstrap> {
        self.metrics.iter().find(|m| m.metric == metric)
    }
}

/// Metric values per team (outer: metric, inner: team).
fn score(input: &BootstrapInput, metrics: &[MetricKind], convention: F1Convention, draws: Option<&[Vec<usize>]>) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; input.teams.len()]; metrics.len()];
    let k = input.labels.num_classes();
    for (s_idx, s) in input.strata.iter().enumerate() {
        for t in 0..input.teams.len() {
            let mut counts = vec![vec![0u64; k]; k];
            let preds = &s.preds[t];
            match draws {
                Some(d) => d[s_idx].iter().for_each(|&i| counts[s.truths[i]][preds[i]] += 1),
                None => s.truths.iter().zip(preds).for_each(|(&a, &b)| counts[a][b] += 1),
            }
            let cm = ConfusionMatrix::from_rows(&counts).expect("square by construction");
            for (m, metric) in metrics.iter().enumerate() {
                out[m][t] += match metric {
                    MetricKind::Ec => expected_cost(&cm).expect("strata are non-empty"),
                    MetricKind::F1 => macro_f1_with(&cm, convention),
                };
            }
        }
    }
    let n = input.strata.len() as f64;
    out.iter_mut().flatten().for_each(|v| *v /= n);
    out
}

/// Nearest-rank percentile of a sorted sample.
fn percentile(sorted: &[usize], q: f64) -> usize {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Resamples cases with replacement `iterations` times, identically for
/// every team, and re-ranks the teams on each metric. Iteration `b` draws
/// from its own stream of the master seed, so results do not depend on the
/// worker count.
pub fn bootstrap_ranking(input: &BootstrapInput, cfg: &BootstrapConfig) -> Result<BootstrapResult, RankingError> {
    if cfg.iterations == 0 {
        return Err(RankingError::InvalidArgument("bootstrap needs at least one iteration".into()));
    }
    if cfg.metrics.is_empty() {
        return Err(RankingError::InvalidArgument("no metrics requested".into()));
    }
    if !(cfg.ci_level > 0.0 && cfg.ci_level < 1.0) {
        return Err(RankingError::InvalidArgument("ci_level must lie in (0, 1)".into()));
    }
    let pooled;
    let input = match cfg.stratification {
        Stratification::Stratified => input,
        Stratification::Pooled => {
            pooled = input.pooled();
            &pooled
        }
    };
    let teams = input.teams.len();
    let metrics = &cfg.metrics;

    let run = |b: usize| -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(b as u64);
        let draws: Vec<Vec<usize>> = input
            .strata
            .iter()
            .map(|s| (0..s.truths.len()).map(|_| rng.random_range(0..s.truths.len())).collect())
            .collect();
        score(input, metrics, cfg.f1_convention, Some(&draws))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| RankingError::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    // per iteration, per metric, per team
    let samples: Vec<Vec<Vec<f64>>> = pool.install(|| (0..cfg.iterations).into_par_iter().map(run).collect());

    let original = score(input, metrics, cfg.f1_convention, None);
    let b_count = cfg.iterations as f64;
    let tail = (1.0 - cfg.ci_level) / 2.0;
    let mut results = Vec::with_capacity(metrics.len());
    for (m, &metric) in metrics.iter().enumerate() {
        let direction = Direction::for_metric(metric);
        let mut rank_counts = vec![vec![0u64; teams]; teams];
        let mut wins = vec![vec![0u64; teams]; teams];
        let mut ties = vec![vec![0u64; teams]; teams];
        let mut ranks_by_team = vec![Vec::with_capacity(cfg.iterations); teams];
        for it in &samples {
            let ranks = rank_values(&it[m], direction)?;
            for a in 0..teams {
                rank_counts[a][ranks[a] - 1] += 1;
                ranks_by_team[a].push(ranks[a]);
                for b in 0..teams {
                    if ranks[a] < ranks[b] {
                        wins[a][b] += 1;
                    } else if a != b && ranks[a] == ranks[b] {
                        ties[a][b] += 1;
                    }
                }
            }
        }
        let series: Vec<Vec<f64>> = (0..teams).map(|t| samples.iter().map(|it| it[m][t]).collect()).collect();
        let mut wilcoxon = vec![vec![None; teams]; teams];
        for a in 0..teams {
            for b in (a + 1)..teams {
                match wilcoxon_signed_rank(&series[a], &series[b], cfg.wilcoxon_mode) {
                    Ok(r) => {
                        wilcoxon[a][b] = Some(r);
                        wilcoxon[b][a] = Some(r);
                    }
                    Err(RankingError::Degenerate) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        let mut median_rank = Vec::with_capacity(teams);
        let mut ci = Vec::with_capacity(teams);
        for ranks in &mut ranks_by_team {
            ranks.sort_unstable();
            median_rank.push(percentile(ranks, 0.5));
            ci.push((percentile(ranks, tail), percentile(ranks, 1.0 - tail)));
        }
        let value_mean: Vec<f64> = series.iter().map(|s| s.iter().sum::<f64>() / b_count).collect();
        let value_std: Vec<f64> = series
            .iter()
            .zip(&value_mean)
            .map(|(s, mu)| (s.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / b_count).sqrt())
            .collect();
        let share = |rows: Vec<Vec<u64>>| -> Vec<Vec<f64>> {
            rows.into_iter()
                .map(|r| r.into_iter().map(|c| c as f64 / b_count).collect())
                .collect()
        };
        results.push(MetricBootstrap {
            metric,
            original_ranks: rank_values(&original[m], direction)?,
            original_values: original[m].clone(),
            value_mean,
            value_std,
            rank_freq: share(rank_counts),
            median_rank,
            ci,
            win_prob: share(wins),
            tie_prob: share(ties),
            wilcoxon,
        });
    }
    Ok(BootstrapResult {
        iterations: cfg.iterations,
        seed: cfg.seed,
        stratification: cfg.stratification,
        ci_level: cfg.ci_level,
        teams: input.teams.clone(),
        metrics: results,
    })
}
