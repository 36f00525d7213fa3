//! Leaderboard construction and rank-stability analysis.
//!
//! Each metric is ranked separately with competition ranking, a task rank is
//! the rank of the mean of the two metric ranks, and the final placement is
//! the rank of the mean of the two task ranks.

mod bootstrap;
mod output;
mod wilcoxon;

pub use bootstrap::{
    bootstrap_ranking, BootstrapConfig, BootstrapInput, BootstrapResult, MetricBootstrap, Stratification, Stratum,
};
pub use output::{
    write_bootstrap_outputs, write_leaderboard, write_rankfreq, write_rankstability, write_wilcoxon, write_winprob,
};
pub use wilcoxon::{exact_two_sided_p, wilcoxon_signed_rank, WilcoxonMode, WilcoxonResult, EXACT_MAX_N};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{MetricKind, MetricTable, PredictionSet};
use crate::metrics::{score_labels, F1Convention, LabelSpace, MetricsError};

#[derive(Debug, Error)]
pub enum RankingError {
    #[error("nothing to rank")]
    Empty,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("metric table is incomplete for task {task}; missing: {}", missing.join(", "))]
    MissingCells { task: u8, missing: Vec<String> },
    #[error("team sets differ between tasks: {0}")]
    TeamMismatch(String),
    #[error("unpaired case sets: {0}")]
    Unpaired(String),
    #[error("degenerate paired sample")]
    Degenerate,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

impl Direction {
    pub fn for_metric(metric: MetricKind) -> Self {
        if metric.higher_is_better() {
            Direction::HigherBetter
        } else {
            Direction::LowerBetter
        }
    }
}

/// Competition ("1224") ranking: tied values share the smallest rank and the
/// next distinct value skips past the tie group.
pub fn rank_values(values: &[f64], direction: Direction) -> Result<Vec<usize>, RankingError> {
    if values.is_empty() {
        return Err(RankingError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(RankingError::NonFinite(i));
    }
    Ok(values
        .iter()
        .map(|&v| {
            1 + values
                .iter()
                .filter(|&&o| match direction {
                    Direction::LowerBetter => o < v,
                    Direction::HigherBetter => o > v,
                })
                .count()
        })
        .collect())
}

/// One team's standing within a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRanking {
    pub team: String,
    /// Metric values averaged over the task's centers, as fractions.
    pub ec: f64,
    pub f1: f64,
    pub ec_rank: usize,
    pub f1_rank: usize,
    /// Mean of the two metric ranks.
    pub avg_rank: f64,
    /// Rank of `avg_rank` among teams.
    pub rank: usize,
}

/// Ranks every team of `table` on `task`. Metrics are first averaged over
/// the task's centers (a single holdout center for task 1).
pub fn task_ranks(table: &MetricTable, task: u8) -> Result<Vec<TaskRanking>, RankingError> {
    let teams = table.teams();
    let centers = table.centers(task);
    if teams.is_empty() {
        return Err(RankingError::Empty);
    }
    if centers.is_empty() {
        return Err(RankingError::MissingCells {
            task,
            missing: vec![format!("no entries for task {task}")],
        });
    }
    let mut missing = Vec::new();
    let mut means = Vec::with_capacity(teams.len());
    for team in &teams {
        let mut sums = [0.0; 2];
        for (slot, metric) in [MetricKind::Ec, MetricKind::F1].into_iter().enumerate() {
            for center in &centers {
                match table.get(team, task, center, metric) {
                    Some(v) => sums[slot] += v,
                    None => missing.push(format!("{team}/task {task}/center {center}/{metric}")),
                }
            }
        }
        let n = centers.len() as f64;
        means.push((sums[0] / n, sums[1] / n));
    }
    if !missing.is_empty() {
        return Err(RankingError::MissingCells { task, missing });
    }
    let ec: Vec<f64> = means.iter().map(|m| m.0).collect();
    let f1: Vec<f64> = means.iter().map(|m| m.1).collect();
    let ec_rank = rank_values(&ec, Direction::LowerBetter)?;
    let f1_rank = rank_values(&f1, Direction::HigherBetter)?;
    let avg: Vec<f64> = ec_rank
        .iter()
        .zip(&f1_rank)
        .map(|(&a, &b)| (a + b) as f64 / 2.0)
        .collect();
    let rank = rank_values(&avg, Direction::LowerBetter)?;
    Ok(teams
        .into_iter()
        .enumerate()
        .map(|(i, team)| TaskRanking {
            team,
            ec: ec[i],
            f1: f1[i],
            ec_rank: ec_rank[i],
            f1_rank: f1_rank[i],
            avg_rank: avg[i],
            rank: rank[i],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub team: String,
    pub task1: TaskRanking,
    pub task2: TaskRanking,
    /// Mean of the two task ranks.
    pub final_score: f64,
    pub final_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub rows: Vec<LeaderboardRow>,
}

impl RankTable {
    pub fn row(&self, team: &str) -> Option<&LeaderboardRow> {
        self.rows.iter().find(|r| r.team == team)
    }
}

/// Combines the two task rankings into final placements.
pub fn final_leaderboard(task1: &[TaskRanking], task2: &[TaskRanking]) -> Result<RankTable, RankingError> {
    let a: BTreeSet<&str> = task1.iter().map(|t| t.team.as_str()).collect();
    let b: BTreeSet<&str> = task2.iter().map(|t| t.team.as_str()).collect();
    if a.len() != task1.len() || b.len() != task2.len() {
        return Err(RankingError::TeamMismatch("duplicate team in a task ranking".into()));
    }
    if a != b {
        let only: Vec<&str> = a.symmetric_difference(&b).copied().collect();
        return Err(RankingError::TeamMismatch(only.join(", ")));
    }
    let pairs: Vec<(&TaskRanking, &TaskRanking)> = task1
        .iter()
        .map(|t1| (t1, task2.iter().find(|t2| t2.team == t1.team).expect("same team set")))
        .collect();
    let scores: Vec<f64> = pairs
        .iter()
        .map(|(t1, t2)| (t1.rank + t2.rank) as f64 / 2.0)
        .collect();
    let ranks = rank_values(&scores, Direction::LowerBetter)?;
    Ok(RankTable {
        rows: pairs
            .into_iter()
            .zip(scores.into_iter().zip(ranks))
            .map(|((t1, t2), (final_score, final_rank))| LeaderboardRow {
                team: t1.team.clone(),
                task1: t1.clone(),
                task2: t2.clone(),
                final_score,
                final_rank,
            })
            .collect(),
    })
}

/// Task 1 then task 2 ranking of a complete metric table.
pub fn leaderboard_from_table(table: &MetricTable) -> Result<RankTable, RankingError> {
    final_leaderboard(&task_ranks(table, 1)?, &task_ranks(table, 2)?)
}

/// Scores predictions into a metric table: the holdout center's cases are
/// task 1, every other center is a task 2 center.
pub fn metric_table_from_predictions(
    predictions: &PredictionSet,
    holdout_center: &str,
    labels: LabelSpace,
    convention: F1Convention,
) -> Result<MetricTable, RankingError> {
    let mut table = MetricTable::new();
    for (team, centers) in &predictions.teams {
        for (center, preds) in centers {
            if preds.is_empty() {
                return Err(RankingError::InvalidArgument(format!(
                    "team {team} has no predictions for center {center}"
                )));
            }
            let report = score_labels(&preds.truths, &preds.preds, labels, convention)?;
            let task = if center == holdout_center { 1 } else { 2 };
            for (metric, value) in [(MetricKind::Ec, report.expected_cost), (MetricKind::F1, report.f1_macro)] {
                table
                    .insert(team, task, center, metric, value)
                    .map_err(RankingError::InvalidArgument)?;
            }
        }
    }
    Ok(table)
}
