//! CSV writers for leaderboards and bootstrap summaries.
//!
//! Bootstrap writers take `(scope, result)` pairs so one file can hold
//! several analyses, e.g. `task1` and `task2`.

use std::io::Write;
use std::path::Path;

use super::{BootstrapResult, RankTable};

type CsvResult = Result<(), csv::Error>;

pub fn write_leaderboard<W: Write>(table: &RankTable, writer: W) -> CsvResult {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "team",
        "task1_ec",
        "task1_f1",
        "task1_ec_rank",
        "task1_f1_rank",
        "task1_avg_rank",
        "task1_rank",
        "task2_ec",
        "task2_f1",
        "task2_ec_rank",
        "task2_f1_rank",
        "task2_avg_rank",
        "task2_rank",
        "final_score",
        "final_rank",
    ])?;
    for row in &table.rows {
        let mut rec = vec![row.team.clone()];
        for t in [&row.task1, &row.task2] {
            rec.extend([
                t.ec.to_string(),
                t.f1.to_string(),
                t.ec_rank.to_string(),
                t.f1_rank.to_string(),
                t.avg_rank.to_string(),
                t.rank.to_string(),
            ]);
        }
        rec.extend([row.final_score.to_string(), row.final_rank.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (scope, metric, team): rank frequencies, median, CI and the
/// bootstrapped mean and standard deviation of the metric.
pub fn write_rankfreq<W: Write>(results: &[(&str, &BootstrapResult)], writer: W) -> CsvResult {
    let mut w = csv::Writer::from_writer(writer);
    let max_teams = results.iter().map(|(_, r)| r.teams.len()).max().unwrap_or(0);
    let mut header: Vec<String> = ["scope", "metric", "team", "original_value", "original_rank"]
        .map(String::from)
        .to_vec();
    header.extend((1..=max_teams).map(|r| format!("rank_{r}")));
    header.extend(["median_rank", "ci_lo", "ci_hi", "mean", "std"].map(String::from));
    w.write_record(&header)?;
    for (scope, r) in results {
        for m in &r.metrics {
            for (t, team) in r.teams.iter().enumerate() {
                let mut rec = vec![
                    scope.to_string(),
                    m.metric.to_string(),
                    team.clone(),
                    m.original_values[t].to_string(),
                    m.original_ranks[t].to_string(),
                ];
                rec.extend((0..max_teams).map(|k| m.rank_freq[t].get(k).map_or(String::new(), f64::to_string)));
                rec.extend([
                    m.median_rank[t].to_string(),
                    m.ci[t].0.to_string(),
                    m.ci[t].1.to_string(),
                    m.value_mean[t].to_string(),
                    m.value_std[t].to_string(),
                ]);
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Ordered pairs: share of iterations `team` strictly outranks `opponent`.
pub fn write_winprob<W: Write>(results: &[(&str, &BootstrapResult)], writer: W) -> CsvResult {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scope", "metric", "team", "opponent", "win_prob", "tie_prob"])?;
    for (scope, r) in results {
        for m in &r.metrics {
            for (a, team) in r.teams.iter().enumerate() {
                for (b, opponent) in r.teams.iter().enumerate() {
                    if a == b {
                        continue;
                    }
                    w.write_record([
                        scope,
                        m.metric.as_str(),
                        team,
                        opponent,
                        &m.win_prob[a][b].to_string(),
                        &m.tie_prob[a][b].to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Unordered pairs; statistic and p-value are blank when every paired
/// bootstrap value coincides.
pub fn write_wilcoxon<W: Write>(results: &[(&str, &BootstrapResult)], writer: W) -> CsvResult {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scope", "metric", "team", "opponent", "n", "statistic", "p_value", "mode"])?;
    for (scope, r) in results {
        for m in &r.metrics {
            for a in 0..r.teams.len() {
                for b in (a + 1)..r.teams.len() {
                    let (n, stat, p, mode) = match &m.wilcoxon[a][b] {
                        Some(t) => (
                            t.n.to_string(),
                            t.statistic.to_string(),
                            format!("{:e}", t.p_value),
                            match t.mode {
                                super::WilcoxonMode::Exact => "exact",
                                _ => "normal_approx",
                            }
                            .to_string(),
                        ),
                        None => ("0".into(), String::new(), String::new(), "degenerate".into()),
                    };
                    w.write_record([scope, m.metric.as_str(), &r.teams[a], &r.teams[b], &n, &stat, &p, &mode])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Long format for rank-stability bubble charts.
pub fn write_rankstability<W: Write>(results: &[(&str, &BootstrapResult)], writer: W) -> CsvResult {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scope", "metric", "team", "rank", "frequency", "median", "ci_lo", "ci_hi"])?;
    for (scope, r) in results {
        for m in &r.metrics {
            for (t, team) in r.teams.iter().enumerate() {
                for (k, freq) in m.rank_freq[t].iter().enumerate() {
                    w.write_record([
                        scope,
                        m.metric.as_str(),
                        team,
                        &(k + 1).to_string(),
                        &freq.to_string(),
                        &m.median_rank[t].to_string(),
                        &m.ci[t].0.to_string(),
                        &m.ci[t].1.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the four bootstrap CSVs into `dir`.
pub fn write_bootstrap_outputs(results: &[(&str, &BootstrapResult)], dir: &Path) -> std::io::Result<()> {
    let files: [(&str, fn(&[(&str, &BootstrapResult)], std::fs::File) -> CsvResult); 4] = [
        ("bootstrap_rankfreq.csv", write_rankfreq),
        ("winprob.csv", write_winprob),
        ("wilcoxon.csv", write_wilcoxon),
        ("rankstability_plotdata.csv", write_rankstability),
    ];
    std::fs::create_dir_all(dir)?;
    for (name, write) in files {
        let file = std::fs::File::create(dir.join(name))?;
        write(results, file).map_err(std::io::Error::other)?;
    }
    Ok(())
}
