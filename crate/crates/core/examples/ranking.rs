//! Leaderboard from a metric table, then bootstrap rank stability and
//! pairwise Wilcoxon tests on per-case predictions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedsurg::datagen::{read_metric_table, MetricKind};
use fedsurg::metrics::LabelSpace;
use fedsurg::ranking::{bootstrap_ranking, leaderboard_from_table, BootstrapConfig, BootstrapInput, Stratum};

const TABLE: &str = "team,task,center,metric,value
red,1,4,ec,40.0
red,1,4,f1,10.0
green,1,4,ec,30.0
green,1,4,f1,12.0
blue,1,4,ec,35.0
blue,1,4,f1,20.0
red,2,1,ec,20.0
red,2,1,f1,25.0
red,2,2,ec,22.0
red,2,2,f1,18.0
green,2,1,ec,25.0
green,2,1,f1,15.0
green,2,2,ec,18.0
green,2,2,f1,14.0
blue,2,1,ec,21.0
blue,2,1,f1,22.0
blue,2,2,ec,24.0
blue,2,2,f1,16.0
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let table = read_metric_table(TABLE.as_bytes(), "inline")?;
    for row in leaderboard_from_table(&table)?.rows {
        println!(
            "{:6} task1 avg rank {:.1} -> {}, task2 avg rank {:.1} -> {}, final {:.1} -> {}",
            row.team,
            row.task1.avg_rank,
            row.task1.rank,
            row.task2.avg_rank,
            row.task2.rank,
            row.final_score,
            row.final_rank
        );
    }

    // three teams of increasing accuracy on two centers
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let teams = vec!["weak".to_string(), "mid".to_string(), "strong".to_string()];
    let strata = ["1", "2"]
        .iter()
        .map(|name| {
            let truths: Vec<usize> = (0..30).map(|_| rng.random_range(0..6)).collect();
            let preds = [0.2, 0.4, 0.6]
                .iter()
                .map(|&hit| {
                    truths
                        .iter()
                        .map(|&t| if rng.random_bool(hit) { t } else { rng.random_range(0..6) })
                        .collect()
                })
                .collect();
            Stratum {
                name: name.to_string(),
                truths,
                preds,
            }
        })
        .collect();
    let input = BootstrapInput::new(teams.clone(), strata, LabelSpace::CHALLENGE)?;
    let cfg = BootstrapConfig {
        iterations: 2000,
        seed: 1,
        ..BootstrapConfig::default()
    };
    let result = bootstrap_ranking(&input, &cfg)?;
    let f1 = result.metric(MetricKind::F1).expect("f1 is bootstrapped");
    for (t, team) in teams.iter().enumerate() {
        println!(
            "{team:6} F1 {:.3}  rank freq {:?}  median {} CI {:?}",
            f1.original_values[t],
            f1.rank_freq[t].iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>(),
            f1.median_rank[t],
            f1.ci[t]
        );
    }
    if let Some(w) = &f1.wilcoxon[2][0] {
        println!("strong vs weak: W = {}, p = {:.3e}", w.statistic, w.p_value);
    }
    Ok(())
}
