//! Runs the three preset pipelines through training, holdout evaluation
//! and per-center adaptation, then ranks them.

use fedsurg::datagen::{generate_multicenter, GeneratorConfig, MetricKind, MetricTable};
use fedsurg::fedsim::{run_challenge, ChallengeConfig, StrategyPipeline};
use fedsurg::ranking::leaderboard_from_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = 1;
    let data = generate_multicenter(&GeneratorConfig::desk_scale().with_seed(seed))?;
    let cfg = ChallengeConfig {
        seed,
        ..ChallengeConfig::default()
    };
    let result = run_challenge(&StrategyPipeline::presets(), &data, &cfg)?;

    let mut table = MetricTable::new();
    for p in &result.pipelines {
        let t1 = &p.task1.report;
        let t2 = &p.task2.average;
        println!(
            "{:16} holdout F1 {:5.1}% EC {:5.1}% | local F1 {:5.1}% EC {:5.1}%",
            p.name,
            100.0 * t1.f1_macro,
            100.0 * t1.expected_cost,
            100.0 * t2.f1_macro,
            100.0 * t2.expected_cost
        );
        let last = p.telemetry.last().expect("at least one round");
        println!("{:16} last round global validation F1 {:.3}", "", last.global_score);
        table.insert(&p.name, 1, &p.task1.center, MetricKind::F1, t1.f1_macro)?;
        table.insert(&p.name, 1, &p.task1.center, MetricKind::Ec, t1.expected_cost)?;
        for c in &p.task2.centers {
            table.insert(&p.name, 2, &c.center, MetricKind::F1, c.report.f1_macro)?;
            table.insert(&p.name, 2, &c.center, MetricKind::Ec, c.report.expected_cost)?;
        }
    }
    for row in leaderboard_from_table(&table)?.rows {
        println!("{:16} task1 #{} task2 #{} final #{}", row.team, row.task1.rank, row.task2.rank, row.final_rank);
    }
    Ok(())
}
