//! Parses a TOML experiment file the way `fedsurg simulate` does and runs
//! a one-pipeline challenge from it.

use fedsurg::cli::{DataSource, ExperimentConfig};
use fedsurg::datagen::generate_multicenter;
use fedsurg::fedsim::{run_challenge, ChallengeConfig};

const CONFIG: &str = r#"
seed = 11
pipelines = ["elbflorenz-like"]

[data.generator]
feature_skew = { scale = 0.5, shift = 2.0 }

[evaluation]
f1_convention = "exclude-absent"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    cfg.validate()?;
    let pipelines = cfg.resolve_pipelines()?;
    let DataSource::Generate(generator) = cfg.data_source()? else {
        unreachable!("no data path configured")
    };
    println!(
        "{} frames x {} features, skew {:?}",
        generator.frames_per_video, generator.feature_dim, generator.feature_skew
    );
    let data = generate_multicenter(&generator)?;
    let challenge = ChallengeConfig {
        seed: cfg.seed,
        holdout_center: cfg.evaluation.holdout_center.clone(),
        f1_convention: cfg.evaluation.f1_convention,
    };
    let result = run_challenge(&pipelines, &data, &challenge)?;
    for p in &result.pipelines {
        println!(
            "{}: holdout F1 {:.3}, local F1 {:.3}",
            p.name, p.task1.report.f1_macro, p.task2.average.f1_macro
        );
    }
    Ok(())
}
