use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::Path;

use super::ChallengeResult;
use crate::datagen::{write_predictions, PredictionRecord};

pub const RESULTS_FILE: &str = "results.json";
/// All pipelines' predictions with a `team` column.
pub const PREDICTIONS_FILE: &str = "predictions.csv";
/// One `<pipeline>.csv` per pipeline, without the team column.
pub const PREDICTIONS_DIR: &str = "predictions";

/// Writes the result summary and prediction files into `dir`.
pub fn write_results(result: &ChallengeResult, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir.join(PREDICTIONS_DIR))?;
    let json = BufWriter::new(File::create(dir.join(RESULTS_FILE))?);
    serde_json::to_writer_pretty(json, result).map_err(io::Error::other)?;

    let all = result.predictions();
    write_predictions(&all, File::create(dir.join(PREDICTIONS_FILE))?).map_err(io::Error::other)?;
    for p in &result.pipelines {
        let records: Vec<PredictionRecord> = p
            .predictions()
            .into_iter()
            .map(|r| PredictionRecord { team: None, ..r })
            .collect();
        let path = dir.join(PREDICTIONS_DIR).join(format!("{}.csv", p.name));
        write_predictions(&records, File::create(path)?).map_err(io::Error::other)?;
    }
    Ok(())
}
