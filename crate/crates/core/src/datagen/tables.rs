//! CSV ingestion for aggregate metric tables and per-case predictions.
//!
//! Metric tables: `team,task,center,metric,value`, metric is `f1` or `ec`;
//! if any value exceeds 1.0 the whole table is read as percentages.
//!
//! Predictions: `case_id,center,true_label,pred_label`, optionally with a
//! `team` column. Files without one are attributed to a caller-supplied team.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::metrics::LabelSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    F1,
    Ec,
}

impl MetricKind {
    pub const ALL: [MetricKind; 2] = [MetricKind::Ec, MetricKind::F1];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::F1 => "f1",
            MetricKind::Ec => "ec",
        }
    }

    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::F1)
    }
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f1" => Ok(MetricKind::F1),
            "ec" => Ok(MetricKind::Ec),
            other => Err(format!("unknown metric `{other}` (expected f1 or ec)")),
        }
    }
}

/// Metric values keyed by `(team, task, center, metric)`, stored as fractions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    cells: BTreeMap<(String, u8, String, MetricKind), f64>,
}

impl MetricTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts one fraction-valued cell; a repeated key is an error.
    pub fn insert(
        &mut self,
        team: &str,
        task: u8,
        center: &str,
        metric: MetricKind,
        value: f64,
    ) -> Result<(), String> {
        if !value.is_finite() {
            return Err(format!("non-finite value for {team}/task {task}/center {center}/{metric}"));
        }
        let key = (team.to_string(), task, center.to_string(), metric);
        if self.cells.contains_key(&key) {
            return Err(format!(
                "duplicate entry for team {team}, task {task}, center {center}, metric {metric}"
            ));
        }
        self.cells.insert(key, value);
        Ok(())
    }

    pub fn get(&self, team: &str, task: u8, center: &str, metric: MetricKind) -> Option<f64> {
        self.cells
            .get(&(team.to_string(), task, center.to_string(), metric))
            .copied()
    }

    /// Teams in sorted order.
    pub fn teams(&self) -> Vec<String> {
        let mut teams: Vec<String> = self.cells.keys().map(|k| k.0.clone()).collect();
        teams.dedup();
        teams
    }

    /// Centers that appear for `task`, sorted.
    pub fn centers(&self, task: u8) -> Vec<String> {
        let mut centers: Vec<String> = self
            .cells
            .keys()
            .filter(|k| k.1 == task)
            .map(|k| k.2.clone())
            .collect();
        centers.sort();
        centers.dedup();
        centers
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u8, &str, MetricKind, f64)> {
        self.cells
            .iter()
            .map(|((t, task, c, m), v)| (t.as_str(), *task, c.as_str(), *m, *v))
    }
}

#[derive(Debug, Deserialize)]
struct MetricRow {
    team: String,
    task: u8,
    center: String,
    metric: String,
    value: f64,
}

/// Parses a metric table from any reader; `source` names it in errors.
pub fn read_metric_table<R: Read>(reader: R, source: &str) -> Result<MetricTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Table {
        path: source.into(),
        reason: e.to_string(),
    })?;
    for required in ["team", "task", "center", "metric", "value"] {
        if !headers.iter().any(|h| h == required) {
            return Err(DataError::Table {
                path: source.into(),
                reason: format!("missing column `{required}`"),
            });
        }
    }
    let headers = headers.clone();
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(malformed(source, &e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let fail = |reason: String| DataError::Malformed {
            path: source.into(),
            line,
            reason,
        };
        let row: MetricRow = record.deserialize(Some(&headers)).map_err(|e| fail(e.to_string()))?;
        let metric: MetricKind = row.metric.parse().map_err(fail)?;
        if !row.value.is_finite() || row.value < 0.0 {
            return Err(fail(format!("value {} is not a non-negative number", row.value)));
        }
        rows.push((line, row, metric));
    }
    let scale = if rows.iter().any(|(_, r, _)| r.value > 1.0) { 100.0 } else { 1.0 };
    let mut table = MetricTable::new();
    for (line, row, metric) in rows {
        table
            .insert(&row.team, row.task, &row.center, metric, row.value / scale)
            .map_err(|reason| DataError::Malformed {
                path: source.into(),
                line,
                reason,
            })?;
    }
    Ok(table)
}

fn malformed(source: &str, e: &csv::Error) -> DataError {
    DataError::Malformed {
        path: source.into(),
        line: e.position().map_or(0, |p| p.line()),
        reason: match e.kind() {
            csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
            _ => e.to_string(),
        },
    }
}

pub fn load_metric_table(path: &Path) -> Result<MetricTable, DataError> {
    let file = open(path)?;
    read_metric_table(file, &path.display().to_string())
}

/// Writes fractions with full precision in the same schema it reads.
pub fn write_metric_table<W: Write>(table: &MetricTable, writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["team", "task", "center", "metric", "value"])?;
    for (team, task, center, metric, value) in table.iter() {
        wtr.write_record([team, &task.to_string(), center, metric.as_str(), &value.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team: Option<String>,
    pub case_id: String,
    pub center: String,
    pub true_label: usize,
    pub pred_label: usize,
}

/// Paired label sequences for one center, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenterPredictions {
    pub case_ids: Vec<String>,
    pub truths: Vec<usize>,
    pub preds: Vec<usize>,
}

impl CenterPredictions {
    pub fn len(&self) -> usize {
        self.truths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truths.is_empty()
    }

    pub fn push(&mut self, case_id: String, truth: usize, pred: usize) {
        self.case_ids.push(case_id);
        self.truths.push(truth);
        self.preds.push(pred);
    }
}

/// Predictions grouped by team, then by center.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet {
    pub teams: BTreeMap<String, BTreeMap<String, CenterPredictions>>,
}

impl PredictionSet {
    pub fn is_empty(&self) -> bool {
        self.teams.is_empty()
    }

    pub fn add(&mut self, team: &str, center: &str, case_id: String, truth: usize, pred: usize) {
        self.teams
            .entry(team.to_string())
            .or_default()
            .entry(center.to_string())
            .or_default()
            .push(case_id, truth, pred);
    }

    /// Folds another set in, e.g. one file per team.
    pub fn merge(&mut self, other: PredictionSet) {
        for (team, centers) in other.teams {
            let slot = self.teams.entry(team).or_default();
            for (center, preds) in centers {
                let dst = slot.entry(center).or_default();
                for ((id, t), p) in preds.case_ids.into_iter().zip(preds.truths).zip(preds.preds) {
                    dst.push(id, t, p);
                }
            }
        }
    }
}

/// Parses predictions; rows without a `team` column go to `default_team`.
pub fn read_predictions<R: Read>(
    reader: R,
    source: &str,
    labels: LabelSpace,
    default_team: &str,
) -> Result<PredictionSet, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| malformed(source, &e))?.clone();
    for required in ["case_id", "center", "true_label", "pred_label"] {
        if !headers.iter().any(|h| h == required) {
            return Err(DataError::Table {
                path: source.into(),
                reason: format!("missing column `{required}`"),
            });
        }
    }
    let mut set = PredictionSet::default();
    let mut record = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(malformed(source, &e)),
        }
        let line = record.position().map_or(0, |p| p.line());
        let row: PredictionRecord = record
            .deserialize(Some(&headers))
            .map_err(|e| DataError::Malformed {
                path: source.into(),
                line,
                reason: e.to_string(),
            })?;
        if row.center.is_empty() || row.case_id.is_empty() {
            return Err(DataError::Malformed {
                path: source.into(),
                line,
                reason: "empty case_id or center".into(),
            });
        }
        for (name, value) in [("true_label", row.true_label), ("pred_label", row.pred_label)] {
            if !labels.contains(value) {
                return Err(DataError::Malformed {
                    path: source.into(),
                    line,
                    reason: format!("{name} {value} outside 0..{}", labels.num_classes()),
                });
            }
        }
        let team = row.team.as_deref().unwrap_or(default_team);
        set.add(team, &row.center, row.case_id, row.true_label, row.pred_label);
    }
    Ok(set)
}

pub fn load_predictions(path: &Path, labels: LabelSpace) -> Result<PredictionSet, DataError> {
    let default_team = path
        .file_stem()
        .map_or_else(|| "team".to_string(), |s| s.to_string_lossy().into_owned());
    read_predictions(open(path)?, &path.display().to_string(), labels, &default_team)
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], writer: W) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    let with_team = records.first().is_some_and(|r| r.team.is_some());
    if with_team {
        wtr.write_record(["team", "case_id", "center", "true_label", "pred_label"])?;
    } else {
        wtr.write_record(["case_id", "center", "true_label", "pred_label"])?;
    }
    for r in records {
        let mut row: Vec<String> = Vec::with_capacity(5);
        if with_team {
            row.push(r.team.clone().unwrap_or_default());
        }
        row.extend([
            r.case_id.clone(),
            r.center.clone(),
            r.true_label.to_string(),
            r.pred_label.to_string(),
        ]);
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
