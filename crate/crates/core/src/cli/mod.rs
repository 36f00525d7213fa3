//! Command-line front end: `gen-data`, `simulate`, `rank` and `metrics`.
//!
//! Every command reads an optional TOML experiment file (see [`config`]);
//! flags override the matching config keys. Exit codes are 0 on success,
//! 1 for invalid input or configuration and 2 for failures while running.

pub mod config;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::{DataScale, DataSection, DataSource, EvaluationSection, ExperimentConfig, PipelineEntry};

use crate::datagen::{
    load_bundle, load_metric_table, load_predictions, write_bundle, write_metric_table, DataError, DatasetBundle,
    MetricTable, PredictionSet,
};
use crate::fedsim::{run_challenge, write_results, ChallengeConfig, ChallengeResult, FedSimError};
use crate::metrics::{score_labels, F1Convention, LabelSpace};
use crate::ranking::{
    bootstrap_ranking, leaderboard_from_table, metric_table_from_predictions, write_bootstrap_outputs,
    write_leaderboard, BootstrapInput, BootstrapResult, RankTable, RankingError, Stratification, WilcoxonMode,
};

pub const LEADERBOARD_FILE: &str = "leaderboard.csv";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { ref source, .. } if source.kind() != std::io::ErrorKind::NotFound => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FedSimError> for CliError {
    fn from(e: FedSimError) -> Self {
        match e {
            FedSimError::NonFiniteLoss { .. }
            | FedSimError::NonFiniteFineTune(_)
            | FedSimError::Model(_)
            | FedSimError::Aggregation(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RankingError> for CliError {
    fn from(e: RankingError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn write_failed(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("cannot write {}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "fedsurg", version, about = "Federated challenge simulation, scoring and ranking")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-center dataset bundle.
    GenData(GenDataArgs),
    /// Train and evaluate pipelines on both challenge tasks.
    Simulate(SimulateArgs),
    /// Rank teams from a metric table or from per-case predictions.
    Rank(RankArgs),
    /// Score a predictions file per team and center.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML experiment file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed (config key `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (config key `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Comma-separated preset names (config key `pipelines`).
    #[arg(long, value_delimiter = ',')]
    pub pipelines: Option<Vec<String>>,
    /// Dataset bundle directory (config key `data.path`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Center left out of training (config key `evaluation.holdout_center`).
    #[arg(long)]
    pub holdout_center: Option<String>,
    /// `zero` or `exclude-absent` (config key `evaluation.f1_convention`).
    #[arg(long)]
    pub f1_absent_convention: Option<F1Convention>,
    /// Worker threads, 0 for one per core (config key `evaluation.workers`).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    /// Metric table CSV, predictions CSV, or a directory of per-team
    /// prediction files.
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Bootstrap iterations (config key `evaluation.bootstrap_iterations`).
    #[arg(long)]
    pub bootstrap_iters: Option<usize>,
    /// `exact`, `normal_approx` or `auto` (config key `evaluation.wilcoxon_mode`).
    #[arg(long)]
    pub wilcoxon_mode: Option<WilcoxonMode>,
    /// `stratified` or `pooled` (config key `evaluation.stratification`).
    #[arg(long)]
    pub stratification: Option<Stratification>,
    /// `zero` or `exclude-absent` (config key `evaluation.f1_convention`).
    #[arg(long)]
    pub f1_absent_convention: Option<F1Convention>,
    /// Center scored as task 1 (config key `evaluation.holdout_center`).
    #[arg(long)]
    pub holdout_center: Option<String>,
    /// Worker threads, 0 for one per core (config key `evaluation.workers`).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Number of classes (config key `evaluation.num_classes`).
    #[arg(long)]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MetricsArgs {
    /// Predictions CSV or a directory of per-team prediction files.
    pub input: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
    /// `zero` or `exclude-absent` (config key `evaluation.f1_convention`).
    #[arg(long)]
    pub f1_absent_convention: Option<F1Convention>,
    /// Number of classes (config key `evaluation.num_classes`).
    #[arg(long)]
    pub num_classes: Option<usize>,
}

/// Loads the config file (or defaults) and applies the shared flags.
fn base_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

pub fn cmd_gen_data(args: &GenDataArgs, console: &mut dyn Write) -> Result<DatasetBundle, CliError> {
    let cfg = base_config(&args.common)?;
    let generator = cfg.generator()?;
    let bundle = DatasetBundle::generate(generator)?;
    write_bundle(&bundle, &cfg.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    for c in &bundle.centers {
        writeln!(console, "center {}: {} train, {} test", c.center_id, c.train.len(), c.test.len())
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(bundle)
}

pub fn cmd_simulate(args: &SimulateArgs, console: &mut dyn Write) -> Result<ChallengeResult, CliError> {
    let mut cfg = base_config(&args.common)?;
    if let Some(names) = &args.pipelines {
        cfg.pipelines = names.iter().map(|n| PipelineEntry::Preset(n.trim().to_string())).collect();
    }
    if let Some(path) = &args.data {
        cfg.data.path = Some(path.clone());
        cfg.data.generator = None;
    }
    if let Some(h) = &args.holdout_center {
        cfg.evaluation.holdout_center = h.clone();
    }
    if let Some(c) = args.f1_absent_convention {
        cfg.evaluation.f1_convention = c;
    }
    if let Some(w) = args.workers {
        cfg.evaluation.workers = w;
    }
    cfg.validate()?;
    let pipelines = cfg.resolve_pipelines()?;
    let bundle = match cfg.data_source()? {
        DataSource::Bundle(path) => {
            if !path.exists() {
                return Err(CliError::Validation(format!("data path {} does not exist", path.display())));
            }
            load_bundle(&path)?
        }
        DataSource::Generate(g) => DatasetBundle::generate(g)?,
    };
    let challenge = ChallengeConfig {
        seed: cfg.seed,
        holdout_center: cfg.evaluation.holdout_center.clone(),
        f1_convention: cfg.evaluation.f1_convention,
    };
    let mut result = with_workers(cfg.evaluation.workers, || run_challenge(&pipelines, &bundle.centers, &challenge))??;
    result.data = Some(bundle.config);
    write_results(&result, &cfg.out).map_err(write_failed(&cfg.out))?;
    print_summary(&result, console).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(result)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn print_summary(result: &ChallengeResult, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<18} {:>10} {:>10} {:>10} {:>10}",
        "pipeline", "task1 EC", "task1 F1", "task2 EC", "task2 F1"
    )?;
    for p in &result.pipelines {
        writeln!(
            out,
            "{:<18} {:>10} {:>10} {:>10} {:>10}",
            p.name,
            pct(p.task1.report.expected_cost),
            pct(p.task1.report.f1_macro),
            pct(p.task2.average.expected_cost),
            pct(p.task2.average.f1_macro)
        )?;
        for c in &p.task2.centers {
            writeln!(
                out,
                "  center {:<9} {:>10} {:>10} {:>10} {:>10}",
                c.center,
                "",
                "",
                pct(c.report.expected_cost),
                pct(c.report.f1_macro)
            )?;
        }
    }
    Ok(())
}

fn print_leaderboard(table: &RankTable, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<18} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}",
        "team", "t1 EC", "t1 F1", "t1 rank", "t2 EC", "t2 F1", "t2 rank", "score", "final"
    )?;
    for r in &table.rows {
        writeln!(
            out,
            "{:<18} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6} {:>6}",
            r.team,
            pct(r.task1.ec),
            pct(r.task1.f1),
            r.task1.rank,
            pct(r.task2.ec),
            pct(r.task2.f1),
            r.task2.rank,
            r.final_score,
            r.final_rank
        )?;
    }
    Ok(())
}

enum RankInput {
    Table(MetricTable),
    Predictions(PredictionSet),
}

/// Reads one predictions CSV, or every `*.csv` in a directory (sorted by
/// name, team taken from the file stem unless a `team` column is present).
pub fn load_prediction_input(path: &Path, labels: LabelSpace) -> Result<PredictionSet, CliError> {
    if !path.exists() {
        return Err(CliError::Validation(format!("{} does not exist", path.display())));
    }
    if !path.is_dir() {
        return Ok(load_predictions(path, labels)?);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CliError::Validation(format!("cannot list {}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Validation(format!("no .csv files in {}", path.display())));
    }
    let mut set = PredictionSet::default();
    for f in files {
        set.merge(load_predictions(&f, labels)?);
    }
    Ok(set)
}

fn detect_rank_input(path: &Path, labels: LabelSpace) -> Result<RankInput, CliError> {
    if path.is_file() {
        let file = File::open(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let mut header = String::new();
        BufReader::new(file)
            .read_line(&mut header)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        let columns: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if columns.contains(&"metric") && columns.contains(&"value") {
            return Ok(RankInput::Table(load_metric_table(path)?));
        }
    }
    Ok(RankInput::Predictions(load_prediction_input(path, labels)?))
}

/// Everything `rank` produced.
#[derive(Debug, Clone)]
pub struct RankOutput {
    pub leaderboard: RankTable,
    /// `(scope, result)` pairs; empty for metric-table input.
    pub bootstrap: Vec<(String, BootstrapResult)>,
}

pub fn cmd_rank(args: &RankArgs, console: &mut dyn Write) -> Result<RankOutput, CliError> {
    let mut cfg = base_config(&args.common)?;
    let e = &mut cfg.evaluation;
    if let Some(b) = args.bootstrap_iters {
        e.bootstrap_iterations = b;
    }
    if let Some(m) = args.wilcoxon_mode {
        e.wilcoxon_mode = m;
    }
    if let Some(s) = args.stratification {
        e.stratification = s;
    }
    if let Some(c) = args.f1_absent_convention {
        e.f1_convention = c;
    }
    if let Some(h) = &args.holdout_center {
        e.holdout_center = h.clone();
    }
    if let Some(w) = args.workers {
        e.workers = w;
    }
    if let Some(n) = args.num_classes {
        e.num_classes = n;
    }
    cfg.validate()?;
    let e = &cfg.evaluation;
    let labels = LabelSpace::new(e.num_classes).map_err(|err| CliError::Validation(err.to_string()))?;
    let out = &cfg.out;
    std::fs::create_dir_all(out).map_err(write_failed(out))?;

    let (table, predictions) = match detect_rank_input(&args.input, labels)? {
        RankInput::Table(t) => (t, None),
        RankInput::Predictions(set) => {
            if set.is_empty() {
                return Err(CliError::Validation(format!("{} holds no predictions", args.input.display())));
            }
            let t = metric_table_from_predictions(&set, &e.holdout_center, labels, e.f1_convention)?;
            (t, Some(set))
        }
    };
    let leaderboard = leaderboard_from_table(&table)?;
    let path = out.join(LEADERBOARD_FILE);
    write_leaderboard(&leaderboard, File::create(&path).map_err(write_failed(&path))?)
        .map_err(|err| CliError::Runtime(err.to_string()))?;

    let mut bootstrap = Vec::new();
    if let Some(set) = predictions {
        let path = out.join(METRICS_FILE);
        write_metric_table(&table, File::create(&path).map_err(write_failed(&path))?)
            .map_err(|err| CliError::Runtime(err.to_string()))?;
        let others: Vec<String> = set
            .teams
            .values()
            .flat_map(|c| c.keys().cloned())
            .filter(|c| *c != e.holdout_center)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let bcfg = e.bootstrap(cfg.seed);
        for (scope, centers) in [("task1", vec![e.holdout_center.clone()]), ("task2", others)] {
            let input = BootstrapInput::from_predictions(&set, &centers, labels)?;
            bootstrap.push((scope.to_string(), bootstrap_ranking(&input, &bcfg)?));
        }
        let scoped: Vec<(&str, &BootstrapResult)> = bootstrap.iter().map(|(s, r)| (s.as_str(), r)).collect();
        write_bootstrap_outputs(&scoped, out).map_err(write_failed(out))?;
    }
    print_leaderboard(&leaderboard, console).map_err(|err| CliError::Runtime(err.to_string()))?;
    Ok(RankOutput { leaderboard, bootstrap })
}

/// One scored (team, center) group.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub team: String,
    pub center: String,
    pub cases: usize,
    pub report: crate::metrics::MetricReport,
}

pub fn score_prediction_set(
    set: &PredictionSet,
    labels: LabelSpace,
    convention: F1Convention,
) -> Result<Vec<MetricsRow>, CliError> {
    if set.is_empty() {
        return Err(CliError::Validation("no predictions to score".into()));
    }
    let mut rows = Vec::new();
    for (team, centers) in &set.teams {
        for (center, preds) in centers {
            if preds.is_empty() {
                return Err(CliError::Validation(format!("team {team}, center {center}: no cases")));
            }
            let report = score_labels(&preds.truths, &preds.preds, labels, convention)
                .map_err(|err| CliError::Validation(format!("team {team}, center {center}: {err}")))?;
            rows.push(MetricsRow {
                team: team.clone(),
                center: center.clone(),
                cases: preds.len(),
                report,
            });
        }
    }
    Ok(rows)
}

fn write_metrics_rows<W: Write>(rows: &[MetricsRow], num_classes: usize, writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["team", "center", "cases", "f1", "ec"].map(String::from).to_vec();
    header.extend((0..num_classes).map(|c| format!("f1_class_{c}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.team.clone(),
            r.center.clone(),
            r.cases.to_string(),
            r.report.f1_macro.to_string(),
            r.report.expected_cost.to_string(),
        ];
        rec.extend(r.report.f1_per_class.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `metrics.csv` into the output directory when `--out` or a config
/// file names one, otherwise prints the CSV.
pub fn cmd_metrics(args: &MetricsArgs, console: &mut dyn Write) -> Result<Vec<MetricsRow>, CliError> {
    let mut cfg = base_config(&args.common)?;
    if let Some(c) = args.f1_absent_convention {
        cfg.evaluation.f1_convention = c;
    }
    if let Some(n) = args.num_classes {
        cfg.evaluation.num_classes = n;
    }
    let labels = LabelSpace::new(cfg.evaluation.num_classes).map_err(|e| CliError::Validation(e.to_string()))?;
    let set = load_prediction_input(&args.input, labels)?;
    let rows = score_prediction_set(&set, labels, cfg.evaluation.f1_convention)?;
    let to_file = args.common.out.is_some() || args.common.config.is_some();
    if to_file {
        std::fs::create_dir_all(&cfg.out).map_err(write_failed(&cfg.out))?;
        let path = cfg.out.join(METRICS_FILE);
        let file = File::create(&path).map_err(write_failed(&path))?;
        write_metrics_rows(&rows, labels.num_classes(), file).map_err(|e| CliError::Runtime(e.to_string()))?;
    } else {
        write_metrics_rows(&rows, labels.num_classes(), console).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(rows)
}

/// Runs one parsed command, writing human-readable output to `console`.
pub fn execute(cli: &Cli, console: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, console).map(drop),
        Command::Simulate(a) => cmd_simulate(a, console).map(drop),
        Command::Rank(a) => cmd_rank(a, console).map(drop),
        Command::Metrics(a) => cmd_metrics(a, console).map(drop),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

