use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pipeline::{stream_rng, video_inputs, PipelineModel, Predictor, ResolvedSampler};
use super::{AggregationStrategy, FedSimError, InferenceSpec, LossSpec, StrategyPipeline};
use crate::aggregation::{fed_avg, fed_median, fed_opt_apply, ClientUpdate, ParameterVector, ServerOptState};
use crate::datagen::{CenterDataset, GeneratorConfig, PredictionRecord};
use crate::metrics::{macro_f1_with, score_labels, ConfusionMatrix, F1Convention, LabelSpace, MetricReport};
use crate::models::{
    inverse_frequency_weights, Batch, LocalOptimizer, LossConfig, LossKind, Model, ModelError, Triplet,
    VideoInstance,
};

/// Settings shared by every pipeline of a challenge run. They replace the
/// matching fields of each pipeline's federated config so all pipelines
/// see the same split and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChallengeConfig {
    pub seed: u64,
    pub holdout_center: String,
    pub f1_convention: F1Convention,
}

impl Default for ChallengeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            holdout_center: "4".into(),
            f1_convention: F1Convention::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientTelemetry {
    pub client_id: String,
    pub num_examples: usize,
    pub validation_cases: usize,
    /// Mean training loss per epoch; `None` when an epoch had no batches.
    pub epoch_losses: Vec<Option<f64>>,
    /// Validation macro-F1 after each epoch.
    pub epoch_scores: Vec<f64>,
    pub best_epoch: usize,
    pub local_best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTelemetry {
    pub round: usize,
    pub clients: Vec<ClientTelemetry>,
    /// Mean validation macro-F1 of the aggregated model over the clients.
    pub global_score: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedGlobal {
    pub model: PipelineModel,
    pub telemetry: Vec<RoundTelemetry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterReport {
    pub center: String,
    pub report: MetricReport,
    #[serde(skip)]
    pub predictions: Vec<PredictionRecord>,
}

/// Arithmetic means of the per-center metric values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AverageReport {
    pub f1_macro: f64,
    pub expected_cost: f64,
}

impl AverageReport {
    pub fn of(reports: &[CenterReport]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(Self {
            f1_macro: reports.iter().map(|r| r.report.f1_macro).sum::<f64>() / n,
            expected_cost: reports.iter().map(|r| r.report.expected_cost).sum::<f64>() / n,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task2Result {
    pub centers: Vec<CenterReport>,
    pub average: AverageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub name: String,
    pub pipeline: StrategyPipeline,
    pub task1: CenterReport,
    pub task2: Task2Result,
    pub telemetry: Vec<RoundTelemetry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChallengeResult {
    pub seed: u64,
    pub holdout_center: String,
    pub f1_convention: F1Convention,
    pub num_classes: usize,
    /// Generator settings when the data was synthesized in-process.
    pub data: Option<GeneratorConfig>,
    pub pipelines: Vec<PipelineResult>,
}

impl ChallengeResult {
    pub fn pipeline(&self, name: &str) -> Option<&PipelineResult> {
        self.pipelines.iter().find(|p| p.name == name)
    }

    /// Every pipeline's predictions, task 1 first, tagged with the pipeline
    /// name as team.
    pub fn predictions(&self) -> Vec<PredictionRecord> {
        self.pipelines.iter().flat_map(PipelineResult::predictions).collect()
    }
}

impl PipelineResult {
    pub fn predictions(&self) -> Vec<PredictionRecord> {
        std::iter::once(&self.task1)
            .chain(&self.task2.centers)
            .flat_map(|c| c.predictions.iter().cloned())
            .collect()
    }
}

/// Per-pipeline state that does not change during a run.
struct Ctx<'a> {
    pipeline: &'a StrategyPipeline,
    sampler: ResolvedSampler,
    labels: LabelSpace,
}

impl<'a> Ctx<'a> {
    fn new(pipeline: &'a StrategyPipeline, datasets: &[&CenterDataset]) -> Result<Self, FedSimError> {
        pipeline.validate()?;
        let first = datasets
            .iter()
            .flat_map(|d| d.train.iter().chain(&d.test))
            .next()
            .ok_or_else(|| FedSimError::InvalidConfig("datasets hold no videos".into()))?;
        let num_classes = datasets[0].class_priors.len();
        let labels = LabelSpace::new(num_classes)?;
        Ok(Self {
            pipeline,
            sampler: pipeline.sampler.resolve(first.len())?,
            labels,
        })
    }

    fn seed(&self) -> u64 {
        self.pipeline.federated.seed
    }

    fn per_frame(&self) -> bool {
        matches!(self.pipeline.inference, InferenceSpec::MajorityVote)
    }

    fn main_loss(&self, videos: &[&VideoInstance]) -> Result<LossConfig, ModelError> {
        match self.pipeline.loss {
            LossSpec::CrossEntropy => Ok(LossConfig::cross_entropy()),
            LossSpec::WeightedCrossEntropy => {
                let labels: Vec<usize> = videos.iter().map(|v| v.label).collect();
                LossConfig::weighted_cross_entropy(inverse_frequency_weights(&labels, self.labels.num_classes()))
            }
            LossSpec::Triplet { margin } => LossConfig::triplet(margin),
        }
    }

    fn predict(
        &self,
        model: &PipelineModel,
        videos: &[&VideoInstance],
        support: &[&VideoInstance],
    ) -> Result<Vec<usize>, ModelError> {
        let predictor = Predictor::new(
            self.pipeline.inference,
            &self.sampler,
            model,
            support,
            self.labels.num_classes(),
            self.seed(),
        )?;
        videos.iter().map(|v| predictor.predict(v)).collect()
    }

    fn validation_f1(
        &self,
        model: &PipelineModel,
        videos: &[&VideoInstance],
        support: &[&VideoInstance],
    ) -> Result<f64, FedSimError> {
        let preds = self.predict(model, videos, support)?;
        let truths: Vec<usize> = videos.iter().map(|v| v.label).collect();
        let cm = ConfusionMatrix::build(&truths, &preds, self.labels)?;
        Ok(macro_f1_with(&cm, self.pipeline.federated.f1_convention))
    }

    fn evaluate(
        &self,
        model: &PipelineModel,
        center: &CenterDataset,
        support: &[&VideoInstance],
    ) -> Result<CenterReport, FedSimError> {
        if center.test.is_empty() {
            return Err(FedSimError::EmptyTestSet(center.center_id.clone()));
        }
        let videos: Vec<&VideoInstance> = center.test.iter().collect();
        let preds = self.predict(model, &videos, support)?;
        let truths: Vec<usize> = videos.iter().map(|v| v.label).collect();
        let report = score_labels(&truths, &preds, self.labels, self.pipeline.federated.f1_convention)?;
        let predictions = videos
            .iter()
            .zip(&preds)
            .map(|(v, &p)| PredictionRecord {
                team: Some(self.pipeline.name.clone()),
                case_id: v.case_id.clone(),
                center: center.center_id.clone(),
                true_label: v.label,
                pred_label: p,
            })
            .collect();
        Ok(CenterReport {
            center: center.center_id.clone(),
            report,
            predictions,
        })
    }

    /// One pass over `videos` in shuffled mini-batches. Returns the mean
    /// batch loss, or `None` if no batch could be formed.
    fn train_epoch<R: Rng + ?Sized>(
        &self,
        model: &mut PipelineModel,
        opt: &mut LocalOptimizer,
        videos: &[&VideoInstance],
        loss: &LossConfig,
        rng: &mut R,
    ) -> Result<Option<f64>, ModelError> {
        let fed = &self.pipeline.federated;
        let batches: Vec<Batch> = if loss.kind == LossKind::TripletMargin {
            let inputs: Vec<Vec<f64>> = videos
                .iter()
                .map(|v| video_inputs(&self.sampler, false, v, model, rng).map(|mut x| x.remove(0)))
                .collect::<Result<_, _>>()?;
            let mut order: Vec<usize> = (0..videos.len()).collect();
            order.shuffle(rng);
            let mut triplets = Vec::with_capacity(order.len());
            for &a in &order {
                let label = videos[a].label;
                let same: Vec<usize> = (0..videos.len()).filter(|&i| i != a && videos[i].label == label).collect();
                let other: Vec<usize> = (0..videos.len()).filter(|&i| videos[i].label != label).collect();
                if other.is_empty() {
                    continue;
                }
                let p = if same.is_empty() { a } else { same[rng.random_range(0..same.len())] };
                let n = other[rng.random_range(0..other.len())];
                triplets.push(Triplet {
                    anchor: inputs[a].clone(),
                    positive: inputs[p].clone(),
                    negative: inputs[n].clone(),
                });
            }
            triplets
                .chunks(fed.batch_size)
                .map(|c| Batch::Triplets(c.to_vec()))
                .collect()
        } else {
            let mut samples: Vec<(Vec<f64>, usize)> = Vec::new();
            for v in videos {
                for x in video_inputs(&self.sampler, self.per_frame(), v, model, rng)? {
                    samples.push((x, v.label));
                }
            }
            samples.shuffle(rng);
            samples
                .chunks(fed.batch_size)
                .map(|c| Batch::Labeled {
                    inputs: c.iter().map(|s| s.0.clone()).collect(),
                    labels: c.iter().map(|s| s.1).collect(),
                })
                .collect()
        };
        if batches.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        for batch in &batches {
            total += opt.step(model, batch, loss, fed.learning_rate)?;
        }
        Ok(Some(total / batches.len() as f64))
    }
}

/// A training center with its fixed local validation split.
struct Client<'a> {
    id: &'a str,
    fit: Vec<&'a VideoInstance>,
    val: Vec<&'a VideoInstance>,
}

/// Class-stratified split: cases are shuffled, grouped by label and every
/// position where `floor(i * fraction)` steps up goes to validation. With
/// too few cases for a validation set the fit cases are scored instead.
fn split_validation<'a, R: Rng + ?Sized>(
    videos: &'a [VideoInstance],
    fraction: f64,
    rng: &mut R,
) -> (Vec<&'a VideoInstance>, Vec<&'a VideoInstance>) {
    let mut order: Vec<usize> = (0..videos.len()).collect();
    order.shuffle(rng);
    order.sort_by_key(|&i| videos[i].label);
    let mut is_val = vec![false; videos.len()];
    for (pos, &i) in order.iter().enumerate() {
        is_val[i] = ((pos + 1) as f64 * fraction).floor() > (pos as f64 * fraction).floor();
    }
    let fit: Vec<&VideoInstance> = videos.iter().zip(&is_val).filter(|(_, v)| !**v).map(|(x, _)| x).collect();
    let val: Vec<&VideoInstance> = videos.iter().zip(&is_val).filter(|(_, v)| **v).map(|(x, _)| x).collect();
    if val.is_empty() {
        let all = fit.clone();
        (fit, all)
    } else {
        (fit, val)
    }
}

fn find_holdout<'a>(datasets: &'a [CenterDataset], holdout: &str) -> Result<&'a CenterDataset, FedSimError> {
    datasets
        .iter()
        .find(|d| d.center_id == holdout)
        .ok_or_else(|| FedSimError::UnknownHoldout(holdout.to_string()))
}

/// Every center except the holdout, in center-id order.
fn training_centers<'a>(datasets: &'a [CenterDataset], holdout: &str) -> Result<Vec<&'a CenterDataset>, FedSimError> {
    find_holdout(datasets, holdout)?;
    let mut centers: Vec<&CenterDataset> = datasets.iter().filter(|d| d.center_id != holdout).collect();
    if centers.is_empty() {
        return Err(FedSimError::NoTrainingCenters(holdout.to_string()));
    }
    if let Some(empty) = centers.iter().find(|d| d.train.is_empty()) {
        return Err(FedSimError::EmptyTrainSet(empty.center_id.clone()));
    }
    centers.sort_by(|a, b| a.center_id.cmp(&b.center_id));
    Ok(centers)
}

fn local_round(
    ctx: &Ctx<'_>,
    global: &PipelineModel,
    client: &Client<'_>,
    round: usize,
) -> Result<(ClientUpdate, ClientTelemetry), FedSimError> {
    let fed = &ctx.pipeline.federated;
    let non_finite = || FedSimError::NonFiniteLoss {
        round,
        client: client.id.to_string(),
    };
    let mut rng = stream_rng(fed.seed, &format!("client/{}/round/{round}", client.id));
    let mut model = global.clone();
    let mut opt = LocalOptimizer::new(fed.client_optimizer, model.num_params());
    let main = ctx.main_loss(&client.fit)?;
    let head = LossConfig::cross_entropy();

    let mut epoch_losses = Vec::new();
    let mut epoch_scores = Vec::new();
    let mut best: Option<(f64, ParameterVector, usize)> = None;
    for epoch in 0..fed.head_epochs + fed.local_epochs {
        let loss = if epoch < fed.head_epochs { &head } else { &main };
        let value = match ctx.train_epoch(&mut model, &mut opt, &client.fit, loss, &mut rng) {
            Ok(v) => v,
            Err(ModelError::Params(_)) => return Err(non_finite()),
            Err(e) => return Err(e.into()),
        };
        if value.is_some_and(|v| !v.is_finite()) {
            return Err(non_finite());
        }
        epoch_losses.push(value);
        let score = ctx.validation_f1(&model, &client.val, &client.fit)?;
        epoch_scores.push(score);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, model.params(), epoch));
        }
    }
    let (score, params, best_epoch) = best.expect("at least one local epoch");
    let update = ClientUpdate::new(client.id.to_string(), params, client.fit.len(), score)?;
    let telemetry = ClientTelemetry {
        client_id: client.id.to_string(),
        num_examples: client.fit.len(),
        validation_cases: client.val.len(),
        epoch_losses,
        epoch_scores,
        best_epoch,
        local_best_score: score,
    };
    Ok((update, telemetry))
}

/// Runs `fl_rounds` synchronous rounds over every center except the
/// holdout. Clients train in parallel; updates are aggregated in client-id
/// order so results do not depend on scheduling.
pub fn run_federated_training(
    pipeline: &StrategyPipeline,
    datasets: &[CenterDataset],
) -> Result<TrainedGlobal, FedSimError> {
    let fed = &pipeline.federated;
    let centers = training_centers(datasets, &fed.holdout_center)?;
    let ctx = Ctx::new(pipeline, &centers)?;
    let clients: Vec<Client> = centers
        .iter()
        .map(|c| {
            let mut rng = stream_rng(fed.seed, &format!("split/{}", c.center_id));
            let (fit, val) = split_validation(&c.train, fed.validation_fraction, &mut rng);
            Client {
                id: &c.center_id,
                fit,
                val,
            }
        })
        .collect();
    let input_dim = clients[0].fit[0].feature_dim();
    let mut global = PipelineModel::build(
        pipeline.model,
        input_dim,
        ctx.labels.num_classes(),
        &mut stream_rng(fed.seed, "init"),
    )?;
    let mut server = match fed.strategy {
        AggregationStrategy::FedOpt { server } => Some(ServerOptState::new(global.num_params(), server)?),
        _ => None,
    };

    let mut telemetry = Vec::with_capacity(fed.fl_rounds);
    for round in 1..=fed.fl_rounds {
        let results: Vec<(ClientUpdate, ClientTelemetry)> = clients
            .par_iter()
            .map(|c| local_round(&ctx, &global, c, round))
            .collect::<Result<_, _>>()?;
        let (updates, client_logs): (Vec<ClientUpdate>, Vec<ClientTelemetry>) = results.into_iter().unzip();
        let next = match fed.strategy {
            AggregationStrategy::FedAvg => fed_avg(&updates)?,
            AggregationStrategy::FedMedian => fed_median(&updates)?,
            AggregationStrategy::FedOpt { .. } => {
                let state = server.as_ref().expect("created for fedopt");
                let (next, state) = fed_opt_apply(state, &global.params(), &fed_avg(&updates)?)?;
                server = Some(state);
                next
            }
        };
        global.set_params(&next)?;
        let scores: Vec<f64> = clients
            .par_iter()
            .map(|c| ctx.validation_f1(&global, &c.val, &c.fit))
            .collect::<Result<_, _>>()?;
        telemetry.push(RoundTelemetry {
            round,
            clients: client_logs,
            global_score: scores.iter().sum::<f64>() / scores.len() as f64,
        });
    }
    Ok(TrainedGlobal {
        model: global,
        telemetry,
    })
}

/// Scores the global model on the held-out center's test cases. Prototype
/// pipelines embed the training centers' cases as their support set.
pub fn evaluate_task1(
    pipeline: &StrategyPipeline,
    model: &PipelineModel,
    holdout: &CenterDataset,
    support_centers: &[&CenterDataset],
) -> Result<CenterReport, FedSimError> {
    if holdout.test.is_empty() {
        return Err(FedSimError::EmptyTestSet(holdout.center_id.clone()));
    }
    let mut all = vec![holdout];
    all.extend(support_centers);
    let ctx = Ctx::new(pipeline, &all)?;
    let support: Vec<&VideoInstance> = support_centers.iter().flat_map(|c| &c.train).collect();
    ctx.evaluate(model, holdout, &support)
}

/// Fine-tunes a copy of the global model on each training center for
/// `fine_tune_epochs` and scores it on that center's test cases.
pub fn run_task2_adaptation(
    pipeline: &StrategyPipeline,
    global: &PipelineModel,
    datasets: &[CenterDataset],
) -> Result<Task2Result, FedSimError> {
    let fed = &pipeline.federated;
    let centers = training_centers(datasets, &fed.holdout_center)?;
    if let Some(empty) = centers.iter().find(|d| d.test.is_empty()) {
        return Err(FedSimError::EmptyTestSet(empty.center_id.clone()));
    }
    let ctx = Ctx::new(pipeline, &centers)?;
    let reports: Vec<CenterReport> = centers
        .par_iter()
        .map(|center| {
            let train: Vec<&VideoInstance> = center.train.iter().collect();
            let mut model = global.clone();
            let mut opt = LocalOptimizer::new(fed.client_optimizer, model.num_params());
            let mut rng = stream_rng(fed.seed, &format!("finetune/{}", center.center_id));
            let loss = ctx.main_loss(&train)?;
            for _ in 0..fed.fine_tune_epochs {
                let value = match ctx.train_epoch(&mut model, &mut opt, &train, &loss, &mut rng) {
                    Ok(v) => v,
                    Err(ModelError::Params(_)) => return Err(FedSimError::NonFiniteFineTune(center.center_id.clone())),
                    Err(e) => return Err(e.into()),
                };
                if value.is_some_and(|v| !v.is_finite()) {
                    return Err(FedSimError::NonFiniteFineTune(center.center_id.clone()));
                }
            }
            ctx.evaluate(&model, center, &train)
        })
        .collect::<Result<_, _>>()?;
    let average = AverageReport::of(&reports).expect("at least one training center");
    Ok(Task2Result {
        centers: reports,
        average,
    })
}

/// Trains and evaluates every pipeline on both tasks.
pub fn run_challenge(
    pipelines: &[StrategyPipeline],
    datasets: &[CenterDataset],
    cfg: &ChallengeConfig,
) -> Result<ChallengeResult, FedSimError> {
    if pipelines.is_empty() {
        return Err(FedSimError::InvalidConfig("no pipelines to run".into()));
    }
    for (i, p) in pipelines.iter().enumerate() {
        if pipelines[..i].iter().any(|q| q.name == p.name) {
            return Err(FedSimError::InvalidConfig(format!("pipeline name {} is used twice", p.name)));
        }
    }
    let holdout = find_holdout(datasets, &cfg.holdout_center)?;
    let num_classes = holdout.class_priors.len();
    let results: Vec<PipelineResult> = pipelines
        .par_iter()
        .map(|p| {
            let mut pipeline = p.clone();
            pipeline.federated.seed = cfg.seed;
            pipeline.federated.holdout_center = cfg.holdout_center.clone();
            pipeline.federated.f1_convention = cfg.f1_convention;
            let trained = run_federated_training(&pipeline, datasets)?;
            let support = training_centers(datasets, &cfg.holdout_center)?;
            let task1 = evaluate_task1(&pipeline, &trained.model, holdout, &support)?;
            let task2 = run_task2_adaptation(&pipeline, &trained.model, datasets)?;
            Ok(PipelineResult {
                name: pipeline.name.clone(),
                pipeline,
                task1,
                task2,
                telemetry: trained.telemetry,
            })
        })
        .collect::<Result<_, FedSimError>>()?;
    Ok(ChallengeResult {
        seed: cfg.seed,
        holdout_center: cfg.holdout_center.clone(),
        f1_convention: cfg.f1_convention,
        num_classes,
        data: None,
        pipelines: results,
    })
}
