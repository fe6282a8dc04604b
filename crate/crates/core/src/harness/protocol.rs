use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{roc_auc, threshold_metrics, MeanStd};
use super::optim::OptimizerConfig;
use super::train::{score_bags, train, TrainTrace};
use super::HarnessError;
use crate::datasets::{Bag, ChannelStats};
use crate::mivat::VatConfig;
use crate::model::{ArchitectureSpec, MilClassifier};
use crate::seed::{derive_seed, stream};

/// Metric names in report order.
pub const METRICS: [&str; 5] = ["auc", "precision", "sensitivity", "specificity", "f1"];

/// Everything a single trial needs besides its data.
#[derive(Clone, Debug)]
pub struct TrialSetup {
    pub architecture: ArchitectureSpec,
    /// `None` trains the supervised baseline.
    pub vat: Option<VatConfig>,
    pub optimizer: OptimizerConfig,
    pub threshold: f64,
}

#[derive(Clone, Debug)]
pub struct HoldoutData {
    pub labelled: Vec<Bag>,
    pub unlabelled: Vec<Bag>,
    pub test: Vec<Bag>,
}

/// Outcome of one trial: a holdout run, or one LOSO repetition with the
/// held-out scores of every split pooled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    /// One trace per trained model (a single one for holdout).
    pub traces: Vec<TrainTrace>,
    pub bag_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub metrics: BTreeMap<String, f64>,
    pub precision_undefined: bool,
    pub wall_time_s: f64,
}

fn labels_of(bags: &[Bag]) -> Result<Vec<bool>, HarnessError> {
    bags.iter()
        .map(|b| {
            b.label
                .ok_or_else(|| HarnessError::Config(format!("evaluation bag {} has no label", b.id)))
        })
        .collect()
}

fn metric_map(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(BTreeMap<String, f64>, bool), HarnessError> {
    let t = threshold_metrics(scores, labels, threshold)?;
    let map = [
        ("auc", roc_auc(scores, labels)?),
        ("precision", t.precision),
        ("sensitivity", t.sensitivity),
        ("specificity", t.specificity),
        ("f1", t.f1),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Ok((map, t.precision_undefined))
}

/// Seed of trial `trial` under `master`.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, &[stream::TRIAL, trial as u64])
}

/// Trains a fresh model on `data` and evaluates it on the test bags. The
/// trained model is returned alongside the result.
pub fn run_holdout_trial(
    setup: &TrialSetup,
    data: &HoldoutData,
    trial: usize,
    seed: u64,
) -> Result<(TrialResult, MilClassifier<f32>), HarnessError> {
    let start = Instant::now();
    let mut init = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::INIT]));
    let mut model = MilClassifier::new(&setup.architecture, &mut init)?;
    let trace = train(
        &mut model,
        &data.labelled,
        &data.unlabelled,
        setup.vat.as_ref(),
        &setup.optimizer,
        seed,
    )?;
    let scores = score_bags(&model, &data.test)?;
    let labels = labels_of(&data.test)?;
    let (metrics, precision_undefined) = metric_map(&scores, &labels, setup.threshold)?;
    Ok((
        TrialResult {
            trial,
            seed,
            traces: vec![trace],
            bag_ids: data.test.iter().map(|b| b.id.clone()).collect(),
            scores,
            labels,
            metrics,
            precision_undefined,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        model,
    ))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, HarnessError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}

/// Runs `n_trials` independent holdout trials; `data_for(trial, seed)`
/// provides each trial's bags. Results come back in trial order whatever
/// the worker count.
pub fn repeated_trials<F>(
    setup: &TrialSetup,
    n_trials: usize,
    master_seed: u64,
    workers: usize,
    data_for: F,
) -> Result<Vec<TrialResult>, HarnessError>
where
    F: Fn(usize, u64) -> Result<HoldoutData, HarnessError> + Sync,
{
    if n_trials == 0 {
        return Err(HarnessError::Config("n_trials must be >= 1".into()));
    }
    pool(workers)?.install(|| {
        (0..n_trials)
            .into_par_iter()
            .map(|t| {
                let seed = trial_seed(master_seed, t);
                let data = data_for(t, seed)?;
                run_holdout_trial(setup, &data, t, seed).map(|(r, _)| r)
            })
            .collect()
    })
}

#[derive(Clone, Debug)]
pub struct LosoConfig {
    pub trials: usize,
    /// Fit per-channel z-normalization on each split's training bags.
    pub normalize: bool,
    pub workers: usize,
}

/// Leave-one-subject-out: for every trial and every subject, trains on the
/// other subjects' bags (plus all unlabelled bags) and scores the held-out
/// bag. Metrics are computed per trial on the pooled held-out scores.
pub fn loso_evaluate(
    setup: &TrialSetup,
    subjects: &[Bag],
    unlabelled: &[Bag],
    cfg: &LosoConfig,
    master_seed: u64,
) -> Result<Vec<TrialResult>, HarnessError> {
    if subjects.len() < 3 {
        return Err(HarnessError::Config(format!(
            "leave-one-subject-out needs at least 3 subjects, got {}",
            subjects.len()
        )));
    }
    if cfg.trials == 0 {
        return Err(HarnessError::Config("trials must be >= 1".into()));
    }
    let labels = labels_of(subjects)?;
    for (i, bag) in subjects.iter().enumerate() {
        let rest: Vec<bool> = labels
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &l)| l)
            .collect();
        if rest.iter().all(|&l| l) || rest.iter().all(|&l| !l) {
            return Err(HarnessError::SingleClassSplit(
                bag.subject_id.clone().unwrap_or_else(|| bag.id.clone()),
            ));
        }
    }

    let jobs: Vec<(usize, usize)> = (0..cfg.trials)
        .flat_map(|t| (0..subjects.len()).map(move |i| (t, i)))
        .collect();
    let run_job = |&(t, i): &(usize, usize)| -> Result<(f64, TrainTrace, f64), HarnessError> {
        let start = Instant::now();
        let seed = derive_seed(trial_seed(master_seed, t), &[stream::SPLIT, i as u64]);
        let mut train_bags: Vec<Bag> = subjects
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, b)| b.clone())
            .collect();
        let mut u_bags = unlabelled.to_vec();
        let mut held_out = subjects[i].clone();
        if cfg.normalize {
            let stats = ChannelStats::fit(train_bags.iter().chain(&u_bags))?;
            for b in train_bags.iter_mut().chain(u_bags.iter_mut()) {
                stats.apply(b);
            }
            stats.apply(&mut held_out);
        }
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::INIT]));
        let mut model = MilClassifier::new(&setup.architecture, &mut init)?;
        let trace = train(&mut model, &train_bags, &u_bags, setup.vat.as_ref(), &setup.optimizer, seed)?;
        let score = f64::from(model.predict(&held_out.instances)?.positive());
        log::info!("trial {t} split {i}: held-out score {score:.4}");
        Ok((score, trace, start.elapsed().as_secs_f64()))
    };
    let outcomes: Vec<(f64, TrainTrace, f64)> =
        pool(cfg.workers)?.install(|| jobs.par_iter().map(run_job).collect::<Result<_, _>>())?;

    let n = subjects.len();
    (0..cfg.trials)
        .map(|t| {
            let chunk = &outcomes[t * n..(t + 1) * n];
            let scores: Vec<f64> = chunk.iter().map(|o| o.0).collect();
            let (metrics, precision_undefined) = metric_map(&scores, &labels, setup.threshold)?;
            Ok(TrialResult {
                trial: t,
                seed: trial_seed(master_seed, t),
                traces: chunk.iter().map(|o| o.1.clone()).collect(),
                bag_ids: subjects.iter().map(|b| b.id.clone()).collect(),
                scores,
                labels: labels.clone(),
                metrics,
                precision_undefined,
                wall_time_s: chunk.iter().map(|o| o.2).sum(),
            })
        })
        .collect()
}

/// Mean and sample standard deviation of every metric across trials.
pub fn summarize(trials: &[TrialResult]) -> BTreeMap<String, MeanStd> {
    METRICS
        .iter()
        .map(|&m| {
            let values: Vec<f64> = trials.iter().filter_map(|t| t.metrics.get(m).copied()).collect();
            (m.to_string(), MeanStd::of(&values))
        })
        .collect()
}
