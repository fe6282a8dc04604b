use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use mivat::harness::{
    loso_evaluate, repeated_trials, trial_seed, ExperimentReport, HarnessError, LosoConfig, TrialSetup,
};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DatasetConfig, ExperimentConfig, Protocol};
use crate::data::{subject_data, synthetic_cohorts, write_cohort, write_split, HoldoutSource};
use crate::VERSION;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub workers: usize,
    /// Replaces the config's master seed.
    pub seed: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { workers: 1, seed: None }
    }
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Provenance<'a> {
    format: &'a str,
    tool_version: &'a str,
    seed: u64,
    dataset: &'a str,
    /// Digest of the dataset section and seed: equal hashes, equal data.
    spec_hash: String,
    files: Vec<FileDigest>,
}

fn digest_files(root: &Path, files: &[PathBuf]) -> anyhow::Result<Vec<FileDigest>> {
    files
        .iter()
        .map(|p| {
            let bytes = fs::read(p)?;
            let rel = p.strip_prefix(root).unwrap_or(p);
            Ok(FileDigest {
                path: rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/"),
                sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
            })
        })
        .collect()
}

/// Model, perturbation, optimizer and threshold of a config.
pub fn trial_setup(cfg: &ExperimentConfig) -> anyhow::Result<TrialSetup> {
    Ok(TrialSetup {
        architecture: cfg.model.clone(),
        vat: cfg.vat.resolve()?,
        optimizer: cfg.optimizer.clone(),
        threshold: cfg.evaluation.threshold,
    })
}

/// Writes the dataset artifacts of a synthetic preset under
/// `<run dir>/data` and returns that directory.
pub fn cmd_generate(cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.run_dir().join("data");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut files = Vec::new();
    match &cfg.dataset {
        DatasetConfig::TwoCircles { .. } | DatasetConfig::MnistBags { .. } => {
            let source = HoldoutSource::from_config(cfg)?;
            for t in 0..cfg.evaluation.trials {
                let data = source.trial_data(trial_seed(cfg.seed, t))?;
                let tdir = dir.join(format!("trial-{t:03}"));
                fs::create_dir_all(&tdir)?;
                files.extend(write_split(&tdir, "labelled", &data.labelled)?);
                files.extend(write_split(&tdir, "unlabelled", &data.unlabelled)?);
                files.extend(write_split(&tdir, "test", &data.test)?);
            }
        }
        DatasetConfig::TremorSynthetic { .. } => {
            let (labelled, unlabelled) = synthetic_cohorts(cfg)?;
            files.extend(write_cohort(&dir, &labelled, &unlabelled)?);
            let bags = subject_data(cfg, true)?;
            files.extend(write_split(&dir, "subjects", &bags.labelled)?);
            if !bags.unlabelled.is_empty() {
                files.extend(write_split(&dir, "unlabelled", &bags.unlabelled)?);
            }
        }
        DatasetConfig::TremorCsv { .. } => {
            anyhow::bail!("generate needs a synthetic dataset preset; tremor-csv reads recorded sessions")
        }
    }
    let provenance = Provenance {
        format: "mivat-provenance",
        tool_version: VERSION,
        seed: cfg.seed,
        dataset: cfg.dataset.preset_name(),
        spec_hash: cfg.dataset_hash(),
        files: digest_files(&dir, &files)?,
    };
    fs::write(dir.join("provenance.json"), serde_json::to_string_pretty(&provenance)? + "\n")?;
    Ok(dir)
}

/// Runs the configured protocol and writes `report.json` and `trials.csv`
/// into the run directory. A diverged run leaves `failure.json` there.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &RunOptions) -> anyhow::Result<ExperimentReport> {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let setup = trial_setup(&cfg)?;
    let uses_unlabelled = setup.vat.is_some();
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;

    let start = Instant::now();
    let outcome = match cfg.evaluation.protocol {
        Protocol::Holdout => {
            let source = HoldoutSource::from_config(&cfg)?;
            let (l, u) = match &cfg.dataset {
                DatasetConfig::TwoCircles { synthesis, .. } | DatasetConfig::MnistBags { synthesis, .. } => {
                    (synthesis.n_labelled, synthesis.n_unlabelled)
                }
                _ => unreachable!("validated: holdout runs on bag presets"),
            };
            repeated_trials(&setup, cfg.evaluation.trials, cfg.seed, opts.workers, |_, seed| {
                source.trial_data(seed).map_err(|e| HarnessError::Config(format!("{e:#}")))
            })
            .map(|trials| (trials, l, u))
        }
        Protocol::Loso => {
            let data = subject_data(&cfg, uses_unlabelled)?;
            if !data.discarded.is_empty() {
                log::info!("{} session(s) discarded", data.discarded.len());
            }
            let normalize = match &cfg.dataset {
                DatasetConfig::TremorSynthetic { normalize, .. } | DatasetConfig::TremorCsv { normalize, .. } => {
                    *normalize
                }
                _ => unreachable!("validated: loso runs on tremor presets"),
            };
            let loso = LosoConfig {
                trials: cfg.evaluation.trials,
                normalize,
                workers: opts.workers,
            };
            loso_evaluate(&setup, &data.labelled, &data.unlabelled, &loso, cfg.seed)
                .map(|trials| (trials, data.labelled.len(), data.unlabelled.len()))
        }
    };
    let (trials, labelled, unlabelled) = match outcome {
        Ok(v) => v,
        Err(e) => {
            let err = anyhow::Error::from(e);
            if crate::exit_code(&err) == crate::EXIT_NUMERICAL {
                let path = run_dir.join("failure.json");
                let diag = serde_json::json!({
                    "error": format!("{err:#}"),
                    "tool_version": VERSION,
                    "config": &cfg,
                });
                fs::write(&path, serde_json::to_string_pretty(&diag)? + "\n")?;
                return Err(err.context(format!("training diverged; diagnostics in {}", path.display())));
            }
            return Err(err);
        }
    };

    let protocol = match cfg.evaluation.protocol {
        Protocol::Holdout => "holdout",
        Protocol::Loso => "loso",
    };
    let report = ExperimentReport::new(
        VERSION,
        serde_json::to_value(&cfg)?,
        cfg.method(),
        protocol,
        labelled,
        if uses_unlabelled { unlabelled } else { 0 },
        trials,
        start.elapsed().as_secs_f64(),
    );
    fs::write(run_dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    fs::write(run_dir.join("trials.csv"), report.to_csv()?)?;
    Ok(report)
}

/// The metric a run's one-line summary leads with.
pub fn headline_metric(report: &ExperimentReport) -> &'static str {
    if report.protocol == "loso" {
        "f1"
    } else {
        "auc"
    }
}
