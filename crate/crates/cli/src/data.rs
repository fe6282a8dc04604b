//! Turning a dataset section into bags, and writing them to disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mivat::datasets::{
    form_subject_bag, generate_synthetic_bags, load_idx_images, preprocess_session, read_session_csv,
    synth_tremor_cohort, two_circles_bags, write_idx, write_session_csv, Bag, BagManifest,
    CirclesSpec, Discard, IdxArray, IdxData, InstancePool, ProcessedSignal, Session, SubjectRecord,
    SynthesisSpec, ValidationRules,
};
use mivat::harness::HoldoutData;
use mivat::seed::{rng_for, stream};
use serde::Serialize;

use crate::config::{DatasetConfig, ExperimentConfig};

/// Bags for the holdout presets, regenerated per trial seed.
pub enum HoldoutSource {
    Circles {
        synthesis: SynthesisSpec,
        circles: CirclesSpec,
    },
    Mnist {
        synthesis: SynthesisSpec,
        train: InstancePool,
        test: InstancePool,
    },
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

impl HoldoutSource {
    pub fn from_config(cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        match &cfg.dataset {
            DatasetConfig::TwoCircles { synthesis, circles } => Ok(HoldoutSource::Circles {
                synthesis: synthesis.clone(),
                circles: circles.clone(),
            }),
            DatasetConfig::MnistBags { synthesis, data_dir } => {
                let dir = cfg.resolve_path(data_dir);
                let missing: Vec<&str> = MNIST_FILES.iter().copied().filter(|f| !dir.join(f).is_file()).collect();
                if !missing.is_empty() {
                    bail!("{}: missing {}", dir.display(), missing.join(", "));
                }
                let f = |i: usize| dir.join(MNIST_FILES[i]);
                Ok(HoldoutSource::Mnist {
                    synthesis: synthesis.clone(),
                    train: load_idx_images(&f(0), &f(1))?,
                    test: load_idx_images(&f(2), &f(3))?,
                })
            }
            other => bail!("dataset {} is evaluated per subject, not by holdout", other.preset_name()),
        }
    }

    /// The bags of the trial seeded by `seed`.
    pub fn trial_data(&self, seed: u64) -> anyhow::Result<HoldoutData> {
        let mut rng = rng_for(seed, &[stream::DATA]);
        let splits = match self {
            HoldoutSource::Circles { synthesis, circles } => two_circles_bags(circles, synthesis, &mut rng)?,
            HoldoutSource::Mnist { synthesis, train, test } => {
                generate_synthetic_bags(synthesis, train, test, &mut rng)?
            }
        };
        Ok(HoldoutData {
            labelled: splits.labelled,
            unlabelled: splits.unlabelled,
            test: splits.test,
        })
    }
}

/// A session that did not make it into its subject's bag.
#[derive(Clone, Debug, Serialize)]
pub struct Discarded {
    pub subject_id: String,
    pub session: usize,
    pub discard: Discard,
}

/// Subject-level bags for leave-one-subject-out.
#[derive(Clone, Debug)]
pub struct SubjectData {
    pub labelled: Vec<Bag>,
    pub unlabelled: Vec<Bag>,
    pub discarded: Vec<Discarded>,
    /// Subjects left without a single valid session.
    pub dropped: Vec<String>,
}

fn subject_bag(
    subject_id: &str,
    sessions: &[Session],
    label: Option<bool>,
    rules: &ValidationRules,
    k_t: usize,
    out: &mut SubjectData,
) -> anyhow::Result<()> {
    let mut signals: Vec<ProcessedSignal> = Vec::new();
    for (i, s) in sessions.iter().enumerate() {
        match preprocess_session(s, rules, i) {
            Ok(sig) => signals.push(sig),
            Err(discard) => out.discarded.push(Discarded {
                subject_id: subject_id.to_string(),
                session: i,
                discard,
            }),
        }
    }
    if signals.is_empty() {
        log::warn!("subject {subject_id}: no valid session, dropped");
        out.dropped.push(subject_id.to_string());
        return Ok(());
    }
    let segments = form_subject_bag(subject_id, &signals, k_t)?;
    let bag = Bag::from_segments(subject_id, &segments, label)?;
    if label.is_some() {
        out.labelled.push(bag);
    } else {
        out.unlabelled.push(bag);
    }
    Ok(())
}

/// Labelled cohort and unlabelled cohort of the synthetic preset. The
/// unlabelled subjects are renamed `u###` and lose their labels.
pub fn synthetic_cohorts(cfg: &ExperimentConfig) -> anyhow::Result<(Vec<SubjectRecord>, Vec<SubjectRecord>)> {
    let DatasetConfig::TremorSynthetic {
        subjects,
        tremor_fraction,
        unlabelled_subjects,
        cohort,
        ..
    } = &cfg.dataset
    else {
        bail!("not a synthetic tremor dataset");
    };
    let mut rng = rng_for(cfg.seed, &[stream::COHORT]);
    let labelled = synth_tremor_cohort(*subjects, *tremor_fraction, cohort, &mut rng)?;
    let mut unlabelled = if *unlabelled_subjects > 0 {
        synth_tremor_cohort(*unlabelled_subjects, *tremor_fraction, cohort, &mut rng)?
    } else {
        Vec::new()
    };
    for (i, r) in unlabelled.iter_mut().enumerate() {
        r.subject_id = format!("u{i:03}");
        for s in &mut r.sessions {
            s.subject_id = r.subject_id.clone();
        }
    }
    Ok((labelled, unlabelled))
}

/// Subject bags of a tremor preset. `include_unlabelled` skips the
/// unlabelled pipeline work for the baseline.
pub fn subject_data(cfg: &ExperimentConfig, include_unlabelled: bool) -> anyhow::Result<SubjectData> {
    let mut out = SubjectData {
        labelled: Vec::new(),
        unlabelled: Vec::new(),
        discarded: Vec::new(),
        dropped: Vec::new(),
    };
    match &cfg.dataset {
        DatasetConfig::TremorSynthetic { k_t, rules, .. } => {
            let (labelled, unlabelled) = synthetic_cohorts(cfg)?;
            for r in &labelled {
                subject_bag(&r.subject_id, &r.sessions, Some(r.label), rules, *k_t, &mut out)?;
            }
            if include_unlabelled {
                for r in &unlabelled {
                    subject_bag(&r.subject_id, &r.sessions, None, rules, *k_t, &mut out)?;
                }
            }
        }
        DatasetConfig::TremorCsv { root, k_t, rules, .. } => {
            let root = cfg.resolve_path(root);
            for (id, label) in read_subject_list(&root.join("subjects.csv"))? {
                if label.is_none() && !include_unlabelled {
                    continue;
                }
                let sessions = read_subject_sessions(&root.join("sessions").join(&id))?;
                subject_bag(&id, &sessions, label, rules, *k_t, &mut out)?;
            }
        }
        other => bail!("dataset {} has no subjects", other.preset_name()),
    }
    Ok(out)
}

/// `subject_id,label` rows; an empty label marks an unlabelled subject.
pub fn read_subject_list(path: &Path) -> anyhow::Result<Vec<(String, Option<bool>)>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["subject_id", "label"] {
        bail!("{}: expected header `subject_id,label`, found `{}`", path.display(), headers.iter().collect::<Vec<_>>().join(","));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let label = match row.get(1).unwrap_or("").trim() {
            "" => None,
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            other => bail!("{}:{line}: label `{other}` is not 0, 1 or empty", path.display()),
        };
        out.push((row.get(0).unwrap_or("").trim().to_string(), label));
    }
    Ok(out)
}

fn read_subject_sessions(dir: &Path) -> anyhow::Result<Vec<Session>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    paths.sort();
    paths.iter().map(|p| Ok(read_session_csv(p)?)).collect()
}

/// Writes `<dir>/<split>.json` and its float IDX payload `<dir>/<split>.idx`.
pub fn write_split(dir: &Path, split: &str, bags: &[Bag]) -> anyhow::Result<Vec<PathBuf>> {
    let manifest = BagManifest::from_bags(split, bags)?;
    let rows: usize = bags.iter().map(Bag::len).sum();
    let mut dims = vec![rows];
    dims.extend(&manifest.instance_shape);
    let data: Vec<f32> = bags.iter().flat_map(|b| b.instances.data().iter().copied()).collect();
    let json = dir.join(format!("{split}.json"));
    let idx = dir.join(format!("{split}.idx"));
    fs::write(&json, manifest.to_json()?)?;
    write_idx(
        &idx,
        &IdxArray {
            dims,
            data: IdxData::F32(data),
        },
    )?;
    Ok(vec![json, idx])
}

/// Session CSVs plus `subjects.csv` in the layout the `tremor-csv` preset reads.
pub fn write_cohort(dir: &Path, labelled: &[SubjectRecord], unlabelled: &[SubjectRecord]) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let list = dir.join("subjects.csv");
    let mut w = csv::Writer::from_path(&list)?;
    w.write_record(["subject_id", "label"])?;
    for (r, labelled) in labelled.iter().map(|r| (r, true)).chain(unlabelled.iter().map(|r| (r, false))) {
        let label = if labelled { u8::from(r.label).to_string() } else { String::new() };
        w.write_record([r.subject_id.as_str(), label.as_str()])?;
        let sdir = dir.join("sessions").join(&r.subject_id);
        fs::create_dir_all(&sdir)?;
        for (i, s) in r.sessions.iter().enumerate() {
            let p = sdir.join(format!("session-{i:02}.csv"));
            write_session_csv(&p, s)?;
            written.push(p);
        }
    }
    w.flush()?;
    written.insert(0, list);
    let truth: Vec<_> = labelled
        .iter()
        .map(|r| serde_json::json!({ "subject_id": r.subject_id, "label": r.label, "bursts": r.bursts }))
        .collect();
    let truth_path = dir.join("bursts.json");
    fs::write(&truth_path, serde_json::to_string_pretty(&truth)? + "\n")?;
    written.push(truth_path);
    Ok(written)
}
