//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The training criteria (two-circles, MNIST bags, tremor LOSO) take from
//! minutes to hours on one core and only run with `--full` (or
//! `MIVAT_ACCEPTANCE_FULL=1`); otherwise they print SKIP after running
//! whatever cheap part they have. Numbers on the command line pick
//! criteria: `cargo test --test acceptance -- --full 5 7`.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use common::oracles;
use mivat::harness::{
    bag_embeddings, run_holdout_trial, silhouette, trial_seed, ExperimentReport, MeanStd, TrialResult,
};
use mivat::model::Preset;
use mivat_cli::config::{DatasetConfig, VariantChoice, VatSection};
use mivat_cli::data::HoldoutSource;
use mivat_cli::run::trial_setup;
use mivat_cli::{cmd_run, ExperimentConfig, RunOptions, VERSION};

#[derive(PartialEq)]
enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: String) -> Self {
        let status = if pass { Status::Pass } else { Status::Fail };
        Self { status, detail }
    }
}

struct Ctx {
    full: bool,
    scratch: tempfile::TempDir,
}

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e:#}"))
}

fn with_variant(mut cfg: ExperimentConfig, variant: VariantChoice) -> ExperimentConfig {
    if variant == VariantChoice::None {
        cfg.vat = VatSection::none();
    } else {
        cfg.vat.variant = variant;
    }
    cfg.name = format!("{}-{}", cfg.name, variant.name());
    cfg
}

fn in_dir(mut cfg: ExperimentConfig, dir: &Path) -> ExperimentConfig {
    cfg.output_dir = dir.to_path_buf();
    cfg
}

fn losses_finite(trials: &[TrialResult]) -> bool {
    trials.iter().flat_map(|t| &t.traces).flat_map(|tr| &tr.epochs).all(|e| {
        e.cross_entropy.is_finite() && e.mi_lds.is_none_or(f64::is_finite)
    })
}

fn mean(report: &ExperimentReport, metric: &str) -> f64 {
    report.summary[metric].mean
}

const TOL: f64 = 1e-4;

fn gradients(_: &Ctx) -> Outcome {
    let start = Instant::now();
    let mut errors = oracles::primitive_gradient_errors(3);
    let primitives = errors.len();
    errors.extend((0..5).map(|s| (format!("kl seed {s}"), oracles::kl_gradient_error(s))));
    let mut models: Vec<(Preset, u64)> = (0..4).flat_map(|s| [(Preset::MlpToy, s), (Preset::TremorCnn, s)]).collect();
    models.push((Preset::Lenet5Mnist, 0));
    for (preset, seed) in models {
        errors.extend(oracles::model_gradient_errors(preset, seed));
    }
    let (worst_at, worst) = errors
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(w, e)| (w.clone(), *e))
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        worst < TOL && primitives >= 50 && secs < 60.0,
        format!(
            "{} checks ({primitives} primitive configurations), max relative error {worst:.2e} at {worst_at}, {secs:.1} s",
            errors.len()
        ),
    )
}

fn permutation(_: &Ctx) -> Outcome {
    let start = Instant::now();
    let diff = oracles::permutation_max_diff(1000);
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(diff < 1e-6 && secs < 60.0, format!("1000 pairs, max difference {diff:.2e}, {secs:.1} s"))
}

fn power_iteration(_: &Ctx) -> Outcome {
    let s = oracles::power_iteration_stats(200);
    Outcome::check(
        s.min_cosine >= 0.99 && s.fallbacks == 0,
        format!(
            "dimension 8, 5 iterations: min cosine {:.6} over {} starts ({} near-orthogonal starts left out)",
            s.min_cosine,
            200 - s.skipped,
            s.skipped
        ),
    )
}

fn contracts(_: &Ctx) -> Outcome {
    let s = oracles::perturbation_contracts(10_000, 0.5);
    Outcome::check(
        s.violations.is_empty() && s.attention_p > 0.01,
        format!(
            "{} calls, {} contract violations, sparse-attention chi-square p = {:.3} (sparse-uniform p = {:.3})",
            s.calls,
            s.violations.len(),
            s.attention_p,
            s.uniform_p
        ),
    )
}

struct HoldoutRun {
    report: ExperimentReport,
    silhouette: f64,
}

/// Holdout trials keeping each trained model long enough to measure the
/// class separation of its test-bag embeddings.
fn holdout_with_embeddings(cfg: &ExperimentConfig) -> HoldoutRun {
    let start = Instant::now();
    let setup = trial_setup(cfg).unwrap();
    let source = HoldoutSource::from_config(cfg).unwrap();
    let mut trials = Vec::new();
    let mut sils = Vec::new();
    for t in 0..cfg.evaluation.trials {
        let seed = trial_seed(cfg.seed, t);
        let data = source.trial_data(seed).unwrap();
        let (result, model) = run_holdout_trial(&setup, &data, t, seed).unwrap_or_else(|e| panic!("{e}"));
        let emb = bag_embeddings(&model, &data.test).unwrap();
        sils.push(silhouette(&emb, &result.labels).unwrap());
        trials.push(result);
    }
    let (l, u) = match &cfg.dataset {
        DatasetConfig::TwoCircles { synthesis, .. } => (synthesis.n_labelled, synthesis.n_unlabelled),
        _ => unreachable!(),
    };
    let u = if setup.vat.is_some() { u } else { 0 };
    let report = ExperimentReport::new(
        VERSION,
        serde_json::to_value(cfg).unwrap(),
        cfg.method(),
        "holdout",
        l,
        u,
        trials,
        start.elapsed().as_secs_f64(),
    );
    HoldoutRun {
        report,
        silhouette: MeanStd::of(&sils).mean,
    }
}

fn two_circles(ctx: &Ctx) -> Outcome {
    if !ctx.full {
        return Outcome {
            status: Status::Skip,
            detail: "5 trials x 2 methods of 300 epochs; run with --full".into(),
        };
    }
    let start = Instant::now();
    let cfg = config("two-circles.toml");
    let base = holdout_with_embeddings(&with_variant(cfg.clone(), VariantChoice::None));
    let sa = holdout_with_embeddings(&with_variant(cfg, VariantChoice::SparseAttention));
    let secs = start.elapsed().as_secs_f64();
    let (b, s) = (mean(&base.report, "auc"), mean(&sa.report, "auc"));
    let finite = losses_finite(&base.report.trials) && losses_finite(&sa.report.trials);
    Outcome::check(
        b <= 0.75 && s >= 0.85 && s - b >= 0.10 && sa.silhouette > base.silhouette && secs < 900.0 && finite,
        format!(
            "AUC baseline {b:.3} (<= 0.75), sparse-attention {s:.3} (>= 0.85), gap {:.3}; silhouette {:.3} vs {:.3}; finite losses {finite}; {secs:.0} s",
            s - b,
            sa.silhouette,
            base.silhouette
        ),
    )
}

fn mnist(ctx: &Ctx) -> Outcome {
    if !ctx.full {
        return Outcome {
            status: Status::Skip,
            detail: "3 trials x 4 methods of 50 epochs on MNIST bags; run with --full".into(),
        };
    }
    let start = Instant::now();
    let cfg = in_dir(config("mnist-bags.toml"), ctx.scratch.path());
    let mut aucs = Vec::new();
    let mut finite = true;
    for v in [VariantChoice::None, VariantChoice::Dense, VariantChoice::SparseUniform, VariantChoice::SparseAttention] {
        let report = cmd_run(&with_variant(cfg.clone(), v), &RunOptions::default()).unwrap_or_else(|e| panic!("{e:#}"));
        finite &= losses_finite(&report.trials);
        aucs.push((v, mean(&report, "auc"), report.summary["auc"].std));
    }
    let secs = start.elapsed().as_secs_f64();
    let base = aucs[0].1;
    let sa = aucs[3].1;
    let all_beat = aucs[1..].iter().all(|a| a.1 > base);
    let listing: Vec<String> = aucs.iter().map(|(v, m, s)| format!("{} {m:.3}±{s:.3}", v.name())).collect();
    Outcome::check(
        sa - base >= 0.10 && all_beat && secs < 3.0 * 3600.0 && finite,
        format!(
            "AUC {}; sparse-attention gap {:.3} (>= 0.10); finite losses {finite}; {:.1} min",
            listing.join(", "),
            sa - base,
            secs / 60.0
        ),
    )
}

fn tremor(ctx: &Ctx) -> Outcome {
    let residual = oracles::gravity_residual();
    let misranked = oracles::sinusoid_rank_failures(10);
    let duration = oracles::resampling_duration_error();
    let oracles_ok = residual < 0.01 && misranked == 0 && duration <= 1.5 / mivat::datasets::TARGET_RATE_HZ;
    let oracle_note = format!(
        "gravity residual {residual:.2e} (< 0.01), sinusoid misranked in {misranked}/10, duration error {duration:.4} s"
    );
    if !ctx.full {
        let status = if oracles_ok { Status::Skip } else { Status::Fail };
        return Outcome {
            status,
            detail: format!("{oracle_note}; LOSO comparison needs --full"),
        };
    }
    let start = Instant::now();
    let cfg = in_dir(config("tremor-synthetic.toml"), ctx.scratch.path());
    let base = cmd_run(&with_variant(cfg.clone(), VariantChoice::None), &RunOptions::default()).unwrap_or_else(|e| panic!("{e:#}"));
    let sa = cmd_run(&with_variant(cfg, VariantChoice::SparseAttention), &RunOptions::default()).unwrap_or_else(|e| panic!("{e:#}"));
    let secs = start.elapsed().as_secs_f64();
    let (b, s) = (mean(&base, "f1"), mean(&sa, "f1"));
    let finite = losses_finite(&base.trials) && losses_finite(&sa.trials);
    Outcome::check(
        oracles_ok && s >= b && secs < 1800.0 && finite,
        format!(
            "LOSO F1 baseline {b:.3}, sparse-attention {s:.3} (AUC {:.3} vs {:.3}); {oracle_note}; finite losses {finite}; {:.1} min",
            mean(&base, "auc"),
            mean(&sa, "auc"),
            secs / 60.0
        ),
    )
}

fn metrics(_: &Ctx) -> Outcome {
    let err = oracles::auc_max_error(5);
    let exact = oracles::threshold_metrics_exact(3);
    Outcome::check(
        err <= 1e-12 && exact,
        format!("AUC vs brute force on 1000 tied scores: max gap {err:.1e}; threshold metrics exact: {exact}"),
    )
}

fn run_csv(cfg: &ExperimentConfig, dir: &Path) -> String {
    let cfg = in_dir(cfg.clone(), dir);
    cmd_run(&cfg, &RunOptions::default()).unwrap_or_else(|e| panic!("{e:#}"));
    std::fs::read_to_string(cfg.run_dir().join("trials.csv")).unwrap()
}

fn determinism(ctx: &Ctx) -> Outcome {
    let mut circles = config("two-circles.toml");
    let mut tremor = config("tremor-synthetic.toml");
    if !ctx.full {
        // same configs, cut down to seconds
        circles.optimizer.epochs = 15;
        circles.evaluation.trials = 2;
        if let DatasetConfig::TwoCircles { synthesis, .. } = &mut circles.dataset {
            synthesis.n_unlabelled = 60;
            synthesis.n_test = 200;
        }
        tremor.optimizer.epochs = 2;
        tremor.evaluation.trials = 1;
        if let DatasetConfig::TremorSynthetic { subjects, unlabelled_subjects, .. } = &mut tremor.dataset {
            *subjects = 6;
            *unlabelled_subjects = 4;
        }
    }
    let mut compared = Vec::new();
    for cfg in [circles, tremor] {
        let a = run_csv(&cfg, &ctx.scratch.path().join("det-a"));
        let b = run_csv(&cfg, &ctx.scratch.path().join("det-b"));
        compared.push((cfg.name.clone(), a.lines().count() - 1, a == b));
    }
    let same = compared.iter().all(|c| c.2);
    let listing: Vec<String> = compared
        .iter()
        .map(|(n, rows, eq)| format!("{n}: {rows} rows {}", if *eq { "identical" } else { "DIFFER" }))
        .collect();
    let scale = if ctx.full { "full" } else { "reduced" };
    Outcome::check(same, format!("{scale} reruns, single worker: {}", listing.join("; ")))
}

type Criterion = fn(&Ctx) -> Outcome;

const CRITERIA: [(u8, &str, Criterion); 9] = [
    (1, "gradient correctness", gradients),
    (2, "permutation invariance", permutation),
    (3, "power iteration", power_iteration),
    (4, "sparsity and norm contracts", contracts),
    (5, "two-circles", two_circles),
    (6, "MNIST bags", mnist),
    (7, "synthetic tremor", tremor),
    (8, "metric oracles", metrics),
    (9, "determinism", determinism),
];

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let full = args.iter().any(|a| a == "--full") || std::env::var_os("MIVAT_ACCEPTANCE_FULL").is_some();
    let picked: Vec<u8> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let ctx = Ctx {
        full,
        scratch: tempfile::tempdir().unwrap(),
    };
    let mut failed = 0;
    for (id, title, run) in CRITERIA {
        if !picked.is_empty() && !picked.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run(&ctx);
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!("{tag} [{id}] {title}: {} ({:.1} s)", outcome.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
