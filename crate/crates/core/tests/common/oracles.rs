//! Measurements behind the property tests. Each function returns what it
//! measured; callers decide what counts as passing.

use std::f64::consts::TAU;

use mivat::autograd::{Primitive, Tape, Tensor};
use mivat::datasets::{
    form_subject_bag, preprocess_session, ProcessedSignal, Session, Units, ValidationRules, SEGMENT_LEN,
    TARGET_RATE_HZ,
};
use mivat::harness::{roc_auc, threshold_metrics};
use mivat::mivat::{
    approximate_r_vadv, cross_entropy, power_iteration, sample_initial_direction, BagPerturbation,
    PerturbationVariant, QuadraticDivergence, VatConfig,
};
use mivat::model::{ArchitectureSpec, MilClassifier, Mode, Preset};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{gradcheck, project, randn, rng, FD_STEP};

pub struct Case {
    pub prim: Primitive,
    pub shapes: Vec<Vec<usize>>,
}

fn case(prim: Primitive, shapes: &[&[usize]]) -> Case {
    Case {
        prim,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
    }
}

/// Random shapes for every primitive.
pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let mut d = |lo: usize, hi: usize| r.random_range(lo..=hi);
    let (b, i, o) = (d(1, 4), d(1, 6), d(1, 5));
    let (m, k, n) = (d(1, 5), d(1, 5), d(1, 5));
    let (c, f, l, kw, s) = (d(1, 3), d(1, 3), d(6, 12), d(1, 4), d(1, 2));
    let (h, w, kh) = (d(5, 8), d(5, 8), d(1, 3));
    let (pk, ps) = (d(1, 3), d(1, 2));
    let shape = vec![d(1, 3), d(1, 4), d(2, 5)];
    let sh: &[usize] = &shape;
    vec![
        case(Primitive::Linear, &[&[b, i], &[o, i]]),
        case(Primitive::Linear, &[&[b, i], &[o, i], &[o]]),
        case(Primitive::MatMul, &[&[m, k], &[k, n]]),
        case(Primitive::Conv1d { stride: s }, &[&[b, c, l], &[f, c, kw]]),
        case(Primitive::Conv1d { stride: s }, &[&[b, c, l], &[f, c, kw], &[f]]),
        case(Primitive::Conv2d { stride: s }, &[&[b, c, h, w], &[f, c, kh, kh], &[f]]),
        case(Primitive::AvgPool1d { kernel: pk, stride: ps }, &[&[b, c, l]]),
        case(Primitive::AvgPool2d { kernel: pk, stride: ps }, &[&[b, c, h, w]]),
        case(Primitive::LeakyRelu { slope: 0.2 }, &[sh]),
        case(Primitive::Tanh, &[sh]),
        case(Primitive::Softmax, &[sh]),
        case(Primitive::LogSoftmax, &[sh]),
        case(Primitive::Dropout { rate: 0.3, train: true }, &[sh]),
        case(Primitive::Dropout { rate: 0.3, train: false }, &[sh]),
        case(Primitive::Add, &[sh, sh]),
        case(Primitive::Sub, &[sh, sh]),
        case(Primitive::Mul, &[sh, sh]),
        case(Primitive::Scale { factor: -1.7 }, &[sh]),
        case(Primitive::Sum, &[sh]),
        case(Primitive::Mean, &[sh]),
        case(Primitive::L2Norm, &[sh]),
        case(Primitive::Reshape { shape: vec![shape.iter().product()] }, &[sh]),
    ]
}

/// Relative gradient error of every primitive, `draws` random shapes each.
pub fn primitive_gradient_errors(draws: u64) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for seed in 0..draws {
        for (ci, c) in primitive_cases(seed).into_iter().enumerate() {
            let mut r = rng(100 * seed + ci as u64);
            let inputs: Vec<Tensor<f64>> = c.shapes.iter().map(|s| randn(s, &mut r)).collect();
            let prim = c.prim.clone();
            let err = gradcheck(&inputs, None, seed, |tape, vars| {
                let out = tape.apply(prim.clone(), vars).unwrap();
                project(tape, out, 7)
            });
            out.push((format!("{} {:?}", c.prim, c.shapes), err));
        }
    }
    out
}

pub fn kl_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [1, r.random_range(2..6)];
    let inputs = vec![randn(&shape, &mut r), randn(&shape, &mut r)];
    gradcheck(&inputs, None, seed, |tape, v| {
        let p = tape.softmax(v[0]).unwrap();
        let q = tape.softmax(v[1]).unwrap();
        tape.kl_divergence(p, q).unwrap()
    })
}

pub fn small_spec(preset: Preset) -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::preset(preset);
    match preset {
        Preset::MlpToy => spec.hidden = Some(vec![6, 5]),
        Preset::TremorCnn => {
            spec.hidden = Some(vec![3, 4, 5]);
            spec.segment_len = Some(30);
            spec.embedding_dim = Some(6);
            spec.attention_dim = Some(5);
        }
        Preset::Lenet5Mnist => spec.attention_dim = Some(8),
    }
    spec
}

/// Cross-entropy of a labelled bag plus MI-LDS of an unlabelled bag at a
/// fixed perturbation and fixed clean distribution. Returns the value and,
/// when asked, fills parameter gradients and returns the labelled bag's.
fn model_loss(
    model: &mut MilClassifier<f64>,
    labelled: &Tensor<f64>,
    unlabelled: &Tensor<f64>,
    r: &BagPerturbation<f64>,
    clean: &Tensor<f64>,
    with_grad: bool,
) -> (f64, Option<Tensor<f64>>) {
    let mut tape = Tape::with_dropout_rng(rng(99));
    let bound = model.params().bind(&mut tape, true);
    let x = tape.leaf(labelled.clone());
    let out = model.forward(&mut tape, &bound, x, Mode::Train).unwrap();
    let ce = cross_entropy(&mut tape, out.logits, true).unwrap();
    // clean side held at its value before any finite-difference bump
    let mut moved = unlabelled.clone();
    moved.add_assign(&r.directions);
    let xu = tape.constant(moved);
    let perturbed = model.forward(&mut tape, &bound, xu, Mode::Eval).unwrap();
    let p = tape.constant(clean.clone());
    let lds = tape.kl_divergence(p, perturbed.probs).unwrap();
    let total = tape.add(ce, lds).unwrap();
    let value = tape.value(total).unwrap().item();
    if !with_grad {
        return (value, None);
    }
    let grads = tape.backward(total).unwrap();
    model.params_mut().zero_grad();
    model.params_mut().accumulate(&grads, &bound);
    (value, grads.get(x).cloned())
}

fn relative(diff2: f64, a2: f64, b2: f64) -> Option<f64> {
    let denom = a2.sqrt().max(b2.sqrt());
    (denom > 0.0).then(|| diff2.sqrt() / denom)
}

/// Relative error of the full training loss gradient, per parameter and
/// for the labelled input bag.
pub fn model_gradient_errors(preset: Preset, seed: u64) -> Vec<(String, f64)> {
    let mut r = rng(seed);
    let mut model = MilClassifier::<f64>::new(&small_spec(preset), &mut r).unwrap();
    let mut shape = vec![r.random_range(2..5)];
    shape.extend_from_slice(model.instance_shape());
    let labelled = randn(&shape, &mut r).map(|v| v * 0.5);
    shape[0] = r.random_range(2..5);
    let unlabelled = randn(&shape, &mut r).map(|v| v * 0.5);
    let cfg = VatConfig::new(PerturbationVariant::Dense, 0.3);
    let rv = approximate_r_vadv(&model, &unlabelled, &cfg, &mut r).unwrap().perturbation;

    let clean = Tensor::new(vec![1, 2], model.predict(&unlabelled).unwrap().probs.to_vec()).unwrap();
    let (_, gx) = model_loss(&mut model, &labelled, &unlabelled, &rv, &clean, true);
    let gx = gx.unwrap();
    let h = FD_STEP;
    let mut out = Vec::new();
    for pi in 0..model.params().len() {
        let (ad, n, name) = {
            let p = model.params().iter().nth(pi).unwrap();
            (p.grad.clone(), p.value.numel(), p.name.clone())
        };
        let coords: Vec<usize> = if n <= 40 { (0..n).collect() } else { (0..40).map(|_| r.random_range(0..n)).collect() };
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for &j in &coords {
            let bump = |delta: f64, m: &mut MilClassifier<f64>| {
                m.params_mut().iter_mut().nth(pi).unwrap().value.data_mut()[j] += delta;
            };
            bump(h, &mut model);
            let up = model_loss(&mut model, &labelled, &unlabelled, &rv, &clean, false).0;
            bump(-2.0 * h, &mut model);
            let down = model_loss(&mut model, &labelled, &unlabelled, &rv, &clean, false).0;
            bump(h, &mut model);
            let fd = (up - down) / (2.0 * h);
            let a = ad.data()[j];
            diff += (a - fd) * (a - fd);
            na += a * a;
            nf += fd * fd;
        }
        if let Some(rel) = relative(diff, na, nf) {
            out.push((format!("{preset} {name}"), rel));
        }
    }
    let coords: Vec<usize> = (0..30).map(|_| r.random_range(0..labelled.numel())).collect();
    let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
    for &j in &coords {
        let mut x = labelled.clone();
        x.data_mut()[j] += h;
        let up = model_loss(&mut model, &x, &unlabelled, &rv, &clean, false).0;
        x.data_mut()[j] -= 2.0 * h;
        let down = model_loss(&mut model, &x, &unlabelled, &rv, &clean, false).0;
        let fd = (up - down) / (2.0 * h);
        diff += (gx.data()[j] - fd).powi(2);
        na += gx.data()[j].powi(2);
        nf += fd * fd;
    }
    out.push((format!("{preset} input"), relative(diff, na, nf).unwrap_or(0.0)));
    out
}

pub fn tiny_tremor() -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::preset(Preset::TremorCnn);
    spec.hidden = Some(vec![4, 6, 8]);
    spec.segment_len = Some(40);
    spec
}

pub fn bag_for(model: &MilClassifier<f64>, k: usize, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut shape = vec![k];
    shape.extend_from_slice(model.instance_shape());
    randn(&shape, r)
}

/// Largest eval-mode change of the positive probability, or of an
/// instance's attention weight, when a bag's instances are shuffled.
pub fn permutation_max_diff(pairs: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..pairs {
        let mut r = rng(seed);
        let spec = if seed % 4 == 0 { tiny_tremor() } else { ArchitectureSpec::preset(Preset::MlpToy) };
        let model = MilClassifier::<f64>::new(&spec, &mut r).unwrap();
        let k = r.random_range(1..12);
        let bag = bag_for(&model, k, &mut r);
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut r);
        let a = model.predict(&bag).unwrap();
        let b = model.predict(&bag.select_rows(&order)).unwrap();
        worst = worst.max((a.positive() - b.positive()).abs());
        for (new, &old) in order.iter().enumerate() {
            worst = worst.max((b.alpha[new] - a.alpha[old]).abs());
        }
    }
    worst
}

/// Symmetric `Q diag(spectrum) Q^T` with a random orthogonal `Q`; returns
/// the matrix and the eigenvector of `spectrum[0]`.
pub fn spd_with_spectrum(spectrum: &[f64], seed: u64) -> (Vec<f64>, Vec<f64>) {
    let n = spectrum.len();
    let mut r = rng(seed);
    let a = randn(&[n, n], &mut r);
    // Gram-Schmidt on the columns
    let mut q = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut v: Vec<f64> = (0..n).map(|i| a.data()[i * n + j]).collect();
        for prev in q.iter().take(j) {
            let d: f64 = v.iter().zip(prev).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(prev) {
                *x -= d * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q[j] = v.iter().map(|x| x / norm).collect();
    }
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            h[i * n + k] = (0..n).map(|j| q[j][i] * spectrum[j] * q[j][k]).sum();
        }
    }
    (h, q[0].clone())
}

pub fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).abs()
}

pub struct PowerStats {
    /// Worst cosine to the dominant eigenvector after five iterations.
    pub min_cosine: f64,
    /// Starts within 1e-2 of orthogonal to the answer, left out of `min_cosine`.
    pub skipped: usize,
    pub fallbacks: usize,
}

pub fn power_iteration_stats(seeds: u64) -> PowerStats {
    let spectrum = [10.0, 2.0, 1.5, 1.0, 0.8, 0.5, 0.3, 0.1];
    let mut stats = PowerStats { min_cosine: 1.0, skipped: 0, fallbacks: 0 };
    for seed in 0..seeds {
        let (h, top) = spd_with_spectrum(&spectrum, seed);
        let mut div = QuadraticDivergence::new(8, h);
        let mut cfg = VatConfig::new(PerturbationVariant::Dense, 1.0);
        cfg.power_iterations = 5;
        let start = sample_initial_direction::<f64, _>(&[1, 8], cfg.variant, None, &mut rng(seed + 1000)).unwrap();
        if abs_cosine(start.directions.data(), &top) < 1e-2 {
            stats.skipped += 1;
            continue;
        }
        let est = power_iteration(&mut div, start, &cfg).unwrap();
        stats.min_cosine = stats.min_cosine.min(abs_cosine(est.perturbation.directions.data(), &top));
        stats.fallbacks += est.fallbacks;
    }
    stats
}

#[derive(Debug, Default)]
pub struct ContractStats {
    pub calls: usize,
    /// Descriptions of calls that broke the norm or sparsity contract.
    pub violations: Vec<String>,
    /// Upper tail probability of the chi-square statistic of sparse-attention
    /// indices against the model's attention weights.
    pub attention_p: f64,
    pub uniform_p: f64,
}

fn chi2_p(stat: f64, dof: f64) -> f64 {
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

/// `calls` estimates on a toy model, split evenly across the three
/// variants. Sparse-attention calls cycle over a few fixed bags so that
/// index frequencies can be tested against each bag's attention.
pub fn perturbation_contracts(calls: usize, epsilon: f64) -> ContractStats {
    let model = MilClassifier::<f64>::new(&ArchitectureSpec::preset(Preset::MlpToy), &mut rng(1)).unwrap();
    let mut r = rng(11);
    let fixed: Vec<Tensor<f64>> = (0..4).map(|i| randn(&[3 + i, 2], &mut r)).collect();
    let alphas: Vec<Vec<f64>> = fixed.iter().map(|b| model.predict(b).unwrap().alpha).collect();
    let mut attention_counts: Vec<Vec<usize>> = fixed.iter().map(|b| vec![0; b.rows()]).collect();
    let mut uniform_counts: Vec<Vec<usize>> = fixed.iter().map(|b| vec![0; b.rows()]).collect();
    let mut stats = ContractStats { calls, ..Default::default() };
    for call in 0..calls {
        let variant = PerturbationVariant::ALL[call % 3];
        let slot = (call / 3) % fixed.len();
        let bag = if variant.is_sparse() {
            fixed[slot].clone()
        } else {
            let k = r.random_range(1..9);
            randn(&[k, 2], &mut r)
        };
        let k = bag.rows();
        let mut cfg = VatConfig::new(variant, epsilon);
        cfg.xi = 1e-3;
        cfg.power_iterations = 1 + call % 2;
        let est = approximate_r_vadv(&model, &bag, &cfg, &mut r).unwrap();
        let norms = est.perturbation.instance_norms();
        let nonzero: Vec<usize> = (0..k).filter(|&i| norms[i] > 0.0).collect();
        if let Some(&i) = nonzero.iter().find(|&&i| (norms[i] - epsilon).abs() > 1e-5) {
            stats.violations.push(format!("call {call}: instance {i} has norm {}", norms[i]));
        }
        if variant.is_sparse() {
            match est.perturbation.sparse_index {
                Some(idx) if nonzero == [idx] => {}
                other => stats.violations.push(format!("call {call}: index {other:?}, nonzero {nonzero:?}")),
            }
            let counts = if variant == PerturbationVariant::SparseAttention {
                &mut attention_counts
            } else {
                &mut uniform_counts
            };
            if let Some(idx) = est.perturbation.sparse_index {
                counts[slot][idx] += 1;
            }
        } else if nonzero.len() != k || est.perturbation.sparse_index.is_some() {
            stats.violations.push(format!("call {call}: dense with {} of {k} nonzero", nonzero.len()));
        }
    }
    let chi2 = |counts: &[Vec<usize>], expected: &dyn Fn(usize, usize) -> f64| {
        let (mut stat, mut dof) = (0.0, 0.0);
        for (b, c) in counts.iter().enumerate() {
            let n: usize = c.iter().sum();
            for (i, &ci) in c.iter().enumerate() {
                let e = expected(b, i) * n as f64;
                stat += (ci as f64 - e).powi(2) / e;
            }
            dof += (c.len() - 1) as f64;
        }
        chi2_p(stat, dof)
    };
    stats.attention_p = chi2(&attention_counts, &|b, i| alphas[b][i]);
    stats.uniform_p = chi2(&uniform_counts, &|b, _| 1.0 / fixed[b].rows() as f64);
    stats
}

pub fn session_from(seconds: f64, rate: f64, f: impl Fn(f64) -> [f64; 3]) -> Session {
    let n = (seconds * rate).round() as usize;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
    let x = t.iter().map(|&ti| f(ti)).collect();
    Session::new("s", t, x, rate, Units::G).unwrap()
}

/// Largest absolute value left after preprocessing a constant gravity
/// vector, over several sampling rates and both units.
pub fn gravity_residual() -> f64 {
    let rules = ValidationRules::default();
    let mut worst: f64 = 0.0;
    let peak = |p: &ProcessedSignal| p.channels.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for rate in [50.0, 100.0, 200.0] {
        let s = session_from(60.0, rate, |_| [0.0, 0.6, 0.8]);
        worst = worst.max(peak(&preprocess_session(&s, &rules, 0).unwrap()));
    }
    let s = Session::new("s", (0..6000).map(|i| i as f64 / 100.0).collect(), vec![[9.81, 0.0, 0.0]; 6000], 100.0, Units::Ms2)
        .unwrap();
    worst.max(peak(&preprocess_session(&s, &rules, 0).unwrap()))
}

/// Largest gap between processed and expected duration, in seconds.
pub fn resampling_duration_error() -> f64 {
    let rules = ValidationRules::default();
    let mut worst: f64 = 0.0;
    for (rate, seconds) in [(50.0, 40.0), (200.0, 37.3), (100.0, 90.0), (64.0, 55.5)] {
        let s = session_from(seconds, rate, |t| [t.sin(), 0.0, 1.0]);
        let p = preprocess_session(&s, &rules, 0).unwrap();
        let expected = s.duration_s() - 2.0 * rules.trim_s;
        worst = worst.max((p.duration_s() - expected).abs());
    }
    worst
}

/// A processed signal made of `kinds` five-second segments: `true` is a
/// 5 Hz sine, `false` white noise of the same variance.
pub fn mixed_signal(kinds: &[bool], seed: u64) -> ProcessedSignal {
    let mut r = rng(seed);
    let noise = Normal::new(0.0, 0.1 / 2f64.sqrt()).unwrap();
    let mut ch = Vec::new();
    for (j, &sine) in kinds.iter().enumerate() {
        for i in 0..SEGMENT_LEN {
            let t = (j * SEGMENT_LEN + i) as f64 / TARGET_RATE_HZ;
            ch.push(if sine { 0.1 * (TAU * 5.0 * t).sin() } else { noise.sample(&mut r) });
        }
    }
    ProcessedSignal {
        subject_id: "s".into(),
        signal_id: 0,
        offset_s: 0.0,
        channels: [ch.clone(), ch.iter().map(|v| 0.5 * v).collect(), vec![0.0; ch.len()]],
    }
}

/// Number of noise seeds (out of `seeds`) where the three sine segments
/// are not exactly the top three.
pub fn sinusoid_rank_failures(seeds: u64) -> usize {
    let kinds = [false, true, false, false, true, false, true, false];
    (0..seeds)
        .filter(|&seed| {
            let ranked = form_subject_bag("s", &[mixed_signal(&kinds, seed)], 3).unwrap();
            let mut top: Vec<usize> = ranked.iter().map(|s| s.index).collect();
            top.sort();
            top != [1, 4, 6]
        })
        .count()
}

pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Largest |fast - brute| AUC gap over `seeds` draws of 1000 heavily tied scores.
pub fn auc_max_error(seeds: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..seeds {
        let mut r = rng(seed);
        // 25 distinct levels over 1000 instances
        let scores: Vec<f64> = (0..1000).map(|_| r.random_range(0..25) as f64 / 24.0).collect();
        let labels: Vec<bool> = scores.iter().map(|&s| r.random::<f64>() < 0.2 + 0.5 * s).collect();
        worst = worst.max((roc_auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs());
    }
    worst
}

/// Whether threshold metrics equal the ratios of a hand-counted confusion
/// matrix, bit for bit, over `seeds` draws.
pub fn threshold_metrics_exact(seeds: u64) -> bool {
    (0..seeds).all(|seed| {
        let mut r = rng(seed + 9);
        let scores: Vec<f64> = (0..1000).map(|_| r.random_range(0..10) as f64 / 10.0).collect();
        let labels: Vec<bool> = (0..1000).map(|_| r.random::<bool>()).collect();
        let m = threshold_metrics(&scores, &labels, 0.5).unwrap();
        let count = |pred: bool, truth: bool| {
            scores
                .iter()
                .zip(&labels)
                .filter(|&(&s, &l)| (s >= 0.5) == pred && l == truth)
                .count() as f64
        };
        let (tp, fp, fn_, tn) = (count(true, true), count(true, false), count(false, true), count(false, false));
        let precision = tp / (tp + fp);
        let sensitivity = tp / (tp + fn_);
        m.precision == precision
            && m.sensitivity == sensitivity
            && m.specificity == tn / (tn + fp)
            && m.f1 == 2.0 * precision * sensitivity / (precision + sensitivity)
    })
}
