mod common;

use common::oracles::{abs_cosine, perturbation_contracts, power_iteration_stats};
use common::{randn, rng};
use mivat::autograd::Tensor;
use mivat::mivat::{
    approximate_r_vadv, mi_lds_value, power_iteration, sample_initial_direction, total_loss,
    BagPerturbation, Divergence, PerturbationVariant, QuadraticDivergence, VatConfig, VatError,
};
use mivat::model::{ArchitectureSpec, MilClassifier, Mode, Preset};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn power_iteration_finds_dominant_eigenvector() {
    let stats = power_iteration_stats(200);
    assert!(stats.min_cosine >= 0.99, "cosine {}", stats.min_cosine);
    assert_eq!(stats.fallbacks, 0);
    assert!(stats.skipped <= 6, "{} near-orthogonal seeds", stats.skipped);
}

#[test]
fn block_diagonal_hessian_aligns_each_instance() {
    // three instances of dimension 2, one block each
    let blocks = [[3.0, 1.0, 1.0, 3.0], [1.0, 0.0, 0.0, 5.0], [2.0, -1.5, -1.5, 2.0]];
    let tops = [[1.0, 1.0], [0.0, 1.0], [1.0, -1.0]];
    let mut h = vec![0.0; 36];
    for (b, blk) in blocks.iter().enumerate() {
        for i in 0..2 {
            for j in 0..2 {
                h[(2 * b + i) * 6 + 2 * b + j] = blk[i * 2 + j];
            }
        }
    }
    let mut cfg = VatConfig::new(PerturbationVariant::Dense, 0.7);
    cfg.power_iterations = 8;
    let start = sample_initial_direction::<f64, _>(&[3, 2], cfg.variant, None, &mut rng(2)).unwrap();
    let est = power_iteration(&mut QuadraticDivergence::new(6, h), start, &cfg).unwrap();
    for (k, top) in tops.iter().enumerate() {
        assert!(abs_cosine(est.perturbation.directions.row(k), top) > 0.99);
    }
    for n in est.perturbation.instance_norms() {
        assert!((n - 0.7).abs() < 1e-12);
    }
}

struct Flat;

impl Divergence<f64> for Flat {
    fn gradient_at(&mut self, r: &Tensor<f64>) -> Result<Tensor<f64>, VatError> {
        Ok(Tensor::zeros(r.shape()))
    }
}

#[test]
fn vanishing_gradient_falls_back_to_seed() {
    let seed = sample_initial_direction::<f64, _>(&[4, 3], PerturbationVariant::Dense, None, &mut rng(1)).unwrap();
    let cfg = VatConfig::new(PerturbationVariant::Dense, 2.0);
    let est = power_iteration(&mut Flat, seed.clone(), &cfg).unwrap();
    assert_eq!(est.fallbacks, 4);
    for k in 0..4 {
        assert!(abs_cosine(est.perturbation.directions.row(k), seed.directions.row(k)) > 1.0 - 1e-12);
    }
    for n in est.perturbation.instance_norms() {
        assert!((n - 2.0).abs() < 1e-12);
    }
}

#[test]
fn sparse_index_frequencies_follow_attention() {
    let alpha = [0.05, 0.4, 0.15, 0.3, 0.1];
    let draws = 20_000;
    let mut counts = [0usize; 5];
    let mut r = rng(9);
    for _ in 0..draws {
        let s = sample_initial_direction::<f64, _>(&[5, 2], PerturbationVariant::SparseAttention, Some(&alpha), &mut r).unwrap();
        counts[s.sparse_index.unwrap()] += 1;
    }
    let chi2: f64 = counts
        .iter()
        .zip(alpha)
        .map(|(&c, a)| {
            let e = a * draws as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p = 1.0 - ChiSquared::new(4.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2}, p {p}");
}

#[test]
fn sparse_uniform_index_is_uniform() {
    let mut counts = [0usize; 4];
    let mut r = rng(10);
    for _ in 0..8000 {
        let s = sample_initial_direction::<f64, _>(&[4, 3], PerturbationVariant::SparseUniform, None, &mut r).unwrap();
        counts[s.sparse_index.unwrap()] += 1;
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 2000.0).powi(2) / 2000.0).sum();
    assert!(1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2) > 0.01);
}

fn toy(seed: u64) -> MilClassifier<f64> {
    MilClassifier::new(&ArchitectureSpec::preset(Preset::MlpToy), &mut rng(seed)).unwrap()
}

#[test]
fn norm_and_sparsity_contracts_on_a_model() {
    let stats = perturbation_contracts(1500, 0.5);
    assert!(stats.violations.is_empty(), "{:?}", &stats.violations[..stats.violations.len().min(5)]);
    assert!(stats.attention_p > 0.01, "p {}", stats.attention_p);
    assert!(stats.uniform_p > 0.01, "p {}", stats.uniform_p);
}

#[test]
fn mi_lds_is_kl_between_clean_and_perturbed_predictions() {
    let model = toy(2);
    let mut r = rng(12);
    for _ in 0..20 {
        let bag = randn(&[4, 2], &mut r);
        let cfg = VatConfig::new(PerturbationVariant::SparseAttention, 0.4);
        let est = approximate_r_vadv(&model, &bag, &cfg, &mut r).unwrap();
        let mut moved = bag.clone();
        moved.add_assign(&est.perturbation.directions);
        let p = model.predict(&bag).unwrap().probs;
        let q = model.predict(&moved).unwrap().probs;
        let kl: f64 = (0..2).map(|c| p[c] * (p[c] / q[c]).ln()).sum();
        assert!((mi_lds_value(&model, &bag, &est.perturbation).unwrap() - kl).abs() < 1e-12);
    }
}

#[test]
fn total_loss_combines_both_terms() {
    let model = toy(3);
    let mut r = rng(13);
    let labelled: Vec<(Tensor<f64>, bool)> = (0..3).map(|i| (randn(&[3, 2], &mut r), i % 2 == 0)).collect();
    let unlabelled: Vec<Tensor<f64>> = (0..4).map(|_| randn(&[5, 2], &mut r)).collect();
    let mut cfg = VatConfig::new(PerturbationVariant::Dense, 0.3);
    cfg.lambda_u = 2.5;

    let lab: Vec<(&Tensor<f64>, bool)> = labelled.iter().map(|(b, l)| (b, *l)).collect();
    let unl: Vec<&Tensor<f64>> = unlabelled.iter().collect();
    let mut tape = mivat::autograd::Tape::new();
    let bound = model.params().bind(&mut tape, true);
    let parts = total_loss(&model, &mut tape, &bound, &lab, &unl, Some(&cfg), Mode::Eval, &mut rng(77)).unwrap();

    let ce: f64 = labelled
        .iter()
        .map(|(b, l)| -model.predict(b).unwrap().probs[usize::from(*l)].ln())
        .sum::<f64>()
        / 3.0;
    let mut same = rng(77);
    let lds: f64 = unlabelled
        .iter()
        .map(|b| {
            let est = approximate_r_vadv(&model, b, &cfg, &mut same).unwrap();
            mi_lds_value(&model, b, &est.perturbation).unwrap()
        })
        .sum::<f64>()
        / 4.0;
    assert!((parts.cross_entropy - ce).abs() < 1e-12);
    assert!((parts.mi_lds - lds).abs() < 1e-12);
    assert!((tape.value(parts.total).unwrap().item() - (ce + 2.5 * lds)).abs() < 1e-12);

    // no unlabelled bags: the objective is the cross-entropy alone
    let parts = total_loss(&model, &mut tape, &bound, &lab, &[], Some(&cfg), Mode::Eval, &mut rng(1)).unwrap();
    assert_eq!(parts.mi_lds, 0.0);
    assert!((tape.value(parts.total).unwrap().item() - ce).abs() < 1e-12);
}

#[test]
fn estimation_leaves_parameters_untouched() {
    let model = toy(4);
    let before: Vec<Tensor<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
    let bag = randn(&[6, 2], &mut rng(5));
    for variant in PerturbationVariant::ALL {
        approximate_r_vadv(&model, &bag, &VatConfig::new(variant, 1.0), &mut rng(6)).unwrap();
    }
    for (p, b) in model.params().iter().zip(&before) {
        assert_eq!(&p.value, b);
        assert!(p.grad.data().iter().all(|g| *g == 0.0), "{} has a gradient", p.name);
    }
}

#[test]
fn adversarial_direction_beats_random_ones() {
    let model = toy(5);
    let mut r = rng(14);
    let mut wins = 0;
    let bags = 50;
    for _ in 0..bags {
        let bag = randn(&[5, 2], &mut r).map(|v| v * 0.7);
        let mut cfg = VatConfig::new(PerturbationVariant::Dense, 0.05);
        cfg.power_iterations = 3;
        let adv = approximate_r_vadv(&model, &bag, &cfg, &mut r).unwrap();
        let adv_kl = mi_lds_value(&model, &bag, &adv.perturbation).unwrap();
        let random_mean: f64 = (0..20)
            .map(|_| {
                let mut d = randn(&[5, 2], &mut r);
                for k in 0..5 {
                    let n = d.row(k).iter().map(|x| x * x).sum::<f64>().sqrt();
                    d.row_mut(k).iter_mut().for_each(|x| *x *= 0.05 / n);
                }
                let pert = BagPerturbation { directions: d, sparse_index: None };
                mi_lds_value(&model, &bag, &pert).unwrap()
            })
            .sum::<f64>()
            / 20.0;
        if adv_kl > random_mean {
            wins += 1;
        }
    }
    assert!(wins >= 45, "{wins}/{bags}");
}

#[test]
fn invalid_attention_is_rejected() {
    let bad = [0.5, 0.6];
    let err = sample_initial_direction::<f64, _>(&[2, 2], PerturbationVariant::SparseAttention, Some(&bad), &mut rng(1));
    assert!(matches!(err, Err(VatError::InvalidAttention { bag_len: 2, .. })));
    let err = sample_initial_direction::<f64, _>(&[3, 2], PerturbationVariant::SparseAttention, Some(&[0.5, 0.5]), &mut rng(1));
    assert!(err.is_err());
}

