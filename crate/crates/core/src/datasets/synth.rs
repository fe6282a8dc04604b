use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Bag, DatasetError, InstancePool};

/// How synthetic bags are drawn from an instance pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSpec {
    pub k_mean: f64,
    pub k_std: f64,
    /// Probability that a bag is positive.
    pub p1: f64,
    /// Instance class that makes a bag positive.
    pub positive_class: u8,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    pub n_test: usize,
}

impl SynthesisSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |s: String| Err(DatasetError::Spec(s));
        if !(self.p1 > 0.0 && self.p1 < 1.0) {
            return bad(format!("p1 = {} must lie in (0, 1)", self.p1));
        }
        if !(self.k_mean.is_finite() && self.k_std.is_finite() && self.k_std >= 0.0) {
            return bad(format!("bag length N({}, {}) is not a valid Gaussian", self.k_mean, self.k_std));
        }
        if self.k_mean - 2.0 * self.k_std < 1.0 {
            log::warn!(
                "k_mean - 2 k_std = {} < 1: many bag lengths will be clamped to 1",
                self.k_mean - 2.0 * self.k_std
            );
        }
        Ok(())
    }
}

/// Bags for the three splits, plus the bag-length draws before rounding.
#[derive(Clone, Debug)]
pub struct BagSplits {
    pub labelled: Vec<Bag>,
    pub unlabelled: Vec<Bag>,
    pub test: Vec<Bag>,
    /// Continuous length samples of every bag, in generation order
    /// (labelled, unlabelled, test).
    pub raw_lengths: Vec<f64>,
}

struct Plan {
    raw_len: f64,
    len: usize,
    positives: usize,
}

fn plan_bags<R: Rng>(spec: &SynthesisSpec, n: usize, rng: &mut R) -> Vec<Plan> {
    let normal = Normal::new(spec.k_mean, spec.k_std).expect("validated");
    (0..n)
        .map(|_| {
            let raw_len: f64 = normal.sample(rng);
            let len = ((raw_len + 0.5).floor()).max(1.0) as usize;
            let positive = rng.random::<f64>() < spec.p1;
            let positives = if positive { rng.random_range(1..=len) } else { 0 };
            Plan {
                raw_len,
                len,
                positives,
            }
        })
        .collect()
}

/// Draws bags for `plans` without replacement from `pool`.
fn fill_bags<R: Rng>(
    plans: &[Plan],
    pool: &InstancePool,
    positive_class: u8,
    names: &[(&str, usize)],
    rng: &mut R,
) -> Result<Vec<Vec<Bag>>, DatasetError> {
    let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
        (0..pool.len()).partition(|&i| pool.labels[i] == positive_class);
    let need_pos: usize = plans.iter().map(|p| p.positives).sum();
    let need_neg: usize = plans.iter().map(|p| p.len - p.positives).sum();
    if need_pos > pos.len() {
        return Err(DatasetError::PoolExhausted {
            class: "positive",
            needed: need_pos,
            available: pos.len(),
        });
    }
    if need_neg > neg.len() {
        return Err(DatasetError::PoolExhausted {
            class: "negative",
            needed: need_neg,
            available: neg.len(),
        });
    }
    pos.shuffle(rng);
    neg.shuffle(rng);
    let (mut pos, mut neg) = (pos.into_iter(), neg.into_iter());

    let mut plans = plans.iter();
    let mut out = Vec::new();
    for &(name, count) in names {
        let mut split = Vec::with_capacity(count);
        for b in 0..count {
            let plan = plans.next().expect("one plan per bag");
            let mut members: Vec<(usize, bool)> = pos
                .by_ref()
                .take(plan.positives)
                .map(|i| (i, true))
                .chain(neg.by_ref().take(plan.len - plan.positives).map(|i| (i, false)))
                .collect();
            members.shuffle(rng);
            let provenance: Vec<usize> = members.iter().map(|m| m.0).collect();
            split.push(Bag {
                id: format!("{name}-{b:05}"),
                instances: pool.instances.select_rows(&provenance),
                label: Some(plan.positives > 0),
                subject_id: None,
                provenance,
                instance_labels: Some(members.iter().map(|m| m.1).collect()),
            });
        }
        out.push(split);
    }
    Ok(out)
}

/// Labelled and unlabelled bags come from `train_pool` and never share an
/// instance; test bags come from `test_pool`. Unlabelled bags are generated
/// like labelled ones and then lose their label.
pub fn generate_synthetic_bags<R: Rng>(
    spec: &SynthesisSpec,
    train_pool: &InstancePool,
    test_pool: &InstancePool,
    rng: &mut R,
) -> Result<BagSplits, DatasetError> {
    spec.validate()?;
    let train_plans = plan_bags(spec, spec.n_labelled + spec.n_unlabelled, rng);
    let test_plans = plan_bags(spec, spec.n_test, rng);
    let raw_lengths = train_plans
        .iter()
        .chain(&test_plans)
        .map(|p| p.raw_len)
        .collect();

    let mut train = fill_bags(
        &train_plans,
        train_pool,
        spec.positive_class,
        &[("labelled", spec.n_labelled), ("unlabelled", spec.n_unlabelled)],
        rng,
    )?;
    let test = fill_bags(&test_plans, test_pool, spec.positive_class, &[("test", spec.n_test)], rng)?
        .remove(0);
    let unlabelled = train.pop().expect("two splits").iter().map(Bag::unlabelled).collect();
    let labelled = train.pop().expect("two splits");
    Ok(BagSplits {
        labelled,
        unlabelled,
        test,
        raw_lengths,
    })
}
