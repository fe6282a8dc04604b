use rand::Rng;

use super::direction::{approximate_r_vadv, BagPerturbation};
use super::{VatConfig, VatError};
use crate::autograd::{Real, Tape, Tensor, Var};
use crate::model::{Bound, MilClassifier, Mode};

/// `-log p(label)` from logits `[1, 2]`.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, label: bool) -> Result<Var, VatError> {
    let logp = tape.log_softmax(logits)?;
    let onehot = if label { [0.0, 1.0] } else { [1.0, 0.0] };
    let target = tape.constant(Tensor::from_f64(&[1, 2], &onehot)?);
    let picked = tape.mul(logp, target)?;
    let total = tape.sum(picked)?;
    Ok(tape.scale(total, -1.0)?)
}

fn check_shape<T: Real>(bag: &Tensor<T>, r: &BagPerturbation<T>) -> Result<(), VatError> {
    if r.directions.shape() != bag.shape() {
        return Err(VatError::ShapeMismatch {
            expected: bag.shape().to_vec(),
            got: r.directions.shape().to_vec(),
        });
    }
    Ok(())
}

/// `KL(p(y|X) || p(y|X+R))` recorded on `tape`. The clean distribution is
/// computed off-tape, so gradients reach the parameters only through the
/// perturbed branch. Dropout is off on both sides.
pub fn mi_lds_loss<T: Real>(
    model: &MilClassifier<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    bag: &Tensor<T>,
    r: &BagPerturbation<T>,
) -> Result<Var, VatError> {
    check_shape(bag, r)?;
    let clean = model.predict(bag)?;
    let mut perturbed = bag.clone();
    perturbed.add_assign(&r.directions);
    let x = tape.constant(perturbed);
    let out = model.forward(tape, bound, x, Mode::Eval)?;
    let p = tape.constant(Tensor::new(vec![1, 2], clean.probs.to_vec())?);
    Ok(tape.kl_divergence(p, out.probs)?)
}

/// Value of [`mi_lds_loss`] without recording anything.
pub fn mi_lds_value<T: Real>(
    model: &MilClassifier<T>,
    bag: &Tensor<T>,
    r: &BagPerturbation<T>,
) -> Result<T, VatError> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, false);
    let kl = mi_lds_loss(model, &mut tape, &bound, bag, r)?;
    Ok(tape.value(kl)?.item())
}

/// The scalar objective and its two terms.
#[derive(Clone, Copy, Debug)]
pub struct LossParts<T> {
    pub total: Var,
    pub cross_entropy: T,
    /// Mean over unlabelled bags; zero when there are none.
    pub mi_lds: T,
    pub fallbacks: usize,
}

fn mean_of<T: Real>(tape: &mut Tape<T>, terms: &[Var]) -> Result<Var, VatError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64)?)
}

/// Mean cross-entropy over `labelled` plus `lambda_u` times the mean MI-LDS
/// over `unlabelled`. Labelled bags run in `mode`; perturbation estimates use
/// frozen parameters drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<T: Real, R: Rng>(
    model: &MilClassifier<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    labelled: &[(&Tensor<T>, bool)],
    unlabelled: &[&Tensor<T>],
    cfg: Option<&VatConfig>,
    mode: Mode,
    rng: &mut R,
) -> Result<LossParts<T>, VatError> {
    if labelled.is_empty() {
        return Err(VatError::EmptyLabelledBatch);
    }
    let mut ce_terms = Vec::with_capacity(labelled.len());
    for &(bag, label) in labelled {
        let x = tape.constant(bag.clone());
        let out = model.forward(tape, bound, x, mode)?;
        ce_terms.push(cross_entropy(tape, out.logits, label)?);
    }
    let ce = mean_of(tape, &ce_terms)?;
    let ce_value = tape.value(ce)?.item();

    let (cfg, unlabelled) = match cfg {
        Some(cfg) if !unlabelled.is_empty() => (cfg, unlabelled),
        _ => {
            return Ok(LossParts {
                total: ce,
                cross_entropy: ce_value,
                mi_lds: T::zero(),
                fallbacks: 0,
            })
        }
    };
    let mut fallbacks = 0;
    let mut lds_terms = Vec::with_capacity(unlabelled.len());
    for &bag in unlabelled {
        let est = approximate_r_vadv(model, bag, cfg, rng)?;
        fallbacks += est.fallbacks;
        lds_terms.push(mi_lds_loss(model, tape, bound, bag, &est.perturbation)?);
    }
    let lds = mean_of(tape, &lds_terms)?;
    let lds_value = tape.value(lds)?.item();
    let weighted = tape.scale(lds, cfg.lambda_u)?;
    let total = tape.add(ce, weighted)?;
    Ok(LossParts {
        total,
        cross_entropy: ce_value,
        mi_lds: lds_value,
        fallbacks,
    })
}
