use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerConfig};
use super::HarnessError;
use crate::autograd::Tape;
use crate::datasets::Bag;
use crate::mivat::{total_loss, VatConfig};
use crate::model::{MilClassifier, Mode};
use crate::seed::{derive_seed, stream};

/// Loss terms averaged over the steps of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub steps: usize,
    pub cross_entropy: f64,
    /// Absent when no unlabelled term was evaluated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mi_lds: Option<f64>,
    pub fallbacks: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochTrace>,
}

impl TrainTrace {
    pub fn final_cross_entropy(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.cross_entropy)
    }

    pub fn has_unlabelled_term(&self) -> bool {
        self.epochs.iter().any(|e| e.mi_lds.is_some())
    }
}

/// Minimizes the mean labelled cross-entropy plus, when `vat` is given and
/// `unlabelled` is non-empty, the weighted MI-LDS term.
///
/// An epoch is one pass over the shuffled labelled bags in batches of
/// `labelled_batch`; each step also takes the next `unlabelled_batch` bags
/// of a shuffled unlabelled order that is reshuffled when exhausted. Every
/// random stream derives from `seed`.
pub fn train(
    model: &mut MilClassifier<f32>,
    labelled: &[Bag],
    unlabelled: &[Bag],
    vat: Option<&VatConfig>,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<TrainTrace, HarnessError> {
    opt.validate()?;
    if let Some(cfg) = vat {
        cfg.validate()?;
    }
    if labelled.is_empty() {
        return Err(HarnessError::Config("no labelled bags to train on".into()));
    }
    let labels: Vec<bool> = labelled
        .iter()
        .map(|b| {
            b.label
                .ok_or_else(|| HarnessError::Config(format!("bag {} has no label", b.id)))
        })
        .collect::<Result<_, _>>()?;
    let use_vat = vat.is_some() && !unlabelled.is_empty() && opt.unlabelled_batch > 0;

    let mut batch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::BATCHES]));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::DROPOUT]));
    let mut perturb_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream::PERTURBATION]));
    let mut optimizer = Optimizer::new(opt, model.params());

    let mut u_order: Vec<usize> = (0..unlabelled.len()).collect();
    let mut u_cursor = u_order.len();
    let mut trace = TrainTrace::default();

    for epoch in 0..opt.epochs {
        let mut order: Vec<usize> = (0..labelled.len()).collect();
        order.shuffle(&mut batch_rng);
        let (mut ce_sum, mut lds_sum, mut fallbacks, mut steps) = (0.0, 0.0, 0, 0);
        for (step, chunk) in order.chunks(opt.labelled_batch).enumerate() {
            let batch: Vec<_> = chunk.iter().map(|&i| (&labelled[i].instances, labels[i])).collect();
            let mut u_batch = Vec::new();
            if use_vat {
                for _ in 0..opt.unlabelled_batch.min(unlabelled.len()) {
                    if u_cursor == u_order.len() {
                        u_order.shuffle(&mut batch_rng);
                        u_cursor = 0;
                    }
                    u_batch.push(&unlabelled[u_order[u_cursor]].instances);
                    u_cursor += 1;
                }
            }

            let mut tape = Tape::with_dropout_rng(ChaCha8Rng::seed_from_u64(dropout_rng.random()));
            model.params_mut().zero_grad();
            let bound = model.params().bind(&mut tape, true);
            let parts = match total_loss(
                model,
                &mut tape,
                &bound,
                &batch,
                &u_batch,
                if use_vat { vat } else { None },
                Mode::Train,
                &mut perturb_rng,
            ) {
                Ok(p) => p,
                Err(e) if e.is_numerical() => {
                    return Err(HarnessError::NonFinite {
                        epoch,
                        step,
                        detail: e.to_string(),
                    })
                }
                Err(e) => return Err(e.into()),
            };
            let ce = f64::from(parts.cross_entropy);
            let lds = f64::from(parts.mi_lds);
            if !ce.is_finite() || !lds.is_finite() {
                return Err(HarnessError::NonFinite {
                    epoch,
                    step,
                    detail: format!("cross-entropy {ce}, mi-lds {lds}"),
                });
            }
            let grads = tape.backward(parts.total)?;
            model.params_mut().accumulate(&grads, &bound);
            optimizer.step(model.params_mut());

            ce_sum += ce;
            lds_sum += lds;
            fallbacks += parts.fallbacks;
            steps += 1;
        }
        let entry = EpochTrace {
            epoch,
            steps,
            cross_entropy: ce_sum / steps as f64,
            mi_lds: use_vat.then(|| lds_sum / steps as f64),
            fallbacks,
        };
        log::debug!("epoch {epoch}: {entry:?}");
        trace.epochs.push(entry);
    }
    Ok(trace)
}

/// Eval-mode positive-class probability of every bag.
pub fn score_bags(model: &MilClassifier<f32>, bags: &[Bag]) -> Result<Vec<f64>, HarnessError> {
    bags.iter()
        .map(|b| Ok(f64::from(model.predict(&b.instances)?.positive())))
        .collect()
}

/// Eval-mode bag embeddings `z = alpha H` of every bag.
pub fn bag_embeddings(model: &MilClassifier<f32>, bags: &[Bag]) -> Result<Vec<Vec<f64>>, HarnessError> {
    bags.iter()
        .map(|b| {
            let h = model.embed_instances(&b.instances)?;
            let alpha = model.attention_weights(&h)?;
            let m = h.row_len();
            let mut z = vec![0.0; m];
            for (k, &a) in alpha.iter().enumerate() {
                for (zi, &hi) in z.iter_mut().zip(h.row(k)) {
                    *zi += f64::from(a) * f64::from(hi);
                }
            }
            Ok(z)
        })
        .collect()
}
