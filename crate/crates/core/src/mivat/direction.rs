use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{PerturbationVariant, VatConfig, VatError};
use crate::autograd::{Real, Tape, Tensor};
use crate::model::{MilClassifier, Mode};

/// Per-instance perturbation of a bag, same shape as the bag tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct BagPerturbation<T> {
    pub directions: Tensor<T>,
    /// The only perturbed instance, for sparse variants.
    pub sparse_index: Option<usize>,
}

impl<T: Real> BagPerturbation<T> {
    pub fn zeros(bag_shape: &[usize]) -> Self {
        Self {
            directions: Tensor::zeros(bag_shape),
            sparse_index: None,
        }
    }

    pub fn bag_len(&self) -> usize {
        self.directions.rows()
    }

    /// L2 norm of every instance's perturbation.
    pub fn instance_norms(&self) -> Vec<f64> {
        (0..self.bag_len())
            .map(|k| {
                self.directions
                    .row(k)
                    .iter()
                    .map(|v| v.as_f64() * v.as_f64())
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    /// Instances allowed to carry a nonzero perturbation.
    fn active(&self) -> Vec<usize> {
        match self.sparse_index {
            Some(j) => vec![j],
            None => (0..self.bag_len()).collect(),
        }
    }

    fn mask(&mut self) {
        if let Some(j) = self.sparse_index {
            for k in (0..self.bag_len()).filter(|&k| k != j) {
                self.directions.row_mut(k).fill(T::zero());
            }
        }
    }
}

/// Outcome of one perturbation estimate.
#[derive(Clone, Debug)]
pub struct Estimate<T> {
    pub perturbation: BagPerturbation<T>,
    /// Instances whose gradient vanished and fell back to the seed direction.
    pub fallbacks: usize,
}

/// A divergence `D(R)` whose gradient the power iteration can query.
pub trait Divergence<T: Real> {
    fn gradient_at(&mut self, r: &Tensor<T>) -> Result<Tensor<T>, VatError>;
}

/// `D(R) = 1/2 R^T H R` on the flattened bag.
#[derive(Clone, Debug)]
pub struct QuadraticDivergence {
    dim: usize,
    /// Row-major `dim x dim`, symmetric.
    h: Vec<f64>,
}

impl QuadraticDivergence {
    pub fn new(dim: usize, h: Vec<f64>) -> Self {
        assert_eq!(h.len(), dim * dim, "H must be dim x dim");
        Self { dim, h }
    }
}

impl<T: Real> Divergence<T> for QuadraticDivergence {
    fn gradient_at(&mut self, r: &Tensor<T>) -> Result<Tensor<T>, VatError> {
        if r.numel() != self.dim {
            return Err(VatError::ShapeMismatch {
                expected: vec![self.dim],
                got: r.shape().to_vec(),
            });
        }
        let g = self
            .h
            .chunks(self.dim)
            .map(|row| {
                T::of(
                    row.iter()
                        .zip(r.data())
                        .map(|(&h, &x)| h * x.as_f64())
                        .sum(),
                )
            })
            .collect();
        Ok(Tensor::new(r.shape().to_vec(), g)?)
    }
}

/// `KL(p(y|X) || p(y|X+R))` for a fixed bag and frozen parameters, with the
/// clean distribution held constant and dropout disabled.
pub struct ModelDivergence<'a, T> {
    model: &'a MilClassifier<T>,
    bag: &'a Tensor<T>,
    clean: Tensor<T>,
}

impl<'a, T: Real> ModelDivergence<'a, T> {
    pub fn new(model: &'a MilClassifier<T>, bag: &'a Tensor<T>, clean: [T; 2]) -> Self {
        Self {
            model,
            bag,
            clean: Tensor::from_parts(vec![1, 2], clean.to_vec()),
        }
    }
}

impl<T: Real> Divergence<T> for ModelDivergence<'_, T> {
    fn gradient_at(&mut self, r: &Tensor<T>) -> Result<Tensor<T>, VatError> {
        let mut tape = Tape::new();
        let bound = self.model.params().bind(&mut tape, false);
        let x = tape.constant(self.bag.clone());
        let rv = tape.leaf(r.clone());
        let xr = tape.add(x, rv)?;
        let out = self.model.forward(&mut tape, &bound, xr, Mode::Eval)?;
        let clean = tape.constant(self.clean.clone());
        let kl = tape.kl_divergence(clean, out.probs)?;
        Ok(tape.input_gradient(kl, rv)?)
    }
}

fn check_attention<T: Real>(alpha: &[T], bag_len: usize) -> Result<(), VatError> {
    let bad = |detail: String| Err(VatError::InvalidAttention { bag_len, detail });
    if alpha.len() != bag_len {
        return bad(format!("{} weights", alpha.len()));
    }
    if alpha.iter().any(|a| !(a.as_f64() >= 0.0)) {
        return bad("negative or NaN weight".into());
    }
    let total: f64 = alpha.iter().map(|a| a.as_f64()).sum();
    if (total - 1.0).abs() > 1e-5 {
        return bad(format!("weights sum to {total}"));
    }
    Ok(())
}

/// Draws the direction seed: standard normal on every instance for the
/// dense variant, on a single chosen instance otherwise.
pub fn sample_initial_direction<T: Real, R: Rng>(
    bag_shape: &[usize],
    variant: PerturbationVariant,
    alpha: Option<&[T]>,
    rng: &mut R,
) -> Result<BagPerturbation<T>, VatError> {
    let bag_len = bag_shape.first().copied().unwrap_or(0);
    if bag_len == 0 {
        return Err(crate::model::ModelError::EmptyBag.into());
    }
    let sparse_index = match variant {
        PerturbationVariant::Dense => None,
        PerturbationVariant::SparseUniform => Some(rng.random_range(0..bag_len)),
        PerturbationVariant::SparseAttention => {
            let alpha = alpha.ok_or(VatError::MissingAttention)?;
            check_attention(alpha, bag_len)?;
            let weights: Vec<f64> = alpha.iter().map(|a| a.as_f64()).collect();
            let dist = WeightedIndex::new(&weights).map_err(|e| VatError::InvalidAttention {
                bag_len,
                detail: e.to_string(),
            })?;
            Some(dist.sample(rng))
        }
    };
    let mut seed = BagPerturbation::zeros(bag_shape);
    seed.sparse_index = sparse_index;
    for k in seed.active() {
        for v in seed.directions.row_mut(k) {
            *v = T::of(StandardNormal.sample(rng));
        }
    }
    Ok(seed)
}

/// Scales each active instance of `g` to norm `scale`. Instances whose
/// gradient vanished take the (already unit) seed row instead.
fn normalize_rows<T: Real>(
    g: &mut BagPerturbation<T>,
    unit_seed: &BagPerturbation<T>,
    scale: f64,
) -> usize {
    let mut fallbacks = 0;
    for k in g.active() {
        let norm = g
            .directions
            .row(k)
            .iter()
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt();
        let row = g.directions.row_mut(k);
        if norm > 0.0 && norm.is_finite() {
            let s = scale / norm;
            for v in row.iter_mut() {
                *v = T::of(v.as_f64() * s);
            }
        } else {
            fallbacks += 1;
            for (v, &u) in row.iter_mut().zip(unit_seed.directions.row(k)) {
                *v = T::of(u.as_f64() * scale);
            }
        }
    }
    fallbacks
}

/// Power iteration on `div` from `seed`, returning the per-instance
/// `epsilon`-normalized dominant direction.
pub fn power_iteration<T: Real, D: Divergence<T>>(
    div: &mut D,
    seed: BagPerturbation<T>,
    cfg: &VatConfig,
) -> Result<Estimate<T>, VatError> {
    cfg.validate()?;
    let mut unit = seed.clone();
    unit.mask();
    // A zero-norm seed row cannot be a fallback; use a unit basis vector.
    for k in unit.active() {
        let row = unit.directions.row_mut(k);
        if row.iter().all(|v| *v == T::zero()) {
            row[0] = T::one();
        }
    }
    let raw = unit.clone();
    normalize_rows(&mut unit, &raw, 1.0);

    let mut v = unit.clone();
    let mut fallbacks = 0;
    for step in 0..cfg.power_iterations {
        let probe = v.directions.map(|x| x * T::of(cfg.xi));
        let mut g = BagPerturbation {
            directions: div.gradient_at(&probe)?,
            sparse_index: v.sparse_index,
        };
        if g.directions.shape() != v.directions.shape() {
            return Err(VatError::ShapeMismatch {
                expected: v.directions.shape().to_vec(),
                got: g.directions.shape().to_vec(),
            });
        }
        g.mask();
        let last = step + 1 == cfg.power_iterations;
        let scale = if last { cfg.epsilon } else { 1.0 };
        fallbacks += normalize_rows(&mut g, &unit, scale);
        v = g;
    }
    if fallbacks > 0 {
        log::debug!("perturbation estimate fell back to the seed direction on {fallbacks} instance(s)");
    }
    Ok(Estimate {
        perturbation: v,
        fallbacks,
    })
}

/// Estimates the virtual adversarial perturbation of one bag. Parameters are
/// read only; their gradient slots are not touched.
pub fn approximate_r_vadv<T: Real, R: Rng>(
    model: &MilClassifier<T>,
    bag: &Tensor<T>,
    cfg: &VatConfig,
    rng: &mut R,
) -> Result<Estimate<T>, VatError> {
    cfg.validate()?;
    let clean = model.predict(bag)?;
    let seed = sample_initial_direction(bag.shape(), cfg.variant, Some(&clean.alpha), rng)?;
    let mut div = ModelDivergence::new(model, bag, clean.probs);
    power_iteration(&mut div, seed, cfg)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn degenerate_attention_always_picks_its_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let seed = sample_initial_direction::<f64, _>(
                &[3, 2],
                PerturbationVariant::SparseAttention,
                Some(&[1.0, 0.0, 0.0]),
                &mut rng,
            )
            .unwrap();
            assert_eq!(seed.sparse_index, Some(0));
            assert_eq!(&seed.directions.data()[2..], &[0.0; 4]);
        }
    }

    #[test]
    fn attention_variant_needs_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = sample_initial_direction::<f64, _>(
            &[2, 2],
            PerturbationVariant::SparseAttention,
            None,
            &mut rng,
        );
        assert!(matches!(err, Err(VatError::MissingAttention)));
        let err = sample_initial_direction::<f64, _>(
            &[2, 2],
            PerturbationVariant::SparseAttention,
            Some(&[0.7, 0.7]),
            &mut rng,
        );
        assert!(matches!(err, Err(VatError::InvalidAttention { .. })));
    }

    struct Flat;

    impl Divergence<f64> for Flat {
        fn gradient_at(&mut self, r: &Tensor<f64>) -> Result<Tensor<f64>, VatError> {
            Ok(Tensor::zeros(r.shape()))
        }
    }

    #[test]
    fn vanishing_gradient_falls_back_to_the_seed() {
        let seed = BagPerturbation {
            directions: Tensor::from_f64(&[2, 2], &[3.0, 4.0, 0.0, -2.0]).unwrap(),
            sparse_index: None,
        };
        let cfg = VatConfig::new(PerturbationVariant::Dense, 0.5);
        let est = power_iteration(&mut Flat, seed, &cfg).unwrap();
        assert_eq!(est.fallbacks, 2);
        let d = est.perturbation.directions.data();
        let expect = [0.3, 0.4, 0.0, -0.5];
        for (a, b) in d.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{d:?}");
        }
    }
}
