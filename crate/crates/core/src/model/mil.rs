use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchitectureSpec, Preset, Resolved};
use super::layers::{uniform_tensor, Gain, Mode, Sequential, StackBuilder};
use super::params::{Bound, ParamId, ParamStore};
use super::ModelError;
use crate::autograd::{Real, Tape, Tensor, Var};

/// Attention pooling: `alpha = softmax_k(w^T tanh(V h_k))`, no biases.
#[derive(Clone, Debug)]
pub struct AttentionPool {
    /// `[L, M]`
    pub v: ParamId,
    /// `[1, L]`
    pub w: ParamId,
}

impl AttentionPool {
    /// Attention weights `[1, K]` for instance embeddings `h: [K, M]`.
    pub fn weights<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        h: Var,
    ) -> Result<Var, ModelError> {
        let hidden = tape.linear(h, bound.var(self.v), None)?;
        let hidden = tape.tanh(hidden)?;
        let scores = tape.linear(hidden, bound.var(self.w), None)?;
        let k = tape.value(scores)?.shape()[0];
        let scores = tape.reshape(scores, &[1, k])?;
        Ok(tape.softmax(scores)?)
    }
}

/// Tape handles produced by one bag forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BagOutput {
    /// `[K, M]`
    pub instances: Var,
    /// `[1, K]`
    pub alpha: Var,
    /// `[1, M]`
    pub embedding: Var,
    /// `[1, 2]`
    pub logits: Var,
    /// `[1, 2]`
    pub probs: Var,
}

/// Bag-level prediction read back from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    /// `[p(y=0), p(y=1)]`
    pub probs: [T; 2],
    pub alpha: Vec<T>,
}

impl<T: Real> Prediction<T> {
    pub fn positive(&self) -> T {
        self.probs[1]
    }
}

#[derive(Clone, Debug)]
pub struct MilClassifier<T> {
    spec: ArchitectureSpec,
    resolved: Resolved,
    params: ParamStore<T>,
    embedder: Sequential,
    pool: AttentionPool,
    head: Sequential,
}

impl<T: Real> MilClassifier<T> {
    /// Builds the architecture with freshly initialized parameters.
    pub fn new<R: Rng>(spec: &ArchitectureSpec, rng: &mut R) -> Result<Self, ModelError> {
        let r = spec.resolve()?;
        let mut params = ParamStore::new();
        let slope = r.leaky_slope;
        let leaky = Gain::Rectifier(slope);

        let embed = StackBuilder::new(&mut params, rng, "embedder", &r.instance_shape);
        let embed = match r.preset {
            Preset::MlpToy => {
                let mut b = embed;
                for &width in &r.hidden {
                    b = b.linear(width, Gain::Glorot).tanh();
                }
                b.linear(r.embedding_dim, Gain::Glorot).tanh()
            }
            Preset::Lenet5Mnist => embed
                .conv2d(r.hidden[0], 5, 1, leaky)
                .leaky_relu(slope)
                .avg_pool2d(2)
                .conv2d(r.hidden[1], 5, 1, leaky)
                .leaky_relu(slope)
                .avg_pool2d(2)
                .dropout(r.dropout)
                .flatten(),
            Preset::TremorCnn => {
                let mut b = embed;
                for &filters in &r.hidden {
                    b = b
                        .conv1d(filters, 4, 2, leaky)
                        .leaky_relu(slope)
                        .dropout(r.dropout);
                }
                b.global_avg_pool1d()
                    .linear(r.embedding_dim, leaky)
                    .leaky_relu(slope)
            }
        };
        let (embedder, m) = embed.finish();
        debug_assert_eq!(m, r.embedding_dim);

        let l = r.attention_dim;
        let v = uniform_tensor(&[l, m], (6.0 / (l + m) as f64).sqrt(), rng);
        let w = uniform_tensor(&[1, l], (6.0 / (l + 1) as f64).sqrt(), rng);
        let pool = AttentionPool {
            v: params.add("attention.v", v),
            w: params.add("attention.w", w),
        };

        let head = StackBuilder::new(&mut params, rng, "head", &[m]);
        let head = match r.preset {
            Preset::TremorCnn => head
                .linear(32, leaky)
                .leaky_relu(slope)
                .linear(10, leaky)
                .leaky_relu(slope)
                .linear(2, Gain::Glorot),
            Preset::MlpToy | Preset::Lenet5Mnist => head.linear(2, Gain::Glorot),
        };
        let (head, classes) = head.finish();
        debug_assert_eq!(classes, 2);

        Ok(Self {
            spec: spec.clone(),
            resolved: r,
            params,
            embedder,
            pool,
            head,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn instance_shape(&self) -> &[usize] {
        &self.resolved.instance_shape
    }

    pub fn embedding_dim(&self) -> usize {
        self.resolved.embedding_dim
    }

    pub fn attention_dim(&self) -> usize {
        self.resolved.attention_dim
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn pool(&self) -> &AttentionPool {
        &self.pool
    }

    pub fn cast<U: Real>(&self) -> MilClassifier<U> {
        MilClassifier {
            spec: self.spec.clone(),
            resolved: self.resolved.clone(),
            params: self.params.cast(),
            embedder: self.embedder.clone(),
            pool: self.pool.clone(),
            head: self.head.clone(),
        }
    }

    /// Checks a bag tensor `[K, instance_shape...]`.
    pub fn check_bag(&self, bag: &Tensor<T>) -> Result<(), ModelError> {
        let shape = bag.shape();
        if shape.is_empty() || shape[0] == 0 {
            return Err(ModelError::EmptyBag);
        }
        if shape[1..] != self.resolved.instance_shape[..] {
            return Err(ModelError::InstanceShape {
                index: 0,
                expected: self.resolved.instance_shape.clone(),
                got: shape[1..].to_vec(),
            });
        }
        Ok(())
    }

    /// Stacks individual instances into a bag tensor, naming the first
    /// instance whose shape does not fit the embedder.
    pub fn stack_instances(&self, instances: &[Tensor<T>]) -> Result<Tensor<T>, ModelError> {
        if instances.is_empty() {
            return Err(ModelError::EmptyBag);
        }
        for (index, x) in instances.iter().enumerate() {
            if x.shape() != self.resolved.instance_shape.as_slice() {
                return Err(ModelError::InstanceShape {
                    index,
                    expected: self.resolved.instance_shape.clone(),
                    got: x.shape().to_vec(),
                });
            }
        }
        Ok(Tensor::stack(instances)?)
    }

    /// `phi` applied row-wise: `[K, ...] -> [K, M]`.
    pub fn embed(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        bag: Var,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        self.embedder.forward(tape, bound, bag, mode)
    }

    /// Full forward pass of one bag that is already on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        bag: Var,
        mode: Mode,
    ) -> Result<BagOutput, ModelError> {
        self.check_bag(tape.value(bag)?)?;
        let instances = self.embed(tape, bound, bag, mode)?;
        let alpha = self.pool.weights(tape, bound, instances)?;
        let embedding = tape.matmul(alpha, instances)?;
        let logits = self.head.forward(tape, bound, embedding, mode)?;
        let probs = tape.softmax(logits)?;
        Ok(BagOutput {
            instances,
            alpha,
            embedding,
            logits,
            probs,
        })
    }

    /// Instance embeddings `[K, M]` in eval mode.
    pub fn embed_instances(&self, bag: &Tensor<T>) -> Result<Tensor<T>, ModelError> {
        self.check_bag(bag)?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(bag.clone());
        let h = self.embed(&mut tape, &bound, x, Mode::Eval)?;
        Ok(tape.value(h)?.clone())
    }

    /// Attention weights for precomputed embeddings `[K, M]`.
    pub fn attention_weights(&self, embeddings: &Tensor<T>) -> Result<Vec<T>, ModelError> {
        let shape = embeddings.shape();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(ModelError::EmptyBag);
        }
        if shape[1] != self.resolved.embedding_dim {
            return Err(ModelError::InstanceShape {
                index: 0,
                expected: vec![self.resolved.embedding_dim],
                got: shape[1..].to_vec(),
            });
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let h = tape.constant(embeddings.clone());
        let alpha = self.pool.weights(&mut tape, &bound, h)?;
        Ok(tape.value(alpha)?.data().to_vec())
    }

    /// Class probabilities and attention weights. Train mode needs a dropout
    /// stream when the architecture has dropout.
    pub fn predict_bag(
        &self,
        bag: &Tensor<T>,
        mode: Mode,
        dropout_rng: Option<ChaCha8Rng>,
    ) -> Result<Prediction<T>, ModelError> {
        let mut tape = match dropout_rng {
            Some(rng) => Tape::with_dropout_rng(rng),
            None => Tape::new(),
        };
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(bag.clone());
        let out = self.forward(&mut tape, &bound, x, mode)?;
        let p = tape.value(out.probs)?.data();
        Ok(Prediction {
            probs: [p[0], p[1]],
            alpha: tape.value(out.alpha)?.data().to_vec(),
        })
    }

    /// Eval-mode prediction.
    pub fn predict(&self, bag: &Tensor<T>) -> Result<Prediction<T>, ModelError> {
        self.predict_bag(bag, Mode::Eval, None)
    }

    /// `rho(z)` for a single bag embedding `z: [M]`, eval mode.
    pub fn head_probs(&self, z: &[T]) -> Result<[T; 2], ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let logits = self.head.forward(&mut tape, &bound, x, Mode::Eval)?;
        let probs = tape.softmax(logits)?;
        let p = tape.value(probs)?.data();
        Ok([p[0], p[1]])
    }

    /// Replaces parameter values by name; every parameter must be present
    /// with its exact shape.
    pub(crate) fn load_values(
        &mut self,
        mut lookup: impl FnMut(&str) -> Option<Tensor<T>>,
    ) -> Result<(), ModelError> {
        for p in self.params.iter_mut() {
            let value = lookup(&p.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if value.shape() != p.value.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {} has shape {:?}, architecture expects {:?}",
                    p.name,
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn toy() -> MilClassifier<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        MilClassifier::new(&ArchitectureSpec::preset(Preset::MlpToy), &mut rng).unwrap()
    }

    #[test]
    fn preset_parameter_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tremor: MilClassifier<f32> =
            MilClassifier::new(&ArchitectureSpec::preset(Preset::TremorCnn), &mut rng).unwrap();
        assert_eq!(tremor.instance_shape(), &[3, 500]);
        assert_eq!(tremor.embedding_dim(), 64);
        let shapes: Vec<(String, Vec<usize>)> = tremor
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect();
        let expect = [
            vec![32, 3, 4],
            vec![32],
            vec![64, 32, 4],
            vec![64],
            vec![128, 64, 4],
            vec![128],
            vec![64, 128],
            vec![64],
            vec![128, 64],
            vec![1, 128],
            vec![32, 64],
            vec![32],
            vec![10, 32],
            vec![10],
            vec![2, 10],
            vec![2],
        ];
        let got: Vec<Vec<usize>> = shapes.iter().map(|(_, s)| s.clone()).collect();
        assert_eq!(got, expect);

        let lenet: MilClassifier<f32> =
            MilClassifier::new(&ArchitectureSpec::preset(Preset::Lenet5Mnist), &mut rng).unwrap();
        assert_eq!(lenet.embedding_dim(), 800);
        assert_eq!(lenet.params().by_name("attention.v").unwrap().value.shape(), &[128, 800]);
        assert_eq!(toy().embedding_dim(), 2);
    }

    #[test]
    fn lenet_embeds_digits_to_800() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model: MilClassifier<f32> =
            MilClassifier::new(&ArchitectureSpec::preset(Preset::Lenet5Mnist), &mut rng).unwrap();
        let bag = Tensor::full(&[2, 1, 28, 28], 0.5f32);
        assert_eq!(model.embed_instances(&bag).unwrap().shape(), &[2, 800]);
    }

    #[test]
    fn single_instance_gets_all_attention() {
        let model = toy();
        let bag = Tensor::from_f64(&[1, 2], &[0.3, -0.7]).unwrap();
        let pred = model.predict(&bag).unwrap();
        assert_eq!(pred.alpha, vec![1.0]);
        assert!((pred.probs[0] + pred.probs[1] - 1.0).abs() < 1e-12);
        assert!(pred.probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn wrong_instance_shape_names_the_index() {
        let model = toy();
        let good = Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap();
        let bad = Tensor::from_f64(&[3], &[0.0, 1.0, 2.0]).unwrap();
        match model.stack_instances(&[good.clone(), good, bad]) {
            Err(ModelError::InstanceShape { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(model.stack_instances(&[]), Err(ModelError::EmptyBag)));
    }
}
