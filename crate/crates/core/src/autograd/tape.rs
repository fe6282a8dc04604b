use std::sync::atomic::{AtomicU64, Ordering};

use rand_chacha::ChaCha8Rng;

use super::ops::{self, Saved};
use super::{AutogradError, Primitive, Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    /// Position on the tape; inputs always have a smaller index than outputs.
    pub fn index(&self) -> usize {
        self.index
    }
}

struct Record<T> {
    prim: Primitive,
    inputs: Vec<usize>,
    saved: Saved<T>,
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    // None for leaves and for values computed from constants only
    record: Option<Record<T>>,
}

/// Wengert list of primitive applications.
///
/// Nodes are appended in evaluation order, so the list is topologically
/// sorted by construction. Operations whose operands are all constants are
/// evaluated but not recorded for differentiation.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    dropout_rng: Option<ChaCha8Rng>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            dropout_rng: None,
        }
    }

    /// A tape whose train-mode dropout draws its masks from `rng`.
    pub fn with_dropout_rng(rng: ChaCha8Rng) -> Self {
        let mut tape = Self::new();
        tape.dropout_rng = Some(rng);
        tape
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes carrying a differentiable record.
    pub fn record_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.record.is_some()).count()
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, record: Option<Record<T>>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            record,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// A differentiable input (parameter or perturbation).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, true, None)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, None)
    }

    /// Copy of `var`'s value cut off from the graph (stop-gradient).
    pub fn detach(&mut self, var: Var) -> Result<Var, AutogradError> {
        let value = self.value(var)?.clone();
        Ok(self.constant(value))
    }

    fn check(&self, var: Var) -> Result<usize, AutogradError> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            Err(AutogradError::ForeignVar)
        } else {
            Ok(var.index)
        }
    }

    pub fn value(&self, var: Var) -> Result<&Tensor<T>, AutogradError> {
        Ok(&self.nodes[self.check(var)?].value)
    }

    pub fn requires_grad(&self, var: Var) -> Result<bool, AutogradError> {
        Ok(self.nodes[self.check(var)?].requires_grad)
    }

    pub fn is_leaf(&self, var: Var) -> Result<bool, AutogradError> {
        Ok(self.nodes[self.check(var)?].record.is_none())
    }

    /// Evaluate `prim` on `inputs` and append the result.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var, AutogradError> {
        prim.validate()?;
        if !prim.arity().contains(&inputs.len()) {
            return Err(AutogradError::Arity {
                op: prim.name(),
                expected: prim.arity().to_vec(),
                got: inputs.len(),
            });
        }
        let indices = inputs
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>, _>>()?;
        let (value, saved) = {
            let operands: Vec<&Tensor<T>> = indices.iter().map(|&i| &self.nodes[i].value).collect();
            ops::forward(&prim, &operands, self.dropout_rng.as_mut())?
        };
        let requires_grad = indices.iter().any(|&i| self.nodes[i].requires_grad);
        let record = requires_grad.then_some(Record {
            prim,
            inputs: indices,
            saved,
        });
        Ok(self.push(value, requires_grad, record))
    }

    /// Reverse sweep from a one-element output.
    ///
    /// Each record is visited once, in reverse tape order; gradients of values
    /// used several times accumulate additively.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, AutogradError> {
        let out = self.check(output)?;
        let out_node = &self.nodes[out];
        if !out_node.value.is_scalar() {
            return Err(AutogradError::NonScalar(out_node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(out + 1, || None);
        if out_node.requires_grad {
            grads[out] = Some(Tensor::ones(out_node.value.shape()));
        }
        for index in (0..=out).rev() {
            let Some(record) = &self.nodes[index].record else {
                continue;
            };
            let Some(dy) = grads[index].take() else {
                continue;
            };
            let needs: Vec<bool> = record
                .inputs
                .iter()
                .map(|&i| self.nodes[i].requires_grad)
                .collect();
            let operands: Vec<&Tensor<T>> =
                record.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let input_grads = ops::backward(
                &record.prim,
                &operands,
                &self.nodes[index].value,
                &record.saved,
                &dy,
                &needs,
            );
            for ((&input, grad), need) in record.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(grad), true) = (grad, need) else {
                    continue;
                };
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&grad),
                    slot => *slot = Some(grad),
                }
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    /// Gradient of a scalar output with respect to one differentiable leaf.
    ///
    /// Nothing outside the returned tensor is modified; parameter gradient
    /// slots live with their owners and are untouched.
    pub fn input_gradient(&self, output: Var, wrt: Var) -> Result<Tensor<T>, AutogradError> {
        let index = self.check(wrt)?;
        let node = &self.nodes[index];
        if node.record.is_some() || !node.requires_grad {
            return Err(AutogradError::NotLeaf);
        }
        let shape = node.value.shape().to_vec();
        let grads = self.backward(output)?;
        Ok(grads
            .get(wrt)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&shape)))
    }

    /// `sum p log(p/q)` with a probability floor on `q`.
    pub fn kl_divergence(&mut self, p: Var, q: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::KlDivergence, &[p, q])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, AutogradError> {
        match b {
            Some(b) => self.apply(Primitive::Linear, &[x, w, b]),
            None => self.apply(Primitive::Linear, &[x, w]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, AutogradError> {
        self.apply(Primitive::Scale { factor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::Mean, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::Tanh, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AutogradError> {
        self.apply(Primitive::LogSoftmax, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutogradError> {
        self.apply(
            Primitive::Reshape {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }
}

/// Result of a reverse sweep: gradients of the differentiable leaves.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `var` is unreachable from the output or not differentiable.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }
}
