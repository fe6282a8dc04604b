use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::params::{Bound, ParamId, ParamStore};
use super::ModelError;
use crate::autograd::{Primitive, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Nonlinearity that follows a weight layer; selects the init scale.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Gain {
    /// He-style uniform for a leaky rectifier with this slope.
    Rectifier(f64),
    /// Glorot-style uniform for tanh / linear outputs.
    Glorot,
}

fn init_bound(gain: Gain, fan_in: usize, fan_out: usize) -> f64 {
    match gain {
        Gain::Rectifier(slope) => (6.0 / ((1.0 + slope * slope) * fan_in as f64)).sqrt(),
        Gain::Glorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

pub(crate) fn uniform_tensor<T: Real, R: Rng>(
    shape: &[usize],
    bound: f64,
    rng: &mut R,
) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| T::of(dist.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

#[derive(Clone, Debug)]
pub enum Layer {
    Linear {
        weight: ParamId,
        bias: Option<ParamId>,
    },
    Conv1d {
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
    },
    Conv2d {
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Dropout {
        rate: f64,
    },
    AvgPool1d {
        kernel: usize,
        stride: usize,
    },
    AvgPool2d {
        kernel: usize,
        stride: usize,
    },
    /// `[B, C, L] -> [B, C]`
    GlobalAvgPool1d,
    /// `[B, ...] -> [B, prod(...)]`
    Flatten,
}

/// Layers applied in order to a batch tensor.
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        mut x: Var,
        mode: Mode,
    ) -> Result<Var, ModelError> {
        for layer in &self.layers {
            x = match *layer {
                Layer::Linear { weight, bias } => {
                    tape.linear(x, bound.var(weight), bias.map(|b| bound.var(b)))?
                }
                Layer::Conv1d { weight, bias, stride } | Layer::Conv2d { weight, bias, stride } => {
                    let prim = if matches!(layer, Layer::Conv1d { .. }) {
                        Primitive::Conv1d { stride }
                    } else {
                        Primitive::Conv2d { stride }
                    };
                    let mut operands = vec![x, bound.var(weight)];
                    operands.extend(bias.map(|b| bound.var(b)));
                    tape.apply(prim, &operands)?
                }
                Layer::LeakyRelu { slope } => tape.apply(Primitive::LeakyRelu { slope }, &[x])?,
                Layer::Tanh => tape.tanh(x)?,
                Layer::Dropout { rate } => tape.apply(
                    Primitive::Dropout {
                        rate,
                        train: mode == Mode::Train,
                    },
                    &[x],
                )?,
                Layer::AvgPool1d { kernel, stride } => {
                    tape.apply(Primitive::AvgPool1d { kernel, stride }, &[x])?
                }
                Layer::AvgPool2d { kernel, stride } => {
                    tape.apply(Primitive::AvgPool2d { kernel, stride }, &[x])?
                }
                Layer::GlobalAvgPool1d => {
                    let shape = tape.value(x)?.shape().to_vec();
                    let &[batch, channels, len] = shape.as_slice() else {
                        return Err(ModelError::Autograd(crate::autograd::AutogradError::Shape {
                            op: "global_avg_pool1d",
                            detail: format!("expected [B,C,L], got {shape:?}"),
                        }));
                    };
                    let pooled = tape.apply(
                        Primitive::AvgPool1d {
                            kernel: len,
                            stride: len,
                        },
                        &[x],
                    )?;
                    tape.reshape(pooled, &[batch, channels])?
                }
                Layer::Flatten => {
                    let shape = tape.value(x)?.shape().to_vec();
                    let rest: usize = shape[1..].iter().product();
                    tape.reshape(x, &[shape[0], rest])?
                }
            };
        }
        Ok(x)
    }
}

/// Builds a [`Sequential`] while registering its parameters and tracking the
/// per-instance activation shape.
pub(crate) struct StackBuilder<'a, T, R> {
    pub(crate) store: &'a mut ParamStore<T>,
    pub(crate) rng: &'a mut R,
    prefix: String,
    shape: Vec<usize>,
    layers: Vec<Layer>,
}

impl<'a, T: Real, R: Rng> StackBuilder<'a, T, R> {
    pub(crate) fn new(
        store: &'a mut ParamStore<T>,
        rng: &'a mut R,
        prefix: &str,
        input_shape: &[usize],
    ) -> Self {
        Self {
            store,
            rng,
            prefix: prefix.to_string(),
            shape: input_shape.to_vec(),
            layers: Vec::new(),
        }
    }

    fn name(&self, what: &str) -> String {
        format!("{}.{}.{}", self.prefix, self.layers.len(), what)
    }

    pub(crate) fn linear(mut self, out: usize, gain: Gain) -> Self {
        assert_eq!(self.shape.len(), 1, "linear expects a flat input");
        let fan_in = self.shape[0];
        let b = init_bound(gain, fan_in, out);
        let w = uniform_tensor(&[out, fan_in], b, self.rng);
        let weight = self.store.add(self.name("weight"), w);
        let bias = self.store.add(self.name("bias"), Tensor::zeros(&[out]));
        self.layers.push(Layer::Linear {
            weight,
            bias: Some(bias),
        });
        self.shape = vec![out];
        self
    }

    pub(crate) fn conv1d(mut self, filters: usize, kernel: usize, stride: usize, gain: Gain) -> Self {
        let &[channels, len] = self.shape.as_slice() else {
            panic!("conv1d expects [C, L], have {:?}", self.shape)
        };
        let b = init_bound(gain, channels * kernel, filters * kernel);
        let w = uniform_tensor(&[filters, channels, kernel], b, self.rng);
        let weight = self.store.add(self.name("weight"), w);
        let bias = self.store.add(self.name("bias"), Tensor::zeros(&[filters]));
        self.layers.push(Layer::Conv1d {
            weight,
            bias: Some(bias),
            stride,
        });
        let out = crate::autograd::window_output_len(len, kernel, stride).expect("kernel fits");
        self.shape = vec![filters, out];
        self
    }

    pub(crate) fn conv2d(mut self, filters: usize, kernel: usize, stride: usize, gain: Gain) -> Self {
        let &[channels, h, w] = self.shape.as_slice() else {
            panic!("conv2d expects [C, H, W], have {:?}", self.shape)
        };
        let fan_in = channels * kernel * kernel;
        let b = init_bound(gain, fan_in, filters * kernel * kernel);
        let wt = uniform_tensor(&[filters, channels, kernel, kernel], b, self.rng);
        let weight = self.store.add(self.name("weight"), wt);
        let bias = self.store.add(self.name("bias"), Tensor::zeros(&[filters]));
        self.layers.push(Layer::Conv2d {
            weight,
            bias: Some(bias),
            stride,
        });
        let out_len = |n| crate::autograd::window_output_len(n, kernel, stride).expect("kernel fits");
        self.shape = vec![filters, out_len(h), out_len(w)];
        self
    }

    pub(crate) fn leaky_relu(mut self, slope: f64) -> Self {
        self.layers.push(Layer::LeakyRelu { slope });
        self
    }

    pub(crate) fn tanh(mut self) -> Self {
        self.layers.push(Layer::Tanh);
        self
    }

    pub(crate) fn dropout(mut self, rate: f64) -> Self {
        if rate > 0.0 {
            self.layers.push(Layer::Dropout { rate });
        }
        self
    }

    pub(crate) fn avg_pool2d(mut self, kernel: usize) -> Self {
        let &[c, h, w] = self.shape.as_slice() else {
            panic!("avg_pool2d expects [C, H, W]")
        };
        self.layers.push(Layer::AvgPool2d {
            kernel,
            stride: kernel,
        });
        self.shape = vec![c, h / kernel, w / kernel];
        self
    }

    pub(crate) fn global_avg_pool1d(mut self) -> Self {
        self.layers.push(Layer::GlobalAvgPool1d);
        self.shape = vec![self.shape[0]];
        self
    }

    pub(crate) fn flatten(mut self) -> Self {
        self.layers.push(Layer::Flatten);
        self.shape = vec![self.shape.iter().product()];
        self
    }

    /// Finished stack and its per-instance output width.
    pub(crate) fn finish(self) -> (Sequential, usize) {
        assert_eq!(self.shape.len(), 1, "stack must end flat");
        (
            Sequential {
                layers: self.layers,
            },
            self.shape[0],
        )
    }
}
