use std::fmt;
use std::str::FromStr;

use super::AutogradError;

/// Every operation the tape knows how to differentiate.
///
/// Attributes live in the variant; tensor operands are passed separately to
/// [`Tape::apply`](super::Tape::apply).
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `x[B,in] * w[out,in]^T (+ b[out])`
    Linear,
    /// `a[m,k] * b[k,n]`
    MatMul,
    /// `x[B,C,L]`, `w[F,C,k]`, optional `b[F]`; valid padding.
    Conv1d { stride: usize },
    /// `x[B,C,H,W]`, `w[F,C,kh,kw]`, optional `b[F]`; valid padding.
    Conv2d { stride: usize },
    AvgPool1d { kernel: usize, stride: usize },
    AvgPool2d { kernel: usize, stride: usize },
    LeakyRelu { slope: f64 },
    Tanh,
    /// Over the last axis.
    Softmax,
    /// Over the last axis.
    LogSoftmax,
    Dropout { rate: f64, train: bool },
    Add,
    Sub,
    Mul,
    Scale { factor: f64 },
    Sum,
    Mean,
    L2Norm,
    Reshape { shape: Vec<usize> },
    /// `sum p log(p / q)` for two probability tensors of equal shape.
    KlDivergence,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Linear => "linear",
            Primitive::MatMul => "matmul",
            Primitive::Conv1d { .. } => "conv1d",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::AvgPool1d { .. } => "avg_pool1d",
            Primitive::AvgPool2d { .. } => "avg_pool2d",
            Primitive::LeakyRelu { .. } => "leaky_relu",
            Primitive::Tanh => "tanh",
            Primitive::Softmax => "softmax",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::Dropout { .. } => "dropout",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale { .. } => "scale",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::L2Norm => "l2_norm",
            Primitive::Reshape { .. } => "reshape",
            Primitive::KlDivergence => "kl_divergence",
        }
    }

    /// Accepted operand counts.
    pub(crate) fn arity(&self) -> &'static [usize] {
        match self {
            Primitive::Linear | Primitive::Conv1d { .. } | Primitive::Conv2d { .. } => &[2, 3],
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::KlDivergence => &[2],
            _ => &[1],
        }
    }

    pub(crate) fn validate(&self) -> Result<(), AutogradError> {
        let bad = |detail: String| {
            Err(AutogradError::Attribute {
                op: self.name(),
                detail,
            })
        };
        match *self {
            Primitive::Conv1d { stride } | Primitive::Conv2d { stride } if stride == 0 => {
                bad("stride must be >= 1".into())
            }
            Primitive::AvgPool1d { kernel, stride } | Primitive::AvgPool2d { kernel, stride }
                if kernel == 0 || stride == 0 =>
            {
                bad(format!("kernel {kernel} and stride {stride} must be >= 1"))
            }
            Primitive::Dropout { rate, .. } if !(0.0..1.0).contains(&rate) => {
                bad(format!("rate {rate} outside [0, 1)"))
            }
            Primitive::LeakyRelu { slope } if !slope.is_finite() => bad("slope not finite".into()),
            Primitive::Scale { factor } if !factor.is_finite() => bad("factor not finite".into()),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Primitive::Conv1d { stride } | Primitive::Conv2d { stride } => {
                write!(f, "{}({stride})", self.name())
            }
            Primitive::AvgPool1d { kernel, stride } | Primitive::AvgPool2d { kernel, stride } => {
                write!(f, "{}({kernel},{stride})", self.name())
            }
            Primitive::LeakyRelu { slope } => write!(f, "leaky_relu({slope})"),
            Primitive::Dropout { rate, train } => {
                write!(f, "dropout({rate},{})", if *train { "train" } else { "eval" })
            }
            Primitive::Scale { factor } => write!(f, "scale({factor})"),
            Primitive::Reshape { shape } => {
                let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
                write!(f, "reshape({})", dims.join(","))
            }
            _ => f.write_str(self.name()),
        }
    }
}

/// Parses the `Display` form, e.g. `tanh`, `leaky_relu(0.2)`, `conv1d(2)`.
impl FromStr for Primitive {
    type Err = AutogradError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(open) if s.ends_with(')') => (&s[..open], Some(&s[open + 1..s.len() - 1])),
            Some(_) => return Err(AutogradError::UnknownPrimitive(s.to_string())),
            None => (s, None),
        };
        let args: Vec<&str> = args
            .map(|a| a.split(',').map(str::trim).filter(|x| !x.is_empty()).collect())
            .unwrap_or_default();
        let unknown = || AutogradError::UnknownPrimitive(s.to_string());
        let usize_at = |i: usize| -> Result<usize, AutogradError> {
            args.get(i).and_then(|a| a.parse().ok()).ok_or_else(unknown)
        };
        let f64_at = |i: usize| -> Result<f64, AutogradError> {
            args.get(i).and_then(|a| a.parse().ok()).ok_or_else(unknown)
        };
        let expect_args = |n: usize| if args.len() == n { Ok(()) } else { Err(unknown()) };

        let no_operand_attrs = match name {
            "linear" => Some(Primitive::Linear),
            "matmul" => Some(Primitive::MatMul),
            "tanh" => Some(Primitive::Tanh),
            "softmax" => Some(Primitive::Softmax),
            "log_softmax" => Some(Primitive::LogSoftmax),
            "add" => Some(Primitive::Add),
            "sub" => Some(Primitive::Sub),
            "mul" => Some(Primitive::Mul),
            "sum" => Some(Primitive::Sum),
            "mean" => Some(Primitive::Mean),
            "l2_norm" => Some(Primitive::L2Norm),
            "kl_divergence" => Some(Primitive::KlDivergence),
            _ => None,
        };
        if let Some(prim) = no_operand_attrs {
            expect_args(0)?;
            return Ok(prim);
        }
        let prim = match name {
            "conv1d" => {
                expect_args(1)?;
                Primitive::Conv1d { stride: usize_at(0)? }
            }
            "conv2d" => {
                expect_args(1)?;
                Primitive::Conv2d { stride: usize_at(0)? }
            }
            "avg_pool1d" => {
                expect_args(2)?;
                Primitive::AvgPool1d { kernel: usize_at(0)?, stride: usize_at(1)? }
            }
            "avg_pool2d" => {
                expect_args(2)?;
                Primitive::AvgPool2d { kernel: usize_at(0)?, stride: usize_at(1)? }
            }
            "leaky_relu" => {
                expect_args(1)?;
                Primitive::LeakyRelu { slope: f64_at(0)? }
            }
            "scale" => {
                expect_args(1)?;
                Primitive::Scale { factor: f64_at(0)? }
            }
            "dropout" => {
                expect_args(2)?;
                let train = match args[1] {
                    "train" => true,
                    "eval" => false,
                    _ => return Err(unknown()),
                };
                Primitive::Dropout { rate: f64_at(0)?, train }
            }
            "reshape" => {
                let shape = (0..args.len()).map(usize_at).collect::<Result<Vec<_>, _>>()?;
                Primitive::Reshape { shape }
            }
            _ => return Err(unknown()),
        };
        prim.validate()?;
        Ok(prim)
    }
}
