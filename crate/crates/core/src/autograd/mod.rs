//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records primitive applications as they are evaluated. Calling
//! [`Tape::backward`] on a scalar output replays the records in reverse and
//! returns the gradients of every differentiable leaf. Parameters are plain
//! leaves, so gradients with respect to inputs (e.g. a bag perturbation) and
//! with respect to parameters come out of the same sweep.

mod ops;
mod primitive;
mod real;
mod tape;
mod tensor;

pub use ops::{window_output_len, KL_EPSILON, KL_NORMALIZATION_TOLERANCE};
pub use primitive::Primitive;
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: invalid attribute: {detail}")]
    Attribute { op: &'static str, detail: String },
    #[error("{op}: expected {expected:?} operands, got {got}")]
    Arity {
        op: &'static str,
        expected: Vec<usize>,
        got: usize,
    },
    #[error("unknown primitive `{0}`")]
    UnknownPrimitive(String),
    #[error("backward needs a one-element output, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("gradient target is not a differentiable leaf of the tape")]
    NotLeaf,
    #[error("kl_divergence: {0}")]
    NotNormalized(String),
    #[error("dropout in train mode needs a seeded rng stream on the tape")]
    MissingDropoutRng,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kl(p: &[f64], q: &[f64]) -> Result<f64, AutogradError> {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::from_f64(&[p.len()], p)?);
        let q = tape.constant(Tensor::from_f64(&[q.len()], q)?);
        let d = tape.kl_divergence(p, q)?;
        Ok(tape.value(d)?.item())
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        assert_eq!(kl(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn kl_point_mass_against_uniform() {
        let v = kl(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn kl_grows_as_q_degenerates() {
        let mut last = 0.0;
        for e in [1e-1, 1e-2, 1e-4, 1e-8] {
            let v = kl(&[0.5, 0.5], &[1.0 - e, e]).unwrap();
            assert!(v > last);
            last = v;
        }
        // floor keeps it finite at q = 0
        assert!(kl(&[0.5, 0.5], &[1.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn kl_rejects_unnormalized_inputs() {
        assert!(matches!(
            kl(&[0.5, 0.6], &[0.5, 0.5]),
            Err(AutogradError::NotNormalized(_))
        ));
        assert!(matches!(
            kl(&[0.5, 0.5], &[1.5, -0.5]),
            Err(AutogradError::NotNormalized(_))
        ));
    }

    #[test]
    fn conv1d_output_length_matches_sliding_window() {
        // naive sliding window count
        let naive = |len: usize, k: usize, s: usize| (0..).take_while(|t| t * s + k <= len).count();
        assert_eq!(window_output_len(500, 4, 2), Some(naive(500, 4, 2)));
        assert_eq!(window_output_len(500, 4, 2), Some(249));

        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 500]));
        let w = tape.constant(Tensor::zeros(&[32, 3, 4]));
        let y = tape.apply(Primitive::Conv1d { stride: 2 }, &[x, w]).unwrap();
        assert_eq!(tape.value(y).unwrap().shape(), &[1, 32, 249]);
    }
}
