//! Virtual adversarial bag perturbations and the semi-supervised objective.
//!
//! The random seed bag used to start the power iteration is called the
//! *direction seed* here, to keep it apart from the attention matrix `V`.

mod direction;
mod loss;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use direction::{
    approximate_r_vadv, power_iteration, sample_initial_direction, BagPerturbation, Divergence,
    Estimate, ModelDivergence, QuadraticDivergence,
};
pub use loss::{cross_entropy, mi_lds_loss, mi_lds_value, total_loss, LossParts};

use crate::autograd::AutogradError;
use crate::model::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationVariant {
    /// Every instance is perturbed.
    Dense,
    /// One instance, chosen uniformly.
    SparseUniform,
    /// One instance, chosen with probability equal to its attention weight.
    SparseAttention,
}

impl PerturbationVariant {
    pub const ALL: [PerturbationVariant; 3] = [
        PerturbationVariant::Dense,
        PerturbationVariant::SparseUniform,
        PerturbationVariant::SparseAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationVariant::Dense => "dense",
            PerturbationVariant::SparseUniform => "sparse-uniform",
            PerturbationVariant::SparseAttention => "sparse-attention",
        }
    }

    pub fn is_sparse(self) -> bool {
        self != PerturbationVariant::Dense
    }
}

impl fmt::Display for PerturbationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationVariant {
    type Err = VatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| VatError::Config(format!("unknown perturbation variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VatConfig {
    /// Finite-difference scale of the probe perturbation.
    #[serde(default = "default_xi")]
    pub xi: f64,
    /// Per-instance L2 norm of the returned perturbation.
    pub epsilon: f64,
    #[serde(default = "default_power_iterations")]
    pub power_iterations: usize,
    pub variant: PerturbationVariant,
    /// Weight of the unlabelled term in the total loss.
    #[serde(default = "default_lambda_u")]
    pub lambda_u: f64,
}

fn default_xi() -> f64 {
    1e-6
}

fn default_power_iterations() -> usize {
    1
}

fn default_lambda_u() -> f64 {
    1.0
}

impl VatConfig {
    pub fn new(variant: PerturbationVariant, epsilon: f64) -> Self {
        Self {
            xi: default_xi(),
            epsilon,
            power_iterations: default_power_iterations(),
            variant,
            lambda_u: default_lambda_u(),
        }
    }

    pub fn validate(&self) -> Result<(), VatError> {
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(VatError::Config(format!("xi must be positive, got {}", self.xi)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(VatError::Config(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.power_iterations == 0 {
            return Err(VatError::Config("power_iterations must be >= 1".into()));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return Err(VatError::Config(format!(
                "lambda_u must be non-negative, got {}",
                self.lambda_u
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VatError {
    #[error("invalid perturbation config: {0}")]
    Config(String),
    #[error("sparse-attention sampling needs attention weights")]
    MissingAttention,
    #[error("attention weights are not a distribution over {bag_len} instances: {detail}")]
    InvalidAttention { bag_len: usize, detail: String },
    #[error("perturbation shape {got:?} does not match bag shape {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("labelled batch is empty")]
    EmptyLabelledBatch,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
}

impl VatError {
    /// Errors that only arise once activations have gone non-finite.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            VatError::InvalidAttention { .. } | VatError::Autograd(AutogradError::NotNormalized(_))
        )
    }
}
