//! Semi-supervised multiple-instance learning with virtual adversarial bag
//! perturbations.
//!
//! Layout:
//! - [`autograd`]: tape-based reverse-mode differentiation engine
//! - [`model`]: attention-based MIL classifier and architecture presets
//! - [`mivat`]: bag perturbations, MI-LDS loss and the semi-supervised objective
//! - [`datasets`]: synthetic bag generators, IDX loader, accelerometer pipeline
//! - [`harness`]: optimizers, training loop, metrics, LOSO and repeated trials

pub mod autograd;
pub mod datasets;
pub mod harness;
pub mod mivat;
pub mod model;
pub mod seed;
