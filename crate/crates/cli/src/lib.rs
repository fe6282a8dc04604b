//! Library side of the `mivat` binary: config parsing, dataset artifacts,
//! experiment runs and report tables.

pub mod config;
pub mod data;
pub mod report;
pub mod run;

pub use config::{ExperimentConfig, OUTPUT_ROOT_ENV};
pub use report::{compare, ComparisonRow};
pub use run::{cmd_generate, cmd_run, RunOptions};

use mivat::harness::HarnessError;

/// Version string embedded in every artifact.
pub const VERSION: &str = env!("MIVAT_VERSION");

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Exit status for a failed command: 3 when training diverged, 2 otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let diverged = err
        .chain()
        .any(|e| matches!(e.downcast_ref::<HarnessError>(), Some(HarnessError::NonFinite { .. })));
    if diverged {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}
