//! Bag construction: synthetic MIL problems, IDX image files and the
//! accelerometer session pipeline.

mod circles;
mod idx;
mod manifest;
pub mod signal;
mod synth;
mod tremor;

pub use circles::{two_circles_bags, two_circles_pool, CirclesSpec};
pub use idx::{load_idx_images, read_idx, write_idx, IdxArray, IdxData};
pub use manifest::{BagManifest, ManifestEntry, MANIFEST_VERSION};
pub use synth::{generate_synthetic_bags, BagSplits, SynthesisSpec};
pub use tremor::{
    form_subject_bag, preprocess_session, read_session_csv, synth_tremor_cohort, write_session_csv,
    BurstTruth, ChannelStats, CohortSpec, Discard, ProcessedSignal, Segment, Session,
    SubjectRecord, Units, ValidationRules, SEGMENT_LEN, TARGET_RATE_HZ,
};

use crate::autograd::{AutogradError, Tensor};

/// Labelled instance collection that bags are drawn from.
#[derive(Clone, Debug)]
pub struct InstancePool {
    /// `[N, instance_shape...]`
    pub instances: Tensor<f32>,
    pub labels: Vec<u8>,
}

impl InstancePool {
    pub fn new(instances: Tensor<f32>, labels: Vec<u8>) -> Result<Self, DatasetError> {
        if instances.rows() != labels.len() {
            return Err(DatasetError::Invalid(format!(
                "{} instances but {} labels",
                instances.rows(),
                labels.len()
            )));
        }
        Ok(Self { instances, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn instance_shape(&self) -> &[usize] {
        &self.instances.shape()[1..]
    }
}

/// A set of instances with one (possibly hidden) label.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub id: String,
    /// `[K, instance_shape...]`
    pub instances: Tensor<f32>,
    pub label: Option<bool>,
    pub subject_id: Option<String>,
    /// Source indices of the instances (pool rows, or segment ids).
    pub provenance: Vec<usize>,
    /// Ground-truth instance labels, when the generator knows them.
    pub instance_labels: Option<Vec<bool>>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy with the label removed.
    pub fn unlabelled(&self) -> Bag {
        Bag {
            label: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("instance pool exhausted: need {needed} {class} instances, pool has {available} (short by {})", needed - available)]
    PoolExhausted {
        class: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("invalid synthesis spec: {0}")]
    Spec(String),
    #[error("{path}: byte {offset}: {detail}")]
    Idx {
        path: String,
        offset: usize,
        detail: String,
    },
    #[error("{path}:{line}: {detail}")]
    Csv {
        path: String,
        line: usize,
        detail: String,
    },
    #[error("no segments available for subject {0}")]
    NoSegments(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Autograd(#[from] AutogradError),
}
