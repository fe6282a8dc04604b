use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bag, DatasetError};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// `null` for unlabelled bags.
    pub label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    pub provenance: Vec<usize>,
    /// Row range of this bag's instances in the split's payload file.
    pub rows: [usize; 2],
}

/// One split's bag list. Instances live in a companion float IDX payload of
/// shape `[total_instances, instance_shape...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagManifest {
    pub schema_version: u32,
    pub split: String,
    pub instance_shape: Vec<usize>,
    pub bags: Vec<ManifestEntry>,
}

impl BagManifest {
    pub fn from_bags(split: &str, bags: &[Bag]) -> Result<Self, DatasetError> {
        let instance_shape = bags
            .first()
            .map(|b| b.instances.shape()[1..].to_vec())
            .unwrap_or_default();
        let mut row = 0;
        let entries = bags
            .iter()
            .map(|b| {
                let entry = ManifestEntry {
                    id: b.id.clone(),
                    label: b.label.map(u8::from),
                    subject_id: b.subject_id.clone(),
                    provenance: b.provenance.clone(),
                    rows: [row, row + b.len()],
                };
                row += b.len();
                entry
            })
            .collect();
        Ok(Self {
            schema_version: MANIFEST_VERSION,
            split: split.to_string(),
            instance_shape,
            bags: entries,
        })
    }

    pub fn positive_fraction(&self) -> Option<f64> {
        let labelled: Vec<u8> = self.bags.iter().filter_map(|b| b.label).collect();
        (!labelled.is_empty())
            .then(|| labelled.iter().filter(|&&l| l == 1).count() as f64 / labelled.len() as f64)
    }

    pub fn to_json(&self) -> Result<String, DatasetError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.schema_version != MANIFEST_VERSION {
            return Err(DatasetError::Invalid(format!(
                "{}: manifest schema {} is not supported (expected {MANIFEST_VERSION})",
                path.display(),
                m.schema_version
            )));
        }
        Ok(m)
    }
}
