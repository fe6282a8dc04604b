//! Declarative experiment files (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mivat::datasets::{CirclesSpec, CohortSpec, SynthesisSpec, ValidationRules};
use mivat::harness::OptimizerConfig;
use mivat::mivat::{PerturbationVariant, VatConfig};
use mivat::model::{ArchitectureSpec, Preset};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Run directory name under the output root.
    pub name: String,
    pub seed: u64,
    /// Output root; `MIVAT_OUTPUT_ROOT` takes precedence.
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ArchitectureSpec,
    pub vat: VatSection,
    pub optimizer: OptimizerConfig,
    pub evaluation: EvaluationConfig,
    /// Directory of the config file; relative dataset paths hang off it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    TwoCircles {
        synthesis: SynthesisSpec,
        #[serde(default)]
        circles: CirclesSpec,
    },
    MnistBags {
        synthesis: SynthesisSpec,
        /// Directory holding the four IDX files; relative to the config file.
        data_dir: PathBuf,
    },
    TremorSynthetic {
        subjects: usize,
        tremor_fraction: f64,
        #[serde(default)]
        unlabelled_subjects: usize,
        k_t: usize,
        #[serde(default)]
        cohort: CohortSpec,
        #[serde(default)]
        rules: ValidationRules,
        #[serde(default = "yes")]
        normalize: bool,
    },
    /// `subjects.csv` (`subject_id,label`, empty label = unlabelled) and
    /// `sessions/<subject_id>/*.csv` under `root`.
    TremorCsv {
        root: PathBuf,
        k_t: usize,
        #[serde(default)]
        rules: ValidationRules,
        #[serde(default = "yes")]
        normalize: bool,
    },
}

fn yes() -> bool {
    true
}

impl DatasetConfig {
    pub fn preset_name(&self) -> &'static str {
        match self {
            DatasetConfig::TwoCircles { .. } => "two-circles",
            DatasetConfig::MnistBags { .. } => "mnist-bags",
            DatasetConfig::TremorSynthetic { .. } => "tremor-synthetic",
            DatasetConfig::TremorCsv { .. } => "tremor-csv",
        }
    }

    fn expected_model(&self) -> Preset {
        match self {
            DatasetConfig::TwoCircles { .. } => Preset::MlpToy,
            DatasetConfig::MnistBags { .. } => Preset::Lenet5Mnist,
            DatasetConfig::TremorSynthetic { .. } | DatasetConfig::TremorCsv { .. } => Preset::TremorCnn,
        }
    }

    fn is_subject_level(&self) -> bool {
        matches!(self, DatasetConfig::TremorSynthetic { .. } | DatasetConfig::TremorCsv { .. })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantChoice {
    /// Supervised baseline: no unlabelled term.
    None,
    Dense,
    SparseUniform,
    SparseAttention,
}

impl VariantChoice {
    pub fn variant(self) -> Option<PerturbationVariant> {
        match self {
            VariantChoice::None => None,
            VariantChoice::Dense => Some(PerturbationVariant::Dense),
            VariantChoice::SparseUniform => Some(PerturbationVariant::SparseUniform),
            VariantChoice::SparseAttention => Some(PerturbationVariant::SparseAttention),
        }
    }

    pub fn name(self) -> &'static str {
        self.variant().map_or("none", PerturbationVariant::name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VatSection {
    pub variant: VariantChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_u: Option<f64>,
}

impl VatSection {
    pub fn none() -> Self {
        Self {
            variant: VariantChoice::None,
            epsilon: None,
            xi: None,
            power_iterations: None,
            lambda_u: None,
        }
    }

    pub fn resolve(&self) -> anyhow::Result<Option<VatConfig>> {
        let Some(variant) = self.variant.variant() else {
            let set: Vec<&str> = [
                ("epsilon", self.epsilon.is_some()),
                ("xi", self.xi.is_some()),
                ("power_iterations", self.power_iterations.is_some()),
                ("lambda_u", self.lambda_u.is_some()),
            ]
            .into_iter()
            .filter_map(|(k, on)| on.then_some(k))
            .collect();
            if !set.is_empty() {
                bail!("vat: {} set but variant is \"none\"", set.join(", "));
            }
            return Ok(None);
        };
        let epsilon = self
            .epsilon
            .with_context(|| format!("vat.epsilon is required for variant {}", variant))?;
        let mut cfg = VatConfig::new(variant, epsilon);
        if let Some(x) = self.xi {
            cfg.xi = x;
        }
        if let Some(p) = self.power_iterations {
            cfg.power_iterations = p;
        }
        if let Some(l) = self.lambda_u {
            cfg.lambda_u = l;
        }
        cfg.validate().context("vat")?;
        Ok(Some(cfg))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Holdout,
    Loso,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub protocol: Protocol,
    pub trials: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl ExperimentConfig {
    /// Parses and validates; TOML errors carry line and column.
    pub fn parse(text: &str, origin: &str) -> anyhow::Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| anyhow::anyhow!("{origin}: {e}"))?;
        cfg.validate().with_context(|| format!("{origin}: invalid config"))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(cfg)
    }

    /// `p` as seen from the config file's directory.
    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            bail!("name {:?} must be a plain directory name", self.name);
        }
        let expected = self.dataset.expected_model();
        if self.model.preset != expected {
            bail!(
                "model.preset {} does not fit dataset {} (expected {expected})",
                self.model.preset,
                self.dataset.preset_name()
            );
        }
        self.model.resolve().context("model")?;
        self.vat.resolve()?;
        self.optimizer.validate().context("optimizer")?;
        if self.evaluation.trials == 0 {
            bail!("evaluation.trials must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.evaluation.threshold) {
            bail!("evaluation.threshold {} must lie in [0, 1]", self.evaluation.threshold);
        }
        let wants_loso = self.evaluation.protocol == Protocol::Loso;
        if wants_loso != self.dataset.is_subject_level() {
            bail!(
                "evaluation.protocol {:?} does not fit dataset {} (loso is for subject-level tremor data)",
                self.evaluation.protocol,
                self.dataset.preset_name()
            );
        }
        match &self.dataset {
            DatasetConfig::TwoCircles { synthesis, .. } | DatasetConfig::MnistBags { synthesis, .. } => {
                synthesis.validate().context("dataset.synthesis")?;
            }
            DatasetConfig::TremorSynthetic {
                subjects,
                tremor_fraction,
                k_t,
                ..
            } => {
                if !(*tremor_fraction > 0.0 && *tremor_fraction < 1.0) {
                    bail!("dataset.tremor_fraction {tremor_fraction} must lie in (0, 1)");
                }
                if *subjects < 3 {
                    bail!("dataset.subjects must be >= 3 for leave-one-subject-out");
                }
                if *k_t == 0 {
                    bail!("dataset.k_t must be >= 1");
                }
            }
            DatasetConfig::TremorCsv { k_t, .. } => {
                if *k_t == 0 {
                    bail!("dataset.k_t must be >= 1");
                }
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON of the dataset section and seed.
    pub fn dataset_hash(&self) -> String {
        let canonical = serde_json::json!({ "dataset": self.dataset, "seed": self.seed });
        hex(&Sha256::digest(canonical.to_string().as_bytes()))
    }

    pub fn method(&self) -> &'static str {
        self.vat.variant.name()
    }

    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.output_dir.clone(),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root().join(&self.name)
    }
}

pub const OUTPUT_ROOT_ENV: &str = "MIVAT_OUTPUT_ROOT";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
