use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Fully connected 50-30-2 embedder for 2-d point instances.
    MlpToy,
    /// LeNet-5 style convolutional embedder for 28x28 digits.
    Lenet5Mnist,
    /// Strided 1-D convolutions over 3x500 accelerometer segments.
    TremorCnn,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::MlpToy, Preset::Lenet5Mnist, Preset::TremorCnn];

    pub fn name(self) -> &'static str {
        match self {
            Preset::MlpToy => "mlp-toy",
            Preset::Lenet5Mnist => "lenet5-mnist",
            Preset::TremorCnn => "tremor-cnn",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ModelError::UnknownPreset(s.to_string()))
    }
}

/// A named preset plus optional dimension overrides.
///
/// `None` fields take the preset value. Overrides that would change a
/// dimension fixed by the preset's layer stack are rejected by
/// [`ArchitectureSpec::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub preset: Preset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaky_slope: Option<f64>,
    /// Conv filter counts (tremor-cnn) or hidden widths (mlp-toy).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    /// Samples per axis of a tremor segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_len: Option<usize>,
}

/// Every dimension of an architecture, after applying overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub preset: Preset,
    pub instance_shape: Vec<usize>,
    pub embedding_dim: usize,
    pub attention_dim: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub hidden: Vec<usize>,
}

impl ArchitectureSpec {
    pub fn preset(preset: Preset) -> Self {
        Self {
            preset,
            embedding_dim: None,
            attention_dim: None,
            dropout: None,
            leaky_slope: None,
            hidden: None,
            segment_len: None,
        }
    }

    pub fn resolve(&self) -> Result<Resolved, ModelError> {
        let bad = |detail: String| Err(ModelError::InconsistentOverride(detail));
        let r = match self.preset {
            Preset::MlpToy => {
                let hidden = self.hidden.clone().unwrap_or_else(|| vec![50, 30]);
                if hidden.is_empty() || hidden.contains(&0) {
                    return bad(format!("mlp-toy hidden widths {hidden:?} must be non-empty and positive"));
                }
                Resolved {
                    preset: self.preset,
                    instance_shape: vec![2],
                    embedding_dim: self.embedding_dim.unwrap_or(2),
                    attention_dim: self.attention_dim.unwrap_or(32),
                    dropout: self.dropout.unwrap_or(0.0),
                    leaky_slope: self.leaky_slope.unwrap_or(0.0),
                    hidden,
                }
            }
            Preset::Lenet5Mnist => {
                if let Some(m) = self.embedding_dim.filter(|&m| m != 800) {
                    return bad(format!("lenet5-mnist flattens to 800 features, not {m}"));
                }
                if self.hidden.is_some() || self.segment_len.is_some() {
                    return bad("lenet5-mnist has fixed layer widths".into());
                }
                Resolved {
                    preset: self.preset,
                    instance_shape: vec![1, 28, 28],
                    embedding_dim: 800,
                    attention_dim: self.attention_dim.unwrap_or(128),
                    dropout: self.dropout.unwrap_or(0.0),
                    leaky_slope: self.leaky_slope.unwrap_or(0.0),
                    hidden: vec![20, 50],
                }
            }
            Preset::TremorCnn => {
                let hidden = self.hidden.clone().unwrap_or_else(|| vec![32, 64, 128]);
                if hidden.len() != 3 || hidden.contains(&0) {
                    return bad(format!("tremor-cnn needs three positive filter counts, got {hidden:?}"));
                }
                let len = self.segment_len.unwrap_or(500);
                let mut out = Some(len);
                for _ in 0..3 {
                    out = out.and_then(|n| crate::autograd::window_output_len(n, 4, 2));
                }
                if out.is_none() {
                    return bad(format!("segment length {len} too short for three k=4 s=2 convolutions"));
                }
                Resolved {
                    preset: self.preset,
                    instance_shape: vec![3, len],
                    embedding_dim: self.embedding_dim.unwrap_or(64),
                    attention_dim: self.attention_dim.unwrap_or(128),
                    dropout: self.dropout.unwrap_or(0.2),
                    leaky_slope: self.leaky_slope.unwrap_or(0.2),
                    hidden,
                }
            }
        };
        if r.embedding_dim == 0 || r.attention_dim == 0 {
            return bad("embedding and attention sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&r.dropout) {
            return bad(format!("dropout {} outside [0, 1)", r.dropout));
        }
        if !r.leaky_slope.is_finite() {
            return bad("leaky slope must be finite".into());
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!(matches!(
            "resnet".parse::<Preset>(),
            Err(ModelError::UnknownPreset(_))
        ));
    }

    #[test]
    fn lenet_rejects_other_embedding_sizes() {
        let mut spec = ArchitectureSpec::preset(Preset::Lenet5Mnist);
        spec.embedding_dim = Some(500);
        assert!(matches!(spec.resolve(), Err(ModelError::InconsistentOverride(_))));
        spec.embedding_dim = Some(800);
        assert_eq!(spec.resolve().unwrap().embedding_dim, 800);
    }

    #[test]
    fn short_tremor_segments_are_rejected() {
        let mut spec = ArchitectureSpec::preset(Preset::TremorCnn);
        spec.segment_len = Some(20);
        assert!(spec.resolve().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let mut spec = ArchitectureSpec::preset(Preset::TremorCnn);
        spec.attention_dim = Some(64);
        let text = serde_json::to_string(&spec).unwrap();
        assert_eq!(text, r#"{"preset":"tremor-cnn","attention_dim":64}"#);
        let back: ArchitectureSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
    }
}
