use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::MeanStd;
use super::protocol::{summarize, TrialResult, METRICS};
use super::HarnessError;

pub const REPORT_FORMAT: &str = "mivat-report";
pub const REPORT_VERSION: u32 = 1;

/// How per-trial metrics were aggregated.
pub const AGGREGATION: &str =
    "metrics computed per trial (LOSO: on the pooled held-out scores of all splits), then mean and sample std across trials";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    /// Verbatim experiment configuration.
    pub config: serde_json::Value,
    pub method: String,
    pub protocol: String,
    pub labelled: usize,
    pub unlabelled: usize,
    pub aggregation: String,
    pub summary: BTreeMap<String, MeanStd>,
    pub trials: Vec<TrialResult>,
    pub wall_time_s: f64,
}

#[allow(clippy::too_many_arguments)]
impl ExperimentReport {
    pub fn new(
        tool_version: &str,
        config: serde_json::Value,
        method: &str,
        protocol: &str,
        labelled: usize,
        unlabelled: usize,
        trials: Vec<TrialResult>,
        wall_time_s: f64,
    ) -> Self {
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            tool_version: tool_version.into(),
            config,
            method: method.into(),
            protocol: protocol.into(),
            labelled,
            unlabelled,
            aggregation: AGGREGATION.into(),
            summary: summarize(&trials),
            trials,
            wall_time_s,
        }
    }

    /// `metric: mean ± std` for the headline metric.
    pub fn one_line(&self, metric: &str) -> String {
        match self.summary.get(metric) {
            Some(s) => format!(
                "{} {} L={} U={}: {metric} {:.4} ± {:.4} over {} trial(s)",
                self.protocol, self.method, self.labelled, self.unlabelled, s.mean, s.std, s.n
            ),
            None => format!("{} {}: no {metric}", self.protocol, self.method),
        }
    }

    /// One row per trial; no timing columns, so reruns are byte-identical.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method", "labelled", "unlabelled", "trial", "seed"];
        header.extend(METRICS);
        header.extend(["precision_undefined", "final_cross_entropy", "final_mi_lds"]);
        w.write_record(&header)?;
        for t in &self.trials {
            let last = |f: fn(&super::train::EpochTrace) -> Option<f64>| {
                let v: Vec<f64> = t
                    .traces
                    .iter()
                    .filter_map(|tr| tr.epochs.last().and_then(f))
                    .collect();
                if v.is_empty() {
                    String::new()
                } else {
                    (v.iter().sum::<f64>() / v.len() as f64).to_string()
                }
            };
            let mut row = vec![
                self.method.clone(),
                self.labelled.to_string(),
                self.unlabelled.to_string(),
                t.trial.to_string(),
                t.seed.to_string(),
            ];
            row.extend(METRICS.iter().map(|m| {
                t.metrics.get(*m).map(|v| v.to_string()).unwrap_or_default()
            }));
            row.push(t.precision_undefined.to_string());
            row.push(last(|e| Some(e.cross_entropy)));
            row.push(last(|e| e.mi_lds));
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Report(e.to_string()))
    }
}
