//! Comparison tables across finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mivat::harness::{ExperimentReport, MeanStd, METRICS, REPORT_FORMAT};

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub source: PathBuf,
    pub method: String,
    pub protocol: String,
    pub labelled: usize,
    pub unlabelled: usize,
    pub trials: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

pub fn load_report(dir: &Path) -> anyhow::Result<ExperimentReport> {
    let path = dir.join("report.json");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: ExperimentReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if report.format != REPORT_FORMAT {
        bail!("{}: not a run report (format {:?})", path.display(), report.format);
    }
    Ok(report)
}

fn metric_set(report: &ExperimentReport) -> Vec<String> {
    report
        .summary
        .iter()
        .filter(|(_, s)| s.n > 0)
        .map(|(k, _)| k.clone())
        .collect()
}

/// Rows sorted by (labelled, unlabelled, method). Every report must carry
/// the same metric names.
pub fn compare(dirs: &[PathBuf]) -> anyhow::Result<Vec<ComparisonRow>> {
    if dirs.is_empty() {
        bail!("report needs at least one run directory");
    }
    let reports: Vec<(PathBuf, ExperimentReport)> = dirs
        .iter()
        .map(|d| load_report(d).map(|r| (d.clone(), r)))
        .collect::<anyhow::Result<_>>()?;
    let reference = metric_set(&reports[0].1);
    let mismatches: Vec<String> = reports
        .iter()
        .filter(|(_, r)| metric_set(r) != reference)
        .map(|(d, r)| format!("{} has [{}]", d.display(), metric_set(r).join(", ")))
        .collect();
    if !mismatches.is_empty() {
        bail!(
            "incompatible metric sets: {} has [{}]; {}",
            reports[0].0.display(),
            reference.join(", "),
            mismatches.join("; ")
        );
    }
    let mut rows: Vec<ComparisonRow> = reports
        .into_iter()
        .map(|(source, r)| ComparisonRow {
            source,
            trials: r.trials.len(),
            metrics: r.summary.into_iter().filter(|(k, _)| reference.contains(k)).collect(),
            method: r.method,
            protocol: r.protocol,
            labelled: r.labelled,
            unlabelled: r.unlabelled,
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.labelled, a.unlabelled, &a.method).cmp(&(b.labelled, b.unlabelled, &b.method))
    });
    Ok(rows)
}

fn ordered_metrics(rows: &[ComparisonRow]) -> Vec<String> {
    let present = |m: &str| rows.first().is_some_and(|r| r.metrics.contains_key(m));
    let mut names: Vec<String> = METRICS.iter().filter(|m| present(m)).map(|m| m.to_string()).collect();
    if let Some(r) = rows.first() {
        names.extend(r.metrics.keys().filter(|k| !METRICS.contains(&k.as_str())).cloned());
    }
    names
}

/// Aligned text table, one `mean ± std` cell per metric.
pub fn render_table(rows: &[ComparisonRow]) -> String {
    let metrics = ordered_metrics(rows);
    let mut grid: Vec<Vec<String>> = vec![["method", "L", "U", "protocol", "trials"]
        .iter()
        .map(|s| s.to_string())
        .chain(metrics.iter().cloned())
        .collect()];
    for r in rows {
        let mut line = vec![
            r.method.clone(),
            r.labelled.to_string(),
            r.unlabelled.to_string(),
            r.protocol.clone(),
            r.trials.to_string(),
        ];
        line.extend(metrics.iter().map(|m| {
            let s = r.metrics[m];
            format!("{:.4} ± {:.4}", s.mean, s.std)
        }));
        grid.push(line);
    }
    let widths: Vec<usize> = (0..grid[0].len())
        .map(|c| grid.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in grid.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| {
                let pad = w - cell.chars().count();
                // text columns left, numbers right
                if c == 0 || c == 3 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
    }
    out
}

/// Machine-readable version of the table with full-precision numbers.
pub fn render_csv(rows: &[ComparisonRow]) -> anyhow::Result<String> {
    let metrics = ordered_metrics(rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["method", "labelled", "unlabelled", "protocol", "trials"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in &metrics {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.method.clone(),
            r.labelled.to_string(),
            r.unlabelled.to_string(),
            r.protocol.clone(),
            r.trials.to_string(),
        ];
        for m in &metrics {
            rec.push(r.metrics[m].mean.to_string());
            rec.push(r.metrics[m].std.to_string());
        }
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
