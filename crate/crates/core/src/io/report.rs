//! Report and manifest serialization: JSON documents plus fixed-column CSV
//! tables with period decimal separators, independent of locale.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimate::FitResult;
use crate::select::EnumerationRow;
use crate::sim::MetricReport;

/// Reproducibility manifest written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
        }
    }
}

/// Serializes a value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn push_opt(out: &mut String, v: Option<f64>) {
    match v {
        Some(x) => {
            let _ = write!(out, ",{x:.6}");
        }
        None => out.push(','),
    }
}

/// Estimates table: one row per parameter with inference columns.
pub fn estimates_csv(fit: &FitResult) -> String {
    let mut out = String::from(
        "parameter,estimate,se,ci_lower,ci_upper,odds_ratio,or_ci_lower,or_ci_upper\n",
    );
    for p in &fit.parameters {
        let _ = write!(out, "{},{:.6}", p.name, p.estimate);
        push_opt(&mut out, p.se);
        push_opt(&mut out, p.ci_lower);
        push_opt(&mut out, p.ci_upper);
        match &p.odds_ratio {
            Some(or) => {
                let _ = write!(out, ",{:.6}", or.estimate);
                push_opt(&mut out, or.ci_lower);
                push_opt(&mut out, or.ci_upper);
            }
            None => out.push_str(",,,"),
        }
        out.push('\n');
    }
    out
}

/// Enumeration table shaped like a model-fit summary: one row per class
/// count with information criteria and class proportions.
pub fn enumeration_csv(rows: &[EnumerationRow]) -> String {
    let kmax = rows.iter().map(|r| r.k).max().unwrap_or(1);
    let mut out = String::from("k,converged,minus_two_ll,aic,bic,parameters,selected");
    for k in 1..=kmax {
        let _ = write!(out, ",share_class{k}");
    }
    out.push('\n');
    for row in rows {
        let _ = write!(out, "{},{}", row.k, row.converged);
        if row.converged {
            let _ = write!(
                out,
                ",{:.2},{:.2},{:.2}",
                row.minus_two_ll, row.aic, row.bic
            );
        } else {
            out.push_str(",,,");
        }
        let _ = write!(out, ",{}", row.parameter_count);
        let _ = write!(out, ",{}", if row.selected { 1 } else { 0 });
        for k in 0..kmax {
            match row.proportions.get(k) {
                Some(p) => {
                    let _ = write!(out, ",{:.4}", p);
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Per-parameter metric table of a simulation study.
pub fn metrics_csv(report: &MetricReport) -> String {
    let mut out = String::from(
        "parameter,truth,mean_estimate,bias,relative_bias,empirical_se,rmse,relative_rmse,coverage,mc_se_bias\n",
    );
    for m in &report.parameters {
        let _ = write!(
            out,
            "{},{:.6},{:.6},{:.6}",
            m.name, m.truth, m.mean_estimate, m.bias
        );
        push_opt(&mut out, m.relative_bias);
        let _ = write!(out, ",{:.6},{:.6}", m.empirical_se, m.rmse);
        push_opt(&mut out, m.relative_rmse);
        push_opt(&mut out, m.coverage);
        let _ = write!(out, ",{:.6}", m.mc_se_bias);
        out.push('\n');
    }
    out
}

/// Per-replication estimates of a study, one row per replication.
pub fn replications_csv(report: &MetricReport) -> String {
    let mut out = String::from("replication,attempt,dataset_seed,log_likelihood,accuracy");
    for name in &report.parameter_order {
        let _ = write!(out, ",{name}");
    }
    out.push('\n');
    for r in &report.records {
        let _ = write!(
            out,
            "{},{},{},{:.6},{:.6}",
            r.replication, r.attempt, r.dataset_seed, r.log_likelihood, r.accuracy
        );
        for e in &r.estimates {
            let _ = write!(out, ",{e:.6}");
        }
        out.push('\n');
    }
    out
}
