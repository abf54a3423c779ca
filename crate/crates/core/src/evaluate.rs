//! Correlation measures and multi-dataset aggregation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FuseError, Result};
use crate::rankfuse::average_ranks;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(FuseError::Shape { expected: a.len(), actual: b.len() });
    }
    if a.len() < 2 {
        return Err(FuseError::Data("correlation needs at least two points".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(FuseError::Data("correlation input contains non-finite values".into()));
    }
    Ok(())
}

fn pearson_unchecked(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(FuseError::Data("correlation undefined for a constant input".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson linear correlation on raw values.
pub fn plcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson_unchecked(a, b)
}

/// Spearman rank correlation: Pearson correlation of average-tie ranks.
pub fn srcc(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson_unchecked(&average_ranks(a), &average_ranks(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub name: String,
    pub n: usize,
    pub srcc: f64,
    pub plcc: f64,
}

impl DatasetReport {
    pub fn compute(name: impl Into<String>, predicted: &[f64], mos: &[f64]) -> Result<Self> {
        Ok(DatasetReport {
            name: name.into(),
            n: predicted.len(),
            srcc: srcc(predicted, mos)?,
            plcc: plcc(predicted, mos)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub datasets: Vec<DatasetReport>,
    pub weighted_avg_srcc: f64,
    pub weighted_avg_plcc: f64,
}

/// Averages per-dataset results with weights proportional to image counts.
pub fn aggregate(reports: Vec<DatasetReport>) -> Result<EvalReport> {
    let total: usize = reports.iter().map(|r| r.n).sum();
    if reports.is_empty() || total == 0 {
        return Err(FuseError::Data("nothing to aggregate".into()));
    }
    let total = total as f64;
    let weighted = |f: fn(&DatasetReport) -> f64| {
        reports.iter().map(|r| r.n as f64 * f(r)).sum::<f64>() / total
    };
    Ok(EvalReport {
        weighted_avg_srcc: weighted(|r| r.srcc),
        weighted_avg_plcc: weighted(|r| r.plcc),
        datasets: reports,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.datasets.iter().map(|d| d.name.len()).max().unwrap_or(0).max(8);
        writeln!(f, "{:<width$}  {:>7}  {:>8}  {:>8}", "dataset", "n", "srcc", "plcc")?;
        for d in &self.datasets {
            writeln!(f, "{:<width$}  {:>7}  {:>8.4}  {:>8.4}", d.name, d.n, d.srcc, d.plcc)?;
        }
        let n: usize = self.datasets.iter().map(|d| d.n).sum();
        write!(
            f,
            "{:<width$}  {:>7}  {:>8.4}  {:>8.4}",
            "weighted", n, self.weighted_avg_srcc, self.weighted_avg_plcc
        )
    }
}
