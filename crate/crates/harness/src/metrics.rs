//! CSV artifacts. Floats are rendered with six fractional digits.

use std::path::Path;

use iwsgd_core::data::SplitKind;
use iwsgd_core::trainer::EvalPoint;

use crate::error::{HarnessError, Result};

pub const METRICS_HEADER: [&str; 8] = [
    "step",
    "split",
    "nll",
    "error_rate",
    "lsgd_estimate",
    "mean_max_weight",
    "degenerate_count",
    "wall_ms",
];

pub const SUMMARY_HEADER: [&str; 8] = [
    "samples",
    "runs",
    "mean_test_error",
    "std_test_error",
    "mean_test_nll",
    "std_test_nll",
    "updates",
    "forward_passes",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub split: SplitKind,
    pub nll: f64,
    pub error_rate: f64,
    pub lsgd_estimate: f64,
    pub mean_max_weight: f64,
    pub degenerate_count: u64,
    pub wall_ms: f64,
}

impl MetricsRow {
    pub fn from_point(p: &EvalPoint, record_wall_time: bool) -> Self {
        MetricsRow {
            step: p.step,
            split: p.split,
            nll: p.nll,
            error_rate: p.error_rate,
            lsgd_estimate: p.lsgd_estimate,
            mean_max_weight: p.mean_max_weight,
            degenerate_count: p.degenerate_count,
            wall_ms: if record_wall_time { p.wall_ms } else { 0.0 },
        }
    }

    fn record(&self) -> [String; 8] {
        [
            self.step.to_string(),
            self.split.name().to_string(),
            fixed(self.nll),
            fixed(self.error_rate),
            fixed(self.lsgd_estimate),
            fixed(self.mean_max_weight),
            self.degenerate_count.to_string(),
            fixed(self.wall_ms),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryRow {
    pub samples: usize,
    pub runs: usize,
    pub mean_test_error: f64,
    pub std_test_error: f64,
    pub mean_test_nll: f64,
    pub std_test_nll: f64,
    /// Per run; every run of one S shares the budget.
    pub updates: u64,
    pub forward_passes: u64,
}

impl SummaryRow {
    fn record(&self) -> [String; 8] {
        [
            self.samples.to_string(),
            self.runs.to_string(),
            fixed(self.mean_test_error),
            fixed(self.std_test_error),
            fixed(self.mean_test_nll),
            fixed(self.std_test_nll),
            self.updates.to_string(),
            self.forward_passes.to_string(),
        ]
    }
}

pub fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_records<const N: usize>(
    path: &Path,
    header: [&str; N],
    rows: impl Iterator<Item = [String; N]>,
) -> Result<()> {
    let err = |e: csv::Error| HarnessError::io(path, e);
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_records(path, METRICS_HEADER, rows.iter().map(MetricsRow::record))
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_records(path, SUMMARY_HEADER, rows.iter().map(SummaryRow::record))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_fractional_digits() {
        assert_eq!(fixed(0.5), "0.500000");
        assert_eq!(fixed(-1.0 / 3.0), "-0.333333");
        assert_eq!(fixed(2.0f64.ln()), "0.693147");
    }

    #[test]
    fn sample_standard_deviation() {
        assert_eq!(mean_std(&[0.25]), (0.25, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&p, &[]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "step,split,nll,error_rate,lsgd_estimate,mean_max_weight,degenerate_count,wall_ms\n"
        );
    }
}
