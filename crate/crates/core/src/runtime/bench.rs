//! Wall-clock scaling of the full pipeline across worker counts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{available_cores, Executor};
use crate::data::{generate_synthetic, DgpSpec};
use crate::dml::{estimate_timed, DmlSpec};
use crate::error::{Error, Result};

pub const BENCH_CSV_HEADER: &str = "n,d,workers,wall_seconds,speedup";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub d: usize,
    pub workers: usize,
    pub wall_seconds: f64,
    /// Sequential wall time divided by this row's wall time.
    pub speedup: f64,
    pub tune_seconds: f64,
    pub crossfit_seconds: f64,
    pub final_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub available_cores: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6},{:.4}", r.n, r.d, r.workers, r.wall_seconds, r.speedup);
        }
        out
    }

    /// Per-stage breakdown of each row.
    pub fn stages_csv(&self) -> String {
        let mut out = String::from("n,d,workers,tune_seconds,crossfit_seconds,final_seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.n, r.d, r.workers, r.tune_seconds, r.crossfit_seconds, r.final_seconds
            );
        }
        out
    }

    pub fn speedup(&self, n: usize, workers: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n && r.workers == workers).map(|r| r.speedup)
    }
}

/// Runs `spec` on generated data of each `(n, d)` size once per worker
/// count. A sequential run is always made as the speedup baseline, and every
/// run must reproduce its estimate byte for byte.
pub fn benchmark(sizes: &[(usize, usize)], worker_counts: &[usize], spec: &DmlSpec, seed: u64) -> Result<BenchReport> {
    if sizes.is_empty() || worker_counts.is_empty() {
        return Err(Error::Argument("benchmark needs at least one size and one worker count".into()));
    }
    let mut rows = Vec::new();
    for &(n, d) in sizes {
        let (data, _) = generate_synthetic::<f64>(&DgpSpec::paper_listing(n, d, seed))?;
        let (base_est, base_time) = estimate_timed(&data, spec, &Executor::sequential())?;
        let reference = serde_json::to_string(&base_est)?;
        for &w in worker_counts {
            let (est, time) =
                if w == 1 { (base_est.clone(), base_time) } else { estimate_timed(&data, spec, &Executor::new(w)?)? };
            if serde_json::to_string(&est)? != reference {
                return Err(Error::Nondeterministic { n, d });
            }
            rows.push(BenchRow {
                n,
                d,
                workers: w,
                wall_seconds: time.total_seconds,
                speedup: base_time.total_seconds / time.total_seconds,
                tune_seconds: time.tune_seconds,
                crossfit_seconds: time.crossfit_seconds,
                final_seconds: time.final_seconds,
            });
        }
    }
    Ok(BenchReport { rows, available_cores: available_cores() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerSpec;

    #[test]
    fn csv_header_and_rows() {
        let spec = DmlSpec::new(LearnerSpec::ridge(1e-3), LearnerSpec::logistic(1e-3), 2, 0);
        let report = benchmark(&[(300, 2)], &[1, 2], &spec, 1).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], BENCH_CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("300,2,1,"));
        assert_eq!(report.speedup(300, 1), Some(1.0));
    }

    #[test]
    fn empty_inputs_rejected() {
        let spec = DmlSpec::new(LearnerSpec::ridge(1e-3), LearnerSpec::logistic(1e-3), 2, 0);
        assert!(benchmark(&[], &[1], &spec, 0).is_err());
        assert!(benchmark(&[(10, 1)], &[], &spec, 0).is_err());
    }
}
