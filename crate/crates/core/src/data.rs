//! Observational datasets, the synthetic generator with known potential
//! outcomes, and CSV ingestion.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

/// Prefix for ground-truth columns appended to generated CSV files.
pub const GROUND_TRUTH_PREFIX: &str = "__gt_";

/// Covariates `x` (n×d), treatment `t` and outcome `y` for n units.
///
/// Construction validates shapes and finiteness; a discrete-treatment dataset
/// additionally holds only 0/1 treatments with both arms present. The value is
/// immutable afterwards, so it can be shared freely between worker threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<F> {
    x: Array2<F>,
    t: Array1<F>,
    y: Array1<F>,
    discrete_treatment: bool,
    feature_names: Option<Vec<String>>,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(
        x: Array2<F>,
        t: Array1<F>,
        y: Array1<F>,
        discrete_treatment: bool,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if d == 0 {
            return Err(Error::InvalidData("dataset has no covariates".into()));
        }
        if t.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: t.len() });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        if let Some(names) = &feature_names {
            if names.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: names.len() });
            }
        }
        if let Some(i) = x.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidData(format!("non-finite covariate in row {i}")));
        }
        if let Some(i) = t.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite treatment in row {i}")));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome in row {i}")));
        }
        if discrete_treatment {
            check_binary_treatment(t.view())?;
        }
        Ok(Self { x, t, y, discrete_treatment, feature_names })
    }

    pub fn x(&self) -> ArrayView2<'_, F> {
        self.x.view()
    }

    pub fn t(&self) -> ArrayView1<'_, F> {
        self.t.view()
    }

    pub fn y(&self) -> ArrayView1<'_, F> {
        self.y.view()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_discrete(&self) -> bool {
        self.discrete_treatment
    }

    /// Covariate names, defaulting to `x0, x1, ...`.
    pub fn feature_names(&self) -> Vec<String> {
        self.feature_names.clone().unwrap_or_else(|| (0..self.d()).map(|j| format!("x{j}")).collect())
    }

    /// Same covariates and outcome with a different treatment vector.
    pub fn with_treatment(&self, t: Array1<F>) -> Result<Self> {
        Self::new(self.x.clone(), t, self.y.clone(), self.discrete_treatment, self.feature_names.clone())
    }

    pub fn with_outcome(&self, y: Array1<F>) -> Result<Self> {
        Self::new(self.x.clone(), self.t.clone(), y, self.discrete_treatment, self.feature_names.clone())
    }

    /// Appends one covariate column.
    pub fn with_extra_covariate(&self, column: ArrayView1<F>, name: &str) -> Result<Self> {
        if column.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: column.len() });
        }
        let mut x = Array2::<F>::zeros((self.n(), self.d() + 1));
        x.slice_mut(ndarray::s![.., ..self.d()]).assign(&self.x);
        x.column_mut(self.d()).assign(&column);
        let names = self.feature_names.clone().map(|mut v| {
            v.push(name.to_string());
            v
        });
        Self::new(x, self.t.clone(), self.y.clone(), self.discrete_treatment, names)
    }

    /// Rows `idx`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Argument(format!("row index {bad} out of range for n={}", self.n())));
        }
        Self::new(
            self.x.select(Axis(0), idx),
            self.t.select(Axis(0), idx),
            self.y.select(Axis(0), idx),
            self.discrete_treatment,
            self.feature_names.clone(),
        )
    }

    /// Writes a header row and one line per unit: covariates, `t`, `y`, then
    /// `__gt_y0, __gt_y1, __gt_tau` when ground truth is supplied.
    pub fn write_csv<W: Write>(&self, out: W, truth: Option<&GroundTruth<F>>) -> Result<()> {
        if let Some(gt) = truth {
            if gt.tau.len() != self.n() {
                return Err(Error::DimensionMismatch { expected: self.n(), got: gt.tau.len() });
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = self.feature_names();
        header.push("t".into());
        header.push("y".into());
        if truth.is_some() {
            for c in ["y0", "y1", "tau"] {
                header.push(format!("{GROUND_TRUTH_PREFIX}{c}"));
            }
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            record.extend(self.x.row(i).iter().map(|v| v.to_string()));
            record.push(self.t[i].to_string());
            record.push(self.y[i].to_string());
            if let Some(gt) = truth {
                record.push(gt.y0[i].to_string());
                record.push(gt.y1[i].to_string());
                record.push(gt.tau[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<csv writer>".into(), source: e })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, truth: Option<&GroundTruth<F>>) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
        self.write_csv(BufWriter::new(file), truth)
    }
}

fn check_binary_treatment<F: Scalar>(t: ArrayView1<F>) -> Result<()> {
    let (mut zeros, mut ones) = (0usize, 0usize);
    for (i, &v) in t.iter().enumerate() {
        if v == F::zero() {
            zeros += 1;
        } else if v == F::one() {
            ones += 1;
        } else {
            return Err(Error::InvalidData(format!("discrete treatment must be 0 or 1, found {v} in row {i}")));
        }
    }
    if zeros == 0 || ones == 0 {
        return Err(Error::DegenerateTreatment(format!(
            "treatment takes a single value ({} of {} units treated)",
            ones,
            t.len()
        )));
    }
    Ok(())
}

/// Potential outcomes of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<F> {
    pub y0: Array1<F>,
    pub y1: Array1<F>,
    /// `y1 - y0`, the unit-level effect.
    pub tau: Array1<F>,
    /// Mean of `tau` over the sample.
    pub true_ate: F,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// `y = (1 + 0.5·x0)·t + x0 + ε`.
    #[default]
    PaperListing,
    /// Baseline `Σ_j x_j/(j+1) + ε`, effect `1 + 0.5·x0 − 0.25·x1`.
    Linear,
    /// Baseline `x0 + ε`, effect identically zero.
    ZeroEffect,
}

/// Parameters of the synthetic data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub d: usize,
    #[serde(default)]
    pub outcome_kind: OutcomeKind,
    /// Coefficient of `x0` in the treatment logit.
    #[serde(default = "one")]
    pub confounding_strength: f64,
    /// Weight of a hidden standard-normal `u` in both the treatment logit
    /// and the outcome. Zero means no unobserved confounding.
    #[serde(default)]
    pub unobserved_confounding: f64,
    #[serde(default = "one")]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl DgpSpec {
    pub fn paper_listing(n: usize, d: usize, seed: u64) -> Self {
        Self {
            n,
            d,
            outcome_kind: OutcomeKind::PaperListing,
            confounding_strength: 1.0,
            unobserved_confounding: 0.0,
            noise_sd: 1.0,
            seed,
        }
    }

    pub fn with_kind(mut self, kind: OutcomeKind) -> Self {
        self.outcome_kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!("n must be at least 2, got {}", self.n)));
        }
        if self.d < 1 {
            return Err(Error::InvalidSpec("d must be at least 1".into()));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::InvalidSpec(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd)));
        }
        if !(self.unobserved_confounding >= 0.0) || !self.unobserved_confounding.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "unobserved_confounding must be finite and >= 0, got {}",
                self.unobserved_confounding
            )));
        }
        if !self.confounding_strength.is_finite() {
            return Err(Error::InvalidSpec("confounding_strength must be finite".into()));
        }
        Ok(())
    }

    /// True treatment effect for a covariate row.
    pub fn effect(&self, x: &[f64]) -> f64 {
        match self.outcome_kind {
            OutcomeKind::PaperListing => 1.0 + 0.5 * x[0],
            OutcomeKind::Linear => 1.0 + 0.5 * x[0] - 0.25 * x.get(1).copied().unwrap_or(0.0),
            OutcomeKind::ZeroEffect => 0.0,
        }
    }

    fn baseline(&self, x: &[f64]) -> f64 {
        match self.outcome_kind {
            OutcomeKind::PaperListing | OutcomeKind::ZeroEffect => x[0],
            OutcomeKind::Linear => x.iter().enumerate().map(|(j, v)| v / (j as f64 + 1.0)).sum(),
        }
    }

    /// Population propensity `P(T=1 | x, u)`.
    pub fn propensity(&self, x0: f64, u: f64) -> f64 {
        Scalar::expit(self.confounding_strength * x0 + self.unobserved_confounding * u)
    }
}

/// Draws a dataset and its potential outcomes.
///
/// Row `i` uses its own random stream keyed by `(seed, i)`, so a unit's data
/// never depends on any other unit's draws.
pub fn generate_synthetic<F: Scalar>(spec: &DgpSpec) -> Result<(Dataset<F>, GroundTruth<F>)> {
    generate_with_row_keys(spec, |i| i as u64)
}

/// Like [`generate_synthetic`] with an explicit key for each row's stream.
pub fn generate_with_row_keys<F: Scalar>(
    spec: &DgpSpec,
    row_key: impl Fn(usize) -> u64,
) -> Result<(Dataset<F>, GroundTruth<F>)> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let mut x = Array2::<F>::zeros((n, d));
    let mut t = Array1::<F>::zeros(n);
    let mut y = Array1::<F>::zeros(n);
    let mut y0 = Array1::<F>::zeros(n);
    let mut y1 = Array1::<F>::zeros(n);
    let mut tau = Array1::<F>::zeros(n);
    let mut row = vec![0.0f64; d];
    for i in 0..n {
        let mut rng = seed::rng(spec.seed, &[row_key(i)]);
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let u: f64 = rng.sample(StandardNormal);
        let draw: f64 = rng.random();
        let eps: f64 = rng.sample(StandardNormal);

        // Draws are converted to F first so the stored covariates are the
        // exact values the outcome is computed from.
        let xf: Vec<F> = row.iter().map(|&v| F::of(v)).collect();
        let x_used: Vec<f64> = xf.iter().map(|v| v.as_f64()).collect();
        let treated = draw < spec.propensity(x_used[0], u);
        let base = F::of(spec.baseline(&x_used) + spec.unobserved_confounding * u + spec.noise_sd * eps);
        let treated_outcome = base + F::of(spec.effect(&x_used));

        x.row_mut(i).assign(&ArrayView1::from(&xf[..]));
        y0[i] = base;
        y1[i] = treated_outcome;
        tau[i] = treated_outcome - base;
        t[i] = if treated { F::one() } else { F::zero() };
        y[i] = if treated { treated_outcome } else { base };
    }
    let true_ate = tau.iter().copied().sum::<F>() / F::of(n as f64);
    let data = Dataset::new(x, t, y, true, None)?;
    Ok((data, GroundTruth { y0, y1, tau, true_ate }))
}

/// Reads a dataset from a headed, comma-separated UTF-8 file.
///
/// When `covariate_cols` is empty every column except the treatment, the
/// outcome and ground-truth (`__gt_`) columns is used.
pub fn load_csv<F: Scalar>(
    path: &Path,
    treatment_col: &str,
    outcome_col: &str,
    covariate_cols: &[String],
    discrete_treatment: bool,
) -> Result<Dataset<F>> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.to_owned(), source: e })?;
    read_csv(file, treatment_col, outcome_col, covariate_cols, discrete_treatment)
}

pub fn read_csv<F: Scalar, R: std::io::Read>(
    input: R,
    treatment_col: &str,
    outcome_col: &str,
    covariate_cols: &[String],
    discrete_treatment: bool,
) -> Result<Dataset<F>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let t_idx = find(treatment_col)?;
    let y_idx = find(outcome_col)?;
    let x_names: Vec<String> = if covariate_cols.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|(j, h)| *j != t_idx && *j != y_idx && !h.starts_with(GROUND_TRUTH_PREFIX))
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        covariate_cols.to_vec()
    };
    let x_idx: Vec<usize> = x_names.iter().map(|c| find(c)).collect::<Result<_>>()?;

    let parse = |rec: &csv::StringRecord, row: usize, col: usize| -> Result<F> {
        let raw = rec.get(col).unwrap_or("").trim();
        raw.parse::<F>().map_err(|_| Error::Parse { row, column: header[col].clone(), value: raw.to_string() })
    };
    let mut xs: Vec<F> = Vec::new();
    let mut ts: Vec<F> = Vec::new();
    let mut ys: Vec<F> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        for &j in &x_idx {
            xs.push(parse(&rec, row, j)?);
        }
        ts.push(parse(&rec, row, t_idx)?);
        ys.push(parse(&rec, row, y_idx)?);
    }
    let n = ts.len();
    let x = Array2::from_shape_vec((n, x_idx.len()), xs).map_err(|e| Error::InvalidData(e.to_string()))?;
    Dataset::new(x, Array1::from(ts), Array1::from(ys), discrete_treatment, Some(x_names))
}
