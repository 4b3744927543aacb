//! Orthogonal (double/debiased) estimation of heterogeneous treatment effects.
//!
//! Pipeline: fold plan → cross-fitted nuisances `Ê[Y|X]`, `Ê[T|X]` →
//! residuals `Ỹ = Y − Ê[Y|X]`, `T̃ = T − Ê[T|X]` → least squares of `Ỹ` on
//! `T̃·[1, x_het]` without an intercept. The fitted coefficients define the
//! effect function `θ(x) = β₀ + βᵀx_het`; the average effect is the sample
//! mean of `θ(x_i)`. Inference uses the HC0 sandwich covariance.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::crossfit::{crossfit_predict, make_folds, NuisancePredictions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::LearnerSpec;
use crate::linalg::{quad_form, xt_vec, Cholesky};
use crate::runtime::Executor;
use crate::scalar::Scalar;
use crate::tune::{resolve_tuned, NuisanceSpec};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.96;

pub const DEFAULT_TRIM_ETA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmlSpec {
    pub y_spec: NuisanceSpec,
    pub t_spec: NuisanceSpec,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    /// Covariate columns entering `θ(x)`; `None` means all of them.
    #[serde(default)]
    pub het_features: Option<Vec<usize>>,
    /// Propensities are clipped to `[trim_eta, 1 − trim_eta]` before
    /// residualizing a discrete treatment.
    #[serde(default = "default_trim")]
    pub trim_eta: f64,
}

fn default_k() -> usize {
    5
}

fn default_trim() -> f64 {
    DEFAULT_TRIM_ETA
}

impl DmlSpec {
    pub fn new(y_spec: impl Into<NuisanceSpec>, t_spec: impl Into<NuisanceSpec>, k: usize, seed: u64) -> Self {
        Self { y_spec: y_spec.into(), t_spec: t_spec.into(), k, seed, het_features: None, trim_eta: DEFAULT_TRIM_ETA }
    }

    /// Forest nuisances with the learner defaults.
    pub fn forests(k: usize, seed: u64) -> Self {
        Self::new(LearnerSpec::forest_reg(), LearnerSpec::forest_clf(), k, seed)
    }

    pub fn with_het_features(mut self, features: Vec<usize>) -> Self {
        self.het_features = Some(features);
        self
    }

    pub fn with_trim(mut self, eta: f64) -> Self {
        self.trim_eta = eta;
        self
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidSpec(format!("k must be at least 2, got {}", self.k)));
        }
        if !(self.trim_eta >= 0.0 && self.trim_eta < 0.5) {
            return Err(Error::InvalidSpec(format!("trim_eta must lie in [0, 0.5), got {}", self.trim_eta)));
        }
        if let Some(h) = &self.het_features {
            if let Some(&j) = h.iter().find(|&&j| j >= d) {
                return Err(Error::InvalidSpec(format!("het feature {j} out of range for d={d}")));
            }
        }
        Ok(())
    }

    pub fn het_columns(&self, d: usize) -> Vec<usize> {
        self.het_features.clone().unwrap_or_else(|| (0..d).collect())
    }
}

/// Final-stage fit: `θ(x) = beta[0] + beta[1..]ᵀ x_het`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel<F> {
    pub beta: Array1<F>,
    /// HC0 covariance of `beta`.
    pub cov: Array2<F>,
    pub n_used: usize,
}

impl<F: Scalar> CateModel<F> {
    pub fn width(&self) -> usize {
        self.beta.len() - 1
    }

    /// `θ(x)` for one row of effect-modifier values.
    pub fn cate(&self, x_het: ArrayView1<F>) -> Result<F> {
        if x_het.len() != self.width() {
            return Err(Error::DimensionMismatch { expected: self.width(), got: x_het.len() });
        }
        Ok(self.beta[0] + self.beta.slice(ndarray::s![1..]).dot(&x_het))
    }

    /// Standard error of `θ(x)` at one row.
    pub fn cate_se(&self, x_het: ArrayView1<F>) -> Result<F> {
        if x_het.len() != self.width() {
            return Err(Error::DimensionMismatch { expected: self.width(), got: x_het.len() });
        }
        let mut a = Array1::<F>::ones(self.beta.len());
        a.slice_mut(ndarray::s![1..]).assign(&x_het);
        Ok(quad_form(self.cov.view(), a.view()).max(F::zero()).sqrt())
    }

    pub fn cate_batch(&self, x_het: ArrayView2<F>) -> Result<Array1<F>> {
        if x_het.ncols() != self.width() {
            return Err(Error::DimensionMismatch { expected: self.width(), got: x_het.ncols() });
        }
        Ok(x_het.dot(&self.beta.slice(ndarray::s![1..])) + self.beta[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics<F> {
    pub y_fold_loss: Vec<F>,
    pub t_fold_loss: Vec<F>,
    pub propensity_min: F,
    pub propensity_max: F,
    /// Units whose propensity was clipped.
    pub n_clipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate<F> {
    pub ate: F,
    pub ate_se: F,
    pub ci_low: F,
    pub ci_high: F,
    pub cate_model: CateModel<F>,
    pub het_features: Vec<usize>,
    /// Learners actually used, after any tuning.
    pub y_learner: LearnerSpec,
    pub t_learner: LearnerSpec,
    pub nuisance_diag: NuisanceDiagnostics<F>,
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub tune_seconds: f64,
    pub crossfit_seconds: f64,
    pub final_seconds: f64,
    pub total_seconds: f64,
}

/// `y − ŷ` and `t − t̂`, with `t̂` clipped to `[trim_eta, 1 − trim_eta]` for a
/// discrete treatment.
pub fn residualize<F: Scalar>(
    data: &Dataset<F>,
    nuis: &NuisancePredictions<F>,
    trim_eta: f64,
) -> Result<(Array1<F>, Array1<F>)> {
    let n = data.n();
    for len in [nuis.y_hat.len(), nuis.t_hat.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    let y_res = &data.y() - &nuis.y_hat;
    let t_res = if data.is_discrete() {
        let (lo, hi) = (F::of(trim_eta), F::one() - F::of(trim_eta));
        Array1::from_iter(data.t().iter().zip(nuis.t_hat.iter()).map(|(&t, &p)| t - p.max(lo).min(hi)))
    } else {
        &data.t() - &nuis.t_hat
    };
    Ok((y_res, t_res))
}

/// Least squares of `y_res` on `t_res·[1, x_het]` with no separate intercept,
/// plus the HC0 covariance `(DᵀD)⁻¹ Dᵀ diag(e²) D (DᵀD)⁻¹`.
pub fn fit_final<F: Scalar>(y_res: ArrayView1<F>, t_res: ArrayView1<F>, x_het: ArrayView2<F>) -> Result<CateModel<F>> {
    let n = y_res.len();
    if t_res.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: t_res.len() });
    }
    if x_het.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x_het.nrows() });
    }
    let p = x_het.ncols() + 1;
    let mut design = Array2::<F>::zeros((n, p));
    for i in 0..n {
        design[[i, 0]] = t_res[i];
        for j in 1..p {
            design[[i, j]] = t_res[i] * x_het[[i, j - 1]];
        }
    }
    let g = crate::linalg::gram(design.view());
    let chol = Cholesky::factor(g.view(), "final stage").map_err(|_| Error::NoIdentifyingVariation)?;
    let beta = chol.solve(xt_vec(design.view(), y_res).view());
    let resid = &y_res - &design.dot(&beta);

    let mut meat = Array2::<F>::zeros((p, p));
    for (row, &e) in design.rows().into_iter().zip(resid.iter()) {
        let e2 = e * e;
        for a in 0..p {
            let ra = e2 * row[a];
            for b in a..p {
                meat[[a, b]] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[[a, b]] = meat[[b, a]];
        }
    }
    let bread = chol.inverse();
    let mut cov = bread.dot(&meat).dot(&bread);
    for a in 0..p {
        for b in (a + 1)..p {
            let v = (cov[[a, b]] + cov[[b, a]]) * F::of(0.5);
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    Ok(CateModel { beta, cov, n_used: n })
}

/// Runs the full pipeline.
pub fn estimate<F: Scalar>(data: &Dataset<F>, spec: &DmlSpec, exec: &Executor) -> Result<EffectEstimate<F>> {
    estimate_timed(data, spec, exec).map(|(e, _)| e)
}

/// [`estimate`] plus per-stage wall-clock times.
pub fn estimate_timed<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
) -> Result<(EffectEstimate<F>, StageTimings)> {
    estimate_with_nuisances(data, spec, exec).map(|(e, t, _)| (e, t))
}

/// [`estimate_timed`] that also hands back the out-of-fold nuisances.
pub fn estimate_with_nuisances<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
) -> Result<(EffectEstimate<F>, StageTimings, NuisancePredictions<F>)> {
    let started = Instant::now();
    spec.validate(data.d())?;
    let t0 = data.t()[0];
    if data.t().iter().all(|&v| v == t0) {
        return Err(Error::DegenerateTreatment("treatment takes a single value".into()));
    }

    let y_learner = resolve_tuned(&spec.y_spec, data.x(), data.y(), exec)?;
    let t_learner = resolve_tuned(&spec.t_spec, data.x(), data.t(), exec)?;
    let tune_seconds = started.elapsed().as_secs_f64();

    let crossfit_started = Instant::now();
    let plan = make_folds(data.n(), spec.k, spec.seed)?;
    let nuis = crossfit_predict(data, &y_learner, &t_learner, &plan, exec)?;
    let crossfit_seconds = crossfit_started.elapsed().as_secs_f64();

    let final_started = Instant::now();
    let (y_res, t_res) = residualize(data, &nuis, spec.trim_eta)?;
    let het = spec.het_columns(data.d());
    let x_het = data.x().select(Axis(1), &het);
    let cate_model = fit_final(y_res.view(), t_res.view(), x_het.view())?;

    let n = F::of(data.n() as f64);
    let ate = cate_model.cate_batch(x_het.view())?.iter().copied().sum::<F>() / n;
    let mut mean_row = Array1::<F>::ones(het.len() + 1);
    mean_row.slice_mut(ndarray::s![1..]).assign(&(x_het.sum_axis(Axis(0)) / n));
    let ate_se = quad_form(cate_model.cov.view(), mean_row.view()).max(F::zero()).sqrt();
    let half = F::of(Z_95) * ate_se;

    let (lo, hi) = (F::of(spec.trim_eta), F::one() - F::of(spec.trim_eta));
    let n_clipped = if data.is_discrete() { nuis.t_hat.iter().filter(|&&p| p < lo || p > hi).count() } else { 0 };
    let nuisance_diag = NuisanceDiagnostics {
        y_fold_loss: nuis.y_fold_loss.clone(),
        t_fold_loss: nuis.t_fold_loss.clone(),
        propensity_min: nuis.t_hat.iter().copied().fold(F::infinity(), F::min),
        propensity_max: nuis.t_hat.iter().copied().fold(F::neg_infinity(), F::max),
        n_clipped,
    };
    let final_seconds = final_started.elapsed().as_secs_f64();

    let est = EffectEstimate {
        ate,
        ate_se,
        ci_low: ate - half,
        ci_high: ate + half,
        cate_model,
        het_features: het,
        y_learner,
        t_learner,
        nuisance_diag,
    };
    let timings =
        StageTimings { tune_seconds, crossfit_seconds, final_seconds, total_seconds: started.elapsed().as_secs_f64() };
    Ok((est, timings, nuis))
}

/// Most covariate strata the plug-in estimator accepts.
pub const MAX_STRATA: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginEstimate<F> {
    pub ate: F,
    /// Standard error from within-arm sample variances.
    pub se: F,
    pub n_strata: usize,
}

/// Stratified difference of means over discrete covariate cells, weighted by
/// cell frequency: `Σ_s (n_s/n)(ȳ₁ₛ − ȳ₀ₛ)`.
pub fn plugin_ate<F: Scalar>(data: &Dataset<F>) -> Result<F> {
    plugin_estimate(data).map(|p| p.ate)
}

pub fn plugin_estimate<F: Scalar>(data: &Dataset<F>) -> Result<PluginEstimate<F>> {
    if !data.is_discrete() {
        return Err(Error::InvalidSpec("plug-in estimator needs a binary treatment".into()));
    }
    #[derive(Default, Clone)]
    struct Arm<F> {
        count: usize,
        sum: F,
        sum_sq: F,
    }
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut cells: Vec<[Arm<F>; 2]> = Vec::new();
    for (row, (&t, &y)) in data.x().rows().into_iter().zip(data.t().iter().zip(data.y().iter())) {
        let key: Vec<u64> = row.iter().map(|v| v.bits()).collect();
        let next = index.len();
        let s = *index.entry(key).or_insert(next);
        if s == cells.len() {
            if cells.len() == MAX_STRATA {
                return Err(Error::TooManyStrata { limit: MAX_STRATA });
            }
            cells.push(Default::default());
        }
        let arm = &mut cells[s][(t == F::one()) as usize];
        arm.count += 1;
        arm.sum += y;
        arm.sum_sq += y * y;
    }
    let n = F::of(data.n() as f64);
    let (mut ate, mut var) = (F::zero(), F::zero());
    for (s, [control, treated]) in cells.iter().enumerate() {
        if treated.count == 0 {
            return Err(Error::Overlap { stratum: s, missing_arm: "treated" });
        }
        if control.count == 0 {
            return Err(Error::Overlap { stratum: s, missing_arm: "control" });
        }
        let w = F::of((treated.count + control.count) as f64) / n;
        let arm_stats = |a: &Arm<F>| {
            let c = F::of(a.count as f64);
            let mean = a.sum / c;
            let v = if a.count > 1 { (a.sum_sq - c * mean * mean) / (c - F::one()) } else { F::zero() };
            (mean, v.max(F::zero()) / c)
        };
        let (m1, v1) = arm_stats(treated);
        let (m0, v0) = arm_stats(control);
        ate += w * (m1 - m0);
        var += w * w * (v1 + v0);
    }
    Ok(PluginEstimate { ate, se: var.sqrt(), n_strata: cells.len() })
}
