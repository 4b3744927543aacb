//! Refutation tests and overlap diagnostics.
//!
//! Each refuter perturbs the data in a way whose effect on a sound estimate
//! is known in advance, re-runs the estimator, and compares. Replications are
//! independent tasks on the executor, seeded per replication.

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crossfit::NuisancePredictions;
use crate::data::Dataset;
use crate::dml::{estimate, DmlSpec, EffectEstimate};
use crate::error::{Error, Result};
use crate::runtime::Executor;
use crate::scalar::Scalar;
use crate::seed;

const STREAM_PLACEBO: u64 = 0x91ACEB0;
const STREAM_COMMON_CAUSE: u64 = 0xCC;
const STREAM_SUBSET: u64 = 0x5B5E7;

/// Pass/fail rules shared by the refuters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefuteThresholds {
    /// Multiple of the standard error (placebo, common cause) or of the
    /// across-run standard deviation (subset) that an effect may move.
    pub se_multiplier: f64,
    /// Relative drift tolerated by the random-common-cause test.
    pub relative_drift: f64,
}

impl Default for RefuteThresholds {
    fn default() -> Self {
        Self { se_multiplier: 2.0, relative_drift: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefutationRun<F> {
    pub ate: F,
    pub ate_se: F,
    /// Rows and covariates of the perturbed dataset.
    pub n: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefutationReport<F> {
    pub test_name: String,
    pub original_ate: F,
    /// Mean effect across replications.
    pub refuted_ate: F,
    pub refuted_se: F,
    pub n_runs: usize,
    pub passed: bool,
    pub detail: Vec<RefutationRun<F>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefuterKind {
    Placebo,
    RandomCommonCause,
    Subset,
}

fn mean<F: Scalar>(v: impl Iterator<Item = F>) -> F {
    let (mut s, mut c) = (F::zero(), 0usize);
    for x in v {
        s += x;
        c += 1;
    }
    s / F::of(c as f64)
}

fn replicate<F: Scalar>(
    n_runs: usize,
    exec: &Executor,
    spec: &DmlSpec,
    perturb: impl Fn(usize) -> Result<Dataset<F>> + Sync,
) -> Result<Vec<RefutationRun<F>>> {
    if n_runs == 0 {
        return Err(Error::Argument("n_runs must be at least 1".into()));
    }
    exec.run_indexed(n_runs, |r| {
        let data = perturb(r)?;
        let est = estimate(&data, spec, &Executor::sequential())?;
        Ok(RefutationRun { ate: est.ate, ate_se: est.ate_se, n: data.n(), d: data.d() })
    })
}

/// Replaces the treatment with a seeded permutation of itself. The true
/// effect of the placebo is zero; passes when the mean placebo effect lies
/// within `se_multiplier` mean standard errors of zero.
pub fn placebo_treatment<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
    n_runs: usize,
    seed: u64,
) -> Result<RefutationReport<F>> {
    let original = estimate(data, spec, exec)?;
    placebo_with_original(data, spec, exec, n_runs, seed, &original, &RefuteThresholds::default())
}

pub fn placebo_with_original<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
    n_runs: usize,
    seed: u64,
    original: &EffectEstimate<F>,
    thresholds: &RefuteThresholds,
) -> Result<RefutationReport<F>> {
    let runs = replicate(n_runs, exec, spec, |r| {
        let mut t = data.t().to_vec();
        t.shuffle(&mut seed::rng(seed, &[STREAM_PLACEBO, r as u64]));
        data.with_treatment(Array1::from(t))
    })?;
    let refuted_ate = mean(runs.iter().map(|r| r.ate));
    let refuted_se = mean(runs.iter().map(|r| r.ate_se));
    let passed = refuted_ate.abs() <= F::of(thresholds.se_multiplier) * refuted_se;
    Ok(RefutationReport {
        test_name: "placebo_treatment".into(),
        original_ate: original.ate,
        refuted_ate,
        refuted_se,
        n_runs,
        passed,
        detail: runs,
    })
}

/// Appends an independent standard-normal covariate. A consistent estimator
/// should not move: passes when the drift is within
/// `max(relative_drift·|original|, se_multiplier·se)`.
pub fn random_common_cause<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
    n_runs: usize,
    seed: u64,
) -> Result<RefutationReport<F>> {
    let original = estimate(data, spec, exec)?;
    common_cause_with_original(data, spec, exec, n_runs, seed, &original, &RefuteThresholds::default())
}

pub fn common_cause_with_original<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
    n_runs: usize,
    seed: u64,
    original: &EffectEstimate<F>,
    thresholds: &RefuteThresholds,
) -> Result<RefutationReport<F>> {
    let runs = replicate(n_runs, exec, spec, |r| {
        let mut rng = seed::rng(seed, &[STREAM_COMMON_CAUSE, r as u64]);
        let col = Array1::from_iter((0..data.n()).map(|_| F::of(rng.sample(StandardNormal))));
        data.with_extra_covariate(col.view(), &format!("random_common_cause_{r}"))
    })?;
    let refuted_ate = mean(runs.iter().map(|r| r.ate));
    let refuted_se = mean(runs.iter().map(|r| r.ate_se));
    let tolerance =
        (F::of(thresholds.relative_drift) * original.ate.abs()).max(F::of(thresholds.se_multiplier) * refuted_se);
    let passed = (refuted_ate - original.ate).abs() <= tolerance;
    Ok(RefutationReport {
        test_name: "random_common_cause".into(),
        original_ate: original.ate,
        refuted_ate,
        refuted_se,
        n_runs,
        passed,
        detail: runs,
    })
}

/// Re-estimates on seeded subsamples of `⌈frac·n⌉` rows drawn without
/// replacement (kept in original row order). Passes when the original effect
/// lies within `se_multiplier` standard deviations of the subsample mean.
pub fn subset_refuter<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
    frac: f64,
    n_runs: usize,
    seed: u64,
) -> Result<RefutationReport<F>> {
    check_frac(frac)?;
    let original = estimate(data, spec, exec)?;
    subset_with_original(data, spec, exec, frac, n_runs, seed, &original, &RefuteThresholds::default())
}

fn check_frac(frac: f64) -> Result<()> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::Argument(format!("subset fraction must lie in (0, 1], got {frac}")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn subset_with_original<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
    frac: f64,
    n_runs: usize,
    seed: u64,
    original: &EffectEstimate<F>,
    thresholds: &RefuteThresholds,
) -> Result<RefutationReport<F>> {
    check_frac(frac)?;
    let n = data.n();
    let m = ((frac * n as f64).ceil() as usize).clamp(1, n);
    let runs = replicate(n_runs, exec, spec, |r| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(seed, &[STREAM_SUBSET, r as u64]));
        idx.truncate(m);
        idx.sort_unstable();
        data.select_rows(&idx)
    })?;
    let refuted_ate = mean(runs.iter().map(|r| r.ate));
    let refuted_se = if runs.len() > 1 {
        let ss: F = runs.iter().map(|r| (r.ate - refuted_ate) * (r.ate - refuted_ate)).sum();
        (ss / F::of((runs.len() - 1) as f64)).sqrt()
    } else {
        F::zero()
    };
    let passed = (original.ate - refuted_ate).abs() <= F::of(thresholds.se_multiplier) * refuted_se;
    Ok(RefutationReport {
        test_name: "subset".into(),
        original_ate: original.ate,
        refuted_ate,
        refuted_se,
        n_runs,
        passed,
        detail: runs,
    })
}

/// Settings for running several refuters against one original estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefuteSettings {
    pub tests: Vec<RefuterKind>,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default = "default_frac")]
    pub subset_frac: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub thresholds: RefuteThresholds,
    /// Boundary used when reporting propensity overlap alongside the tests.
    #[serde(default = "default_overlap_eta")]
    pub overlap_eta: f64,
}

fn default_overlap_eta() -> f64 {
    0.05
}

fn default_runs() -> usize {
    3
}

fn default_frac() -> f64 {
    0.5
}

/// Estimates once, then runs each configured refuter in turn.
pub fn run_refuters<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
    settings: &RefuteSettings,
) -> Result<(EffectEstimate<F>, Vec<RefutationReport<F>>)> {
    if settings.tests.is_empty() {
        return Err(Error::InvalidSpec("no refuters configured".into()));
    }
    if settings.tests.contains(&RefuterKind::Subset) {
        check_frac(settings.subset_frac)?;
    }
    let original = estimate(data, spec, exec)?;
    let reports = run_refuters_against(data, spec, exec, settings, &original)?;
    Ok((original, reports))
}

/// [`run_refuters`] against an estimate the caller already has.
pub fn run_refuters_against<F: Scalar>(
    data: &Dataset<F>,
    spec: &DmlSpec,
    exec: &Executor,
    settings: &RefuteSettings,
    original: &EffectEstimate<F>,
) -> Result<Vec<RefutationReport<F>>> {
    if settings.tests.is_empty() {
        return Err(Error::InvalidSpec("no refuters configured".into()));
    }
    if settings.tests.contains(&RefuterKind::Subset) {
        check_frac(settings.subset_frac)?;
    }
    let th = &settings.thresholds;
    settings
        .tests
        .iter()
        .map(|kind| match kind {
            RefuterKind::Placebo => {
                placebo_with_original(data, spec, exec, settings.n_runs, settings.seed, original, th)
            }
            RefuterKind::RandomCommonCause => {
                common_cause_with_original(data, spec, exec, settings.n_runs, settings.seed, original, th)
            }
            RefuterKind::Subset => subset_with_original(
                data,
                spec,
                exec,
                settings.subset_frac,
                settings.n_runs,
                settings.seed,
                original,
                th,
            ),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport<F> {
    pub p_min: F,
    pub p_max: F,
    pub n_flagged: usize,
    /// Share of units with propensity outside `[eta, 1 − eta]`, or exactly 0 or 1.
    pub frac_flagged: F,
    pub eta: F,
}

/// Summarizes out-of-fold propensities and flags units near the boundary.
pub fn overlap_diagnostic<F: Scalar>(nuis: &NuisancePredictions<F>, eta: F) -> Result<OverlapReport<F>> {
    if !(eta >= F::zero() && eta <= F::of(0.5)) {
        return Err(Error::Argument(format!("eta must lie in [0, 0.5], got {eta}")));
    }
    let p = &nuis.t_hat;
    if p.is_empty() {
        return Err(Error::Argument("no propensities to summarize".into()));
    }
    let hi = F::one() - eta;
    let n_flagged = p.iter().filter(|&&v| v < eta || v > hi || v <= F::zero() || v >= F::one()).count();
    Ok(OverlapReport {
        p_min: p.iter().copied().fold(F::infinity(), F::min),
        p_max: p.iter().copied().fold(F::neg_infinity(), F::max),
        n_flagged,
        frac_flagged: F::of(n_flagged as f64) / F::of(p.len() as f64),
        eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crossfit::FoldPlan;
    use crate::data::{generate_synthetic, DgpSpec, OutcomeKind};
    use crate::learners::LearnerSpec;
    use ndarray::array;
    use proptest::prelude::*;

    fn linear_spec() -> DmlSpec {
        DmlSpec::new(LearnerSpec::ridge(1e-3), LearnerSpec::logistic(1e-3), 3, 4)
    }

    fn props(p: Array1<f64>) -> NuisancePredictions<f64> {
        let n = p.len();
        NuisancePredictions {
            y_hat: Array1::zeros(n),
            t_hat: p,
            fold_plan: FoldPlan { k: 1, assignment: vec![0; n], seed: 0 },
            y_fold_loss: vec![],
            t_fold_loss: vec![],
        }
    }

    #[test]
    fn placebo_on_null_data_passes_and_reproduces() {
        let spec = DgpSpec::paper_listing(2000, 3, 1).with_kind(OutcomeKind::ZeroEffect);
        let (data, _) = generate_synthetic::<f64>(&spec).unwrap();
        let exec = Executor::new(2).unwrap();
        let a = placebo_treatment(&data, &linear_spec(), &exec, 3, 9).unwrap();
        assert!(a.passed, "{a:?}");
        let b = placebo_treatment(&data, &linear_spec(), &Executor::sequential(), 3, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_runs_rejected() {
        let (data, _) = generate_synthetic::<f64>(&DgpSpec::paper_listing(200, 2, 1)).unwrap();
        let err = placebo_treatment(&data, &linear_spec(), &Executor::sequential(), 0, 0).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn common_cause_adds_one_column_per_run() {
        let (data, _) = generate_synthetic::<f64>(&DgpSpec::paper_listing(1000, 3, 2)).unwrap();
        let r = random_common_cause(&data, &linear_spec(), &Executor::sequential(), 2, 5).unwrap();
        assert!(r.detail.iter().all(|run| run.d == 4));
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn full_subset_reproduces_original() {
        let (data, _) = generate_synthetic::<f64>(&DgpSpec::paper_listing(500, 2, 3)).unwrap();
        let r = subset_refuter(&data, &linear_spec(), &Executor::sequential(), 1.0, 2, 1).unwrap();
        assert_eq!(r.refuted_ate, r.original_ate);
        assert!(r.passed);
        assert!(matches!(
            subset_refuter(&data, &linear_spec(), &Executor::sequential(), 0.0, 2, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn run_refuters_requires_tests() {
        let (data, _) = generate_synthetic::<f64>(&DgpSpec::paper_listing(100, 2, 3)).unwrap();
        let settings = RefuteSettings {
            tests: vec![],
            n_runs: 1,
            subset_frac: 0.5,
            seed: 0,
            thresholds: Default::default(),
            overlap_eta: 0.05,
        };
        assert!(run_refuters(&data, &linear_spec(), &Executor::sequential(), &settings).is_err());
    }

    #[test]
    fn overlap_boundaries() {
        let nuis = props(array![0.5, 0.45, 0.0, 1.0, 0.03, 0.99]);
        let r0 = overlap_diagnostic(&nuis, 0.0).unwrap();
        assert_eq!(r0.n_flagged, 2);
        let r = overlap_diagnostic(&nuis, 0.05).unwrap();
        assert_eq!(r.n_flagged, 4);
        assert_eq!((r.p_min, r.p_max), (0.0, 1.0));
        assert!(overlap_diagnostic(&nuis, 0.6).is_err());
    }

    proptest! {
        #[test]
        fn flagged_fraction_monotone_in_eta(ps in proptest::collection::vec(0.0f64..=1.0, 1..60), a in 0.0f64..0.5, b in 0.0f64..0.5) {
            let nuis = props(Array1::from(ps));
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r_lo = overlap_diagnostic(&nuis, lo).unwrap();
            let r_hi = overlap_diagnostic(&nuis, hi).unwrap();
            prop_assert!(r_lo.frac_flagged <= r_hi.frac_flagged);
            prop_assert!((0.0..=1.0).contains(&r_hi.frac_flagged));
        }
    }
}
