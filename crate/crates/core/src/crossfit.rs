//! K-fold planning and out-of-fold nuisance prediction.
//!
//! For each fold the outcome model and the treatment model are fit on the
//! other folds and predict the held-out fold. Those 2k fits are independent
//! tasks; each is seeded from `(plan seed, fold, role)` so any executor,
//! including a sequential one, produces the same predictions.

use ndarray::{Array1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{fit, LearnerSpec};
use crate::runtime::Executor;
use crate::scalar::Scalar;
use crate::seed::{self, ROLE_T, ROLE_Y};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold id of each row.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Rows outside and inside `fold`, each in ascending order.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, &f) in self.assignment.iter().enumerate() {
            if f == fold {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles `0..n` with a seeded stream and deals the result round-robin
/// into `k` folds.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::FoldRange { k, n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed, &[0xF01D]));
    let mut assignment = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        assignment[row] = pos % k;
    }
    Ok(FoldPlan { k, assignment, seed })
}

/// Out-of-fold estimates of `E[Y|X]` and `E[T|X]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisancePredictions<F> {
    pub y_hat: Array1<F>,
    /// Propensity scores when the treatment is discrete.
    pub t_hat: Array1<F>,
    pub fold_plan: FoldPlan,
    /// Held-out mean squared error of the outcome model, per fold.
    pub y_fold_loss: Vec<F>,
    /// Held-out mean squared error (Brier score if discrete) of the
    /// treatment model, per fold.
    pub t_fold_loss: Vec<F>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Outcome,
    Treatment,
}

impl Role {
    pub fn stream(self) -> u64 {
        match self {
            Role::Outcome => ROLE_Y,
            Role::Treatment => ROLE_T,
        }
    }
}

/// Seed used to fit `role`'s model for `fold`.
pub fn fold_seed(plan: &FoldPlan, fold: usize, role: Role) -> u64 {
    seed::derive(plan.seed, &[fold as u64, role.stream()])
}

/// Fits `spec` on the complement of `fold` and predicts the fold's rows
/// (ascending row order).
pub fn fit_predict_fold<F: Scalar>(
    data: &Dataset<F>,
    spec: &LearnerSpec,
    plan: &FoldPlan,
    fold: usize,
    role: Role,
) -> Result<Array1<F>> {
    let (train, test) = plan.split(fold);
    let x = data.x();
    let target = match role {
        Role::Outcome => data.y(),
        Role::Treatment => data.t(),
    };
    let model = fit(
        spec,
        x.select(Axis(0), &train).view(),
        target.select(Axis(0), &train).view(),
        fold_seed(plan, fold, role),
    )?;
    model.predict(x.select(Axis(0), &test).view())
}

pub fn crossfit_predict<F: Scalar>(
    data: &Dataset<F>,
    y_spec: &LearnerSpec,
    t_spec: &LearnerSpec,
    plan: &FoldPlan,
    exec: &Executor,
) -> Result<NuisancePredictions<F>> {
    if plan.n() != data.n() {
        return Err(Error::DimensionMismatch { expected: data.n(), got: plan.n() });
    }
    if t_spec.is_classifier() != data.is_discrete() {
        return Err(Error::InvalidSpec(format!(
            "treatment learner {:?} does not match a {} treatment",
            t_spec.kind,
            if data.is_discrete() { "discrete" } else { "continuous" }
        )));
    }
    if data.is_discrete() {
        for fold in 0..plan.k {
            let mut seen = [false; 2];
            for (i, &f) in plan.assignment.iter().enumerate() {
                if f != fold {
                    seen[(data.t()[i] == F::one()) as usize] = true;
                }
            }
            if !(seen[0] && seen[1]) {
                return Err(Error::FoldWithoutTreatmentVariation { fold });
            }
        }
    }

    let outputs = exec.run_indexed(2 * plan.k, |task| {
        let fold = task / 2;
        let (role, spec) = if task % 2 == 0 { (Role::Outcome, y_spec) } else { (Role::Treatment, t_spec) };
        fit_predict_fold(data, spec, plan, fold, role)
    })?;

    let n = data.n();
    let mut y_hat = Array1::<F>::zeros(n);
    let mut t_hat = Array1::<F>::zeros(n);
    let mut y_fold_loss = Vec::with_capacity(plan.k);
    let mut t_fold_loss = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let (_, test) = plan.split(fold);
        let count = F::of(test.len() as f64);
        let (py, pt) = (&outputs[2 * fold], &outputs[2 * fold + 1]);
        let (mut ly, mut lt) = (F::zero(), F::zero());
        for (j, &i) in test.iter().enumerate() {
            y_hat[i] = py[j];
            t_hat[i] = pt[j];
            ly += (py[j] - data.y()[i]) * (py[j] - data.y()[i]);
            lt += (pt[j] - data.t()[i]) * (pt[j] - data.t()[i]);
        }
        y_fold_loss.push(ly / count);
        t_fold_loss.push(lt / count);
    }
    if y_hat.iter().chain(t_hat.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite nuisance prediction".into()));
    }
    Ok(NuisancePredictions { y_hat, t_hat, fold_plan: plan.clone(), y_fold_loss, t_fold_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DgpSpec};
    use crate::learners::HyperParams;
    use ndarray::Array2;
    use proptest::prelude::*;

    #[test]
    fn six_rows_three_folds() {
        let plan = make_folds(6, 3, 1).unwrap();
        assert_eq!(plan.fold_sizes(), vec![2, 2, 2]);
        let mut all: Vec<usize> = (0..3).flat_map(|f| plan.split(f).1).collect();
        all.sort();
        assert_eq!(all, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn uneven_and_leave_one_out() {
        let mut sizes = make_folds(5, 2, 9).unwrap().fold_sizes();
        sizes.sort();
        assert_eq!(sizes, vec![2, 3]);
        assert_eq!(make_folds(10, 10, 4).unwrap().fold_sizes(), vec![1; 10]);
    }

    #[test]
    fn fold_range_errors() {
        assert!(matches!(make_folds(5, 1, 0), Err(Error::FoldRange { k: 1, n: 5 })));
        assert!(matches!(make_folds(5, 6, 0), Err(Error::FoldRange { k: 6, n: 5 })));
    }

    proptest! {
        #[test]
        fn folds_partition_with_balanced_sizes(n in 2usize..300, k_frac in 0.0f64..1.0, seed in any::<u64>()) {
            let k = 2 + ((n - 2) as f64 * k_frac) as usize;
            let plan = make_folds(n, k, seed).unwrap();
            prop_assert_eq!(plan.assignment.len(), n);
            prop_assert!(plan.assignment.iter().all(|&f| f < k));
            let sizes = plan.fold_sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            prop_assert_eq!(plan.clone(), make_folds(n, k, seed).unwrap());
        }
    }

    fn small_forest() -> HyperParams {
        HyperParams { n_trees: 8, ..Default::default() }
    }

    #[test]
    fn exact_linear_outcome_is_recovered() {
        let (data, _) = generate_synthetic::<f64>(&DgpSpec::paper_listing(200, 2, 3)).unwrap();
        let y = data.x().column(0).mapv(|v| 2.0 * v);
        let data = data.with_outcome(y).unwrap();
        for k in [2, 5, 200] {
            let plan = make_folds(200, k, 1).unwrap();
            let nuis = crossfit_predict(
                &data,
                &LearnerSpec::ridge(0.0),
                &LearnerSpec::logistic(1e-3),
                &plan,
                &Executor::sequential(),
            )
            .unwrap();
            let err = (&nuis.y_hat - &data.y()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 1e-8, "k={k}: {err}");
            assert!(nuis.t_hat.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn out_of_fold_purity_and_worker_invariance() {
        let (data, _) = generate_synthetic::<f64>(&DgpSpec::paper_listing(300, 3, 8)).unwrap();
        let y_spec = LearnerSpec::forest_reg().with_params(small_forest());
        let t_spec = LearnerSpec::forest_clf().with_params(small_forest());
        let plan = make_folds(300, 3, 21).unwrap();
        let seq = crossfit_predict(&data, &y_spec, &t_spec, &plan, &Executor::sequential()).unwrap();
        let par = crossfit_predict(&data, &y_spec, &t_spec, &plan, &Executor::new(4).unwrap()).unwrap();
        assert_eq!(serde_json::to_string(&seq).unwrap(), serde_json::to_string(&par).unwrap());

        for fold in 0..3 {
            let (train, test) = plan.split(fold);
            let xs = data.x().select(Axis(0), &train);
            let m =
                fit(&y_spec, xs.view(), data.y().select(Axis(0), &train).view(), fold_seed(&plan, fold, Role::Outcome))
                    .unwrap();
            let p = m.predict(data.x().select(Axis(0), &test).view()).unwrap();
            for (j, &i) in test.iter().enumerate() {
                assert_eq!(seq.y_hat[i], p[j]);
            }
        }
    }

    #[test]
    fn fold_without_treatment_variation_is_named() {
        // only row 4 is treated; leaving it out of training breaks fold 0's complement
        let x = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
        let mut t = Array1::zeros(6);
        t[4] = 1.0;
        let data = Dataset::new(x, t, Array1::zeros(6), true, None).unwrap();
        let mut plan = make_folds(6, 2, 0).unwrap();
        plan.assignment = vec![1, 1, 1, 0, 0, 0];
        let err = crossfit_predict(
            &data,
            &LearnerSpec::ridge(1.0),
            &LearnerSpec::logistic(1.0),
            &plan,
            &Executor::sequential(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::FoldWithoutTreatmentVariation { fold: 0 }), "{err}");
    }

    #[test]
    fn treatment_learner_must_match_treatment_type() {
        let (data, _) = generate_synthetic::<f64>(&DgpSpec::paper_listing(50, 1, 0)).unwrap();
        let plan = make_folds(50, 2, 0).unwrap();
        let err =
            crossfit_predict(&data, &LearnerSpec::ridge(1.0), &LearnerSpec::ridge(1.0), &plan, &Executor::sequential());
        assert!(matches!(err, Err(Error::InvalidSpec(_))));
    }
}
