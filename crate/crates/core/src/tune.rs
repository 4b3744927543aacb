//! Parallel grid search over nuisance learner specs.
//!
//! A [`NuisanceSpec`] is either a fixed learner or a grid; wherever the
//! estimator takes a learner it also accepts a grid, which is resolved to
//! its best candidate on the full sample before cross-fitting.

use std::time::Instant;

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::crossfit::make_folds;
use crate::error::{Error, Result};
use crate::learners::{fold_loss_sum, LearnerSpec};
use crate::runtime::Executor;
use crate::scalar::Scalar;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub candidates: Vec<LearnerSpec>,
    #[serde(default = "default_cv_k")]
    pub cv_k: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_cv_k() -> usize {
    3
}

impl ParamGrid {
    pub fn new(candidates: Vec<LearnerSpec>, cv_k: usize, seed: u64) -> Self {
        Self { candidates, cv_k, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.candidates.first() else {
            return Err(Error::InvalidSpec("parameter grid has no candidates".into()));
        };
        if self.candidates.iter().any(|c| c.is_classifier() != first.is_classifier()) {
            return Err(Error::InvalidSpec("parameter grid mixes regressors and classifiers".into()));
        }
        for c in &self.candidates {
            c.params.validate()?;
        }
        Ok(())
    }

    pub fn is_classifier(&self) -> bool {
        self.candidates.first().is_some_and(|c| c.is_classifier())
    }
}

/// A learner, or a grid to pick one from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NuisanceSpec {
    Learner(LearnerSpec),
    Grid(ParamGrid),
}

impl From<LearnerSpec> for NuisanceSpec {
    fn from(s: LearnerSpec) -> Self {
        NuisanceSpec::Learner(s)
    }
}

impl From<ParamGrid> for NuisanceSpec {
    fn from(g: ParamGrid) -> Self {
        NuisanceSpec::Grid(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore<F> {
    /// Position in the grid's candidate list.
    pub index: usize,
    pub spec: LearnerSpec,
    /// Mean out-of-fold squared error over all rows.
    pub score: F,
    /// Per-fold sums of squared errors.
    pub fold_loss_sums: Vec<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult<F> {
    pub best: LearnerSpec,
    /// Ascending by score; equal scores keep candidate order.
    pub scores: Vec<CandidateScore<F>>,
    pub wall_time: f64,
}

/// Seed for candidate `candidate` on fold `fold`.
pub fn pair_seed(grid: &ParamGrid, candidate: usize, fold: usize) -> u64 {
    seed::derive(grid.seed, &[candidate as u64, fold as u64])
}

/// Scores every candidate by k-fold squared error, one task per
/// (candidate, fold) pair, and returns the lowest-scoring candidate.
pub fn grid_search<F: Scalar>(
    x: ArrayView2<F>,
    target: ArrayView1<F>,
    grid: &ParamGrid,
    exec: &Executor,
) -> Result<TuneResult<F>> {
    let started = Instant::now();
    grid.validate()?;
    if x.nrows() != target.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: target.len() });
    }
    let k = grid.cv_k;
    let plan = make_folds(x.nrows(), k, grid.seed)?;
    let losses = exec.run_indexed(grid.candidates.len() * k, |task| {
        let (c, fold) = (task / k, task % k);
        fold_loss_sum(&grid.candidates[c], x, target, &plan, fold, pair_seed(grid, c, fold))
    })?;
    let n = F::of(x.nrows() as f64);
    let mut scores: Vec<CandidateScore<F>> = grid
        .candidates
        .iter()
        .enumerate()
        .map(|(c, spec)| {
            let fold_loss_sums = losses[c * k..(c + 1) * k].to_vec();
            let score = fold_loss_sums.iter().copied().sum::<F>() / n;
            CandidateScore { index: c, spec: spec.clone(), score, fold_loss_sums }
        })
        .collect();
    // stable: ties keep list order
    scores.sort_by(|a, b| a.score.total_cmp(&b.score));
    Ok(TuneResult { best: scores[0].spec.clone(), scores, wall_time: started.elapsed().as_secs_f64() })
}

/// Returns a plain learner unchanged, or the grid's best candidate fitted
/// against `target` on all rows.
pub fn resolve_tuned<F: Scalar>(
    spec: &NuisanceSpec,
    x: ArrayView2<F>,
    target: ArrayView1<F>,
    exec: &Executor,
) -> Result<LearnerSpec> {
    match spec {
        NuisanceSpec::Learner(l) => Ok(l.clone()),
        NuisanceSpec::Grid(g) => grid_search(x, target, g, exec).map(|r| r.best),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};

    fn linear_data(n: usize) -> (Array2<f64>, Array1<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let y = Array1::from_iter(x.rows().into_iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + r[2]));
        (x, y)
    }

    #[test]
    fn single_candidate_is_returned() {
        let (x, y) = linear_data(30);
        let grid = ParamGrid::new(vec![LearnerSpec::ridge(0.5)], 3, 0);
        let r = grid_search(x.view(), y.view(), &grid, &Executor::sequential()).unwrap();
        assert_eq!(r.best, LearnerSpec::ridge(0.5));
        assert_eq!(r.scores.len(), 1);
    }

    #[test]
    fn unpenalized_ridge_beats_heavy_penalty() {
        let (x, y) = linear_data(60);
        let grid = ParamGrid::new(vec![LearnerSpec::ridge(1e6), LearnerSpec::ridge(0.0)], 4, 3);
        let r = grid_search(x.view(), y.view(), &grid, &Executor::new(3).unwrap()).unwrap();
        assert_eq!(r.best, LearnerSpec::ridge(0.0));
        assert!(r.scores[0].score < r.scores[1].score);
    }

    #[test]
    fn identical_candidates_tie_to_first() {
        let (x, y) = linear_data(30);
        let mut second = LearnerSpec::ridge(1.0);
        second.params.bootstrap_seed = 99; // irrelevant to ridge, distinguishes the two
        let grid = ParamGrid::new(vec![LearnerSpec::ridge(1.0), second], 3, 0);
        let r = grid_search(x.view(), y.view(), &grid, &Executor::sequential()).unwrap();
        assert_eq!(r.scores[0].score, r.scores[1].score);
        assert_eq!(r.best, LearnerSpec::ridge(1.0));
        assert_eq!(r.scores[0].index, 0);
    }

    #[test]
    fn task_count_is_candidates_times_folds() {
        let (x, y) = linear_data(40);
        let grid =
            ParamGrid::new(vec![LearnerSpec::ridge(0.0), LearnerSpec::ridge(1.0), LearnerSpec::ridge(10.0)], 5, 0);
        let exec = Executor::new(2).unwrap();
        grid_search(x.view(), y.view(), &grid, &exec).unwrap();
        assert_eq!(exec.counters().tasks_submitted, 15);
    }

    #[test]
    fn invalid_grids() {
        let (x, y) = linear_data(10);
        let exec = Executor::sequential();
        let empty = ParamGrid::new(vec![], 3, 0);
        assert!(matches!(grid_search(x.view(), y.view(), &empty, &exec), Err(Error::InvalidSpec(_))));
        let mixed = ParamGrid::new(vec![LearnerSpec::ridge(1.0), LearnerSpec::logistic(1.0)], 3, 0);
        assert!(matches!(grid_search(x.view(), y.view(), &mixed, &exec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn resolve_plain_spec_is_identity() {
        let (x, y) = linear_data(10);
        let spec = NuisanceSpec::from(LearnerSpec::forest_reg());
        assert_eq!(
            resolve_tuned(&spec, x.view(), y.view(), &Executor::sequential()).unwrap(),
            LearnerSpec::forest_reg()
        );
    }

    #[test]
    fn resolve_grid_on_two_rows_fails_fold_range() {
        let (x, y) = linear_data(2);
        let spec = NuisanceSpec::from(ParamGrid::new(vec![LearnerSpec::ridge(1.0)], 5, 0));
        let err = resolve_tuned(&spec, x.view(), y.view(), &Executor::sequential()).unwrap_err();
        assert!(matches!(err, Error::FoldRange { k: 5, n: 2 }));
    }

    #[test]
    fn nuisance_spec_deserializes_either_shape() {
        let l: NuisanceSpec = serde_json::from_str(r#"{"kind":"ridge","params":{"ridge_lambda":2.0}}"#).unwrap();
        assert_eq!(l, NuisanceSpec::Learner(LearnerSpec::ridge(2.0)));
        let g: NuisanceSpec = serde_json::from_str(r#"{"candidates":[{"kind":"logistic"}],"cv_k":4}"#).unwrap();
        assert!(matches!(g, NuisanceSpec::Grid(ref p) if p.cv_k == 4 && p.is_classifier()));
    }
}
