//! Nuisance learners behind a uniform fit/predict contract.
//!
//! Four kinds are available: ridge and logistic regression, and random
//! forest regressor/classifier. Classifiers predict `P(target = 1 | x)`.

pub mod forest;
pub mod linear;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::crossfit::{make_folds, FoldPlan};
use crate::error::{Error, Result};
use crate::runtime::Executor;
use crate::scalar::Scalar;
use crate::seed;

pub use forest::{Criterion, Forest, ForestParams};

/// Version tag written into serialized models.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ridge,
    Logistic,
    RandomForestReg,
    RandomForestClf,
}

impl LearnerKind {
    pub fn is_classifier(self) -> bool {
        matches!(self, LearnerKind::Logistic | LearnerKind::RandomForestClf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    pub ridge_lambda: f64,
    pub logistic_l2: f64,
    pub logistic_max_iter: usize,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub max_features: f64,
    pub bootstrap_seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            ridge_lambda: 1e-3,
            logistic_l2: 1e-3,
            logistic_max_iter: 100,
            n_trees: 100,
            max_depth: 8,
            min_leaf: 5,
            max_features: 1.0 / 3.0,
            bootstrap_seed: 0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidSpec(format!("hyperparameter {what}")));
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad("ridge_lambda must be finite and >= 0");
        }
        if !(self.logistic_l2 >= 0.0 && self.logistic_l2.is_finite()) {
            return bad("logistic_l2 must be finite and >= 0");
        }
        if self.logistic_max_iter == 0 {
            return bad("logistic_max_iter must be positive");
        }
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be positive");
        }
        if !(self.max_features > 0.0 && self.max_features <= 1.0) {
            return bad("max_features must lie in (0, 1]");
        }
        Ok(())
    }

    fn forest(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            max_features: self.max_features,
        }
    }
}

/// A learner kind with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    #[serde(default)]
    pub params: HyperParams,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind, params: HyperParams) -> Self {
        Self { kind, params }
    }

    pub fn ridge(lambda: f64) -> Self {
        Self::new(LearnerKind::Ridge, HyperParams { ridge_lambda: lambda, ..Default::default() })
    }

    pub fn logistic(l2: f64) -> Self {
        Self::new(LearnerKind::Logistic, HyperParams { logistic_l2: l2, ..Default::default() })
    }

    pub fn forest_reg() -> Self {
        Self::new(LearnerKind::RandomForestReg, HyperParams::default())
    }

    pub fn forest_clf() -> Self {
        Self::new(LearnerKind::RandomForestClf, HyperParams::default())
    }

    pub fn with_params(mut self, params: HyperParams) -> Self {
        self.params = params;
        self
    }

    pub fn is_classifier(&self) -> bool {
        self.kind.is_classifier()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelState<F> {
    /// Linear score `intercept + coefᵀx`; logistic models apply the sigmoid.
    Linear {
        intercept: F,
        coef: Array1<F>,
    },
    Forest(Forest<F>),
}

/// A trained learner. Immutable; safe to share between threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel<F> {
    pub kind: LearnerKind,
    pub d_in: usize,
    pub state: ModelState<F>,
}

#[derive(Serialize, Deserialize)]
struct ModelEnvelope<F> {
    format: String,
    version: u32,
    model: FittedModel<F>,
}

const MODEL_FORMAT_NAME: &str = "orthoml-model";

impl<F: Scalar> FittedModel<F> {
    pub fn predict(&self, x: ArrayView2<F>) -> Result<Array1<F>> {
        if x.ncols() != self.d_in {
            return Err(Error::DimensionMismatch { expected: self.d_in, got: x.ncols() });
        }
        Ok(match &self.state {
            ModelState::Linear { intercept, coef } => {
                let score = x.dot(coef) + *intercept;
                if self.kind == LearnerKind::Logistic {
                    score.mapv(Scalar::expit)
                } else {
                    score
                }
            }
            ModelState::Forest(f) => f.predict(x),
        })
    }

    /// Serializes to a versioned JSON document.
    pub fn to_json(&self) -> Result<String> {
        let env =
            ModelEnvelope { format: MODEL_FORMAT_NAME.into(), version: MODEL_FORMAT_VERSION, model: self.clone() };
        Ok(serde_json::to_string(&env)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let env: ModelEnvelope<F> = serde_json::from_str(text)?;
        if env.format != MODEL_FORMAT_NAME || env.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidData(format!("unsupported model format {} v{}", env.format, env.version)));
        }
        Ok(env.model)
    }
}

fn check_inputs<F: Scalar>(spec: &LearnerSpec, x: ArrayView2<F>, target: ArrayView1<F>) -> Result<()> {
    spec.params.validate()?;
    if x.nrows() != target.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: target.len() });
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidData(format!("need at least 2 training rows, got {}", x.nrows())));
    }
    if x.iter().chain(target.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite training value".into()));
    }
    if spec.is_classifier() && target.iter().any(|&v| v != F::zero() && v != F::one()) {
        return Err(Error::InvalidData("classifier targets must be 0 or 1".into()));
    }
    Ok(())
}

/// Fits a learner on the calling thread.
pub fn fit<F: Scalar>(
    spec: &LearnerSpec,
    x: ArrayView2<F>,
    target: ArrayView1<F>,
    seed: u64,
) -> Result<FittedModel<F>> {
    fit_with(spec, x, target, seed, &Executor::sequential())
}

/// Fits a learner, growing forest trees as tasks on `exec`. The result does
/// not depend on the executor's worker count.
pub fn fit_with<F: Scalar>(
    spec: &LearnerSpec,
    x: ArrayView2<F>,
    target: ArrayView1<F>,
    seed: u64,
    exec: &Executor,
) -> Result<FittedModel<F>> {
    check_inputs(spec, x, target)?;
    let p = &spec.params;
    let state = match spec.kind {
        LearnerKind::Ridge => {
            let (intercept, coef) = linear::fit_ridge(x, target, F::of(p.ridge_lambda))?;
            ModelState::Linear { intercept, coef }
        }
        LearnerKind::Logistic => {
            let (intercept, coef, _) = linear::fit_logistic(x, target, F::of(p.logistic_l2), p.logistic_max_iter)?;
            ModelState::Linear { intercept, coef }
        }
        LearnerKind::RandomForestReg | LearnerKind::RandomForestClf => {
            let criterion =
                if spec.kind == LearnerKind::RandomForestClf { Criterion::Gini } else { Criterion::Variance };
            let tree_seed = seed::derive(seed, &[p.bootstrap_seed]);
            ModelState::Forest(forest::fit_forest(x, target, &p.forest(), criterion, tree_seed, exec)?)
        }
    };
    Ok(FittedModel { kind: spec.kind, d_in: x.ncols(), state })
}

/// Sum of squared prediction errors on fold `fold` of `plan` for a model
/// trained on the remaining folds with seed `seed`. Squared error is MSE for
/// regressors and the Brier score for classifiers.
pub fn fold_loss_sum<F: Scalar>(
    spec: &LearnerSpec,
    x: ArrayView2<F>,
    target: ArrayView1<F>,
    plan: &FoldPlan,
    fold: usize,
    seed: u64,
) -> Result<F> {
    let (train, test) = plan.split(fold);
    let model = fit(spec, x.select(Axis(0), &train).view(), target.select(Axis(0), &train).view(), seed)?;
    let pred = model.predict(x.select(Axis(0), &test).view())?;
    Ok(test.iter().zip(pred.iter()).map(|(&i, &p)| (p - target[i]) * (p - target[i])).sum())
}

/// Mean out-of-fold squared error over all rows with `k` seeded folds.
pub fn cv_score<F: Scalar>(
    spec: &LearnerSpec,
    x: ArrayView2<F>,
    target: ArrayView1<F>,
    k: usize,
    seed: u64,
) -> Result<F> {
    if x.nrows() != target.len() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: target.len() });
    }
    let plan = make_folds(x.nrows(), k, seed)?;
    let mut total = F::zero();
    for fold in 0..k {
        total += fold_loss_sum(spec, x, target, &plan, fold, seed::derive(seed, &[fold as u64]))?;
    }
    Ok(total / F::of(x.nrows() as f64))
}
