//! Orthogonal (double) machine learning for treatment effects.
//!
//! Nuisance models for the outcome and the treatment are fit out-of-fold,
//! their residuals are regressed on each other, and the result is an average
//! effect with a sandwich standard error plus a linear effect model over
//! chosen covariates. All fold and tree fits run as seeded pure tasks on an
//! [`Executor`], so results are identical for any worker count.
//!
//! Everything numeric is generic over [`Scalar`] (`f64` or `f32`); the `*64`
//! aliases below fix the common case.

// `!(a > b)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crossfit;
pub mod data;
pub mod dml;
pub mod error;
pub mod learners;
pub mod linalg;
pub mod refute;
pub mod runtime;
pub mod scalar;
pub mod seed;
pub mod tune;

pub use crossfit::{crossfit_predict, make_folds, FoldPlan, NuisancePredictions};
pub use data::{generate_synthetic, load_csv, Dataset, DgpSpec, GroundTruth, OutcomeKind};
pub use dml::{
    estimate, estimate_timed, estimate_with_nuisances, plugin_estimate, DmlSpec, EffectEstimate, StageTimings,
};
pub use error::{Error, ErrorClass, Result};
pub use learners::{fit, FittedModel, HyperParams, LearnerKind, LearnerSpec};
pub use refute::{overlap_diagnostic, placebo_treatment, random_common_cause, subset_refuter, RefutationReport};
pub use runtime::{benchmark, BenchReport, Executor};
pub use scalar::Scalar;
pub use tune::{grid_search, NuisanceSpec, ParamGrid, TuneResult};

pub type Dataset64 = Dataset<f64>;
pub type Dataset32 = Dataset<f32>;
pub type GroundTruth64 = GroundTruth<f64>;
pub type EffectEstimate64 = EffectEstimate<f64>;
pub type EffectEstimate32 = EffectEstimate<f32>;
pub type NuisancePredictions64 = NuisancePredictions<f64>;
pub type FittedModel64 = FittedModel<f64>;
pub type RefutationReport64 = RefutationReport<f64>;
pub type TuneResult64 = TuneResult<f64>;
