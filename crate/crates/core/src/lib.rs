//! Estimation and inference for the row/column logistic model on a
//! partially observed binary matrix.
//!
//! `P(Y_ij = 1) = logistic(theta_i - beta_j)` on the observed cells, with
//! row effects constrained to sum to zero. The crate fits the constrained
//! maximum likelihood estimate, checks identifiability of the design,
//! computes variances, Wald intervals and z-tests for linear forms of
//! `M = (theta_i - beta_j)`, and runs Monte-Carlo studies of the
//! large-sample approximations.

pub mod connectivity;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod io;
pub mod model;
pub mod normal;
pub mod rollcall;
pub mod simulation;

pub use connectivity::{anchored_solve, check_connectivity, estimate_exists, ConnectivityReport, Witness};
pub use error::{Error, Result};
pub use estimator::{fit, fit_profile, FitConfig, FitReport, StepRule, StopReason};
pub use inference::{
    evaluate_form, exact_variance, test_difference, variance_main, variance_refined, wald_interval, InferenceResult,
    VarianceEstimate, VarianceMethod,
};
pub use model::{
    center, gradient, log_likelihood, predict_probability, sigma_stats, DesignStats, EntryWeight, LinearForm,
    ModelParams, ObservedBinaryMatrix, SigmaStats,
};
