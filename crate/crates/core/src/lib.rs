//! Restricted maximum likelihood for the variance parameters of linear mixed
//! models, with three Newton-type curvature choices: observed information,
//! Fisher information, and the average information obtained by splitting
//! `(I_O + I)/2` into a data-dependent main part and a zero-mean remainder.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod information;
pub mod likelihood;
pub mod model;
pub mod projection;
pub mod simulate;
pub mod solver;
pub mod verify;

pub use error::{Error, PivotBlock, Result};
pub use information::{
    average_information, check_splitting, fisher_information, observed_information,
    splitting_remainder, InfoKind, InfoMatrix, InformationSet, SplittingResidual,
};
pub use likelihood::{
    fd_hessian, fd_score, reml_loglik, score, LikelihoodEval, RemlPoint, ScoreVector,
};
pub use model::{Bounds, CovarianceModel, Dataset, Family, ThetaVector};
pub use projection::{apply_p_via_mme, solve_mme, FittedEffects, ProjectionContext};
pub use simulate::{monte_carlo_information, sample_dataset, MonteCarloReport, SimSpec};
pub use solver::{fit, newton_step, standard_errors, FitResult, Method, SolverConfig, Status};
