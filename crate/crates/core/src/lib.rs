//! Reference-based estimators and the Bayesian causal model for treatment-policy
//! effects in longitudinal trials with missing post-discontinuation data.
//!
//! The crate is organized bottom-up:
//!
//! - [`gaussian`]: multivariate-normal construction, conditioning and sampling.
//! - [`data`]: trial datasets under monotone missingness and wide-CSV I/O.
//! - [`mmrm`]: per-arm ML under monotone missingness and a Gibbs sampler.
//! - [`rbi`]: jump-to-reference and copy-increments-in-reference imputation,
//!   Rubin's rules and jackknife standard errors.
//! - [`bcm`]: the causal model with a prior on the maintained-effect parameter.
//! - [`sim`]: data-generating process, true-effect oracle and study runner.

pub mod bcm;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod mmrm;
pub mod rbi;
pub mod report;
pub mod rng;
pub mod sim;

pub use data::{Arm, PatientRecord, TrialDataset};
pub use error::{Error, ErrorKind, Result};
pub use gaussian::{MvnParams, VisitSchedule};
