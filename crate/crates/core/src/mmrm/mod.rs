//! Per-arm longitudinal model estimation: monotone ML and a data-augmentation Gibbs sampler.

mod gibbs;
mod mle;

pub use gibbs::{gibbs_sample, ArmPairDraw, ChainDiagnostics, GibbsConfig, PosteriorDraws};
pub use mle::{fit_arm, fit_mle, fit_monotone_mle, MleFit};
