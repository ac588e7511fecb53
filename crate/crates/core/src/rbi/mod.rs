//! Reference-based imputation: jump-to-reference (J2R) and copy increments in
//! reference (CIR), with Rubin's-rules and conditional-mean/jackknife inference.

mod ancova;
mod imputation;
mod jackknife;
mod pooling;

pub use ancova::{analyze_ancova, AncovaResult};
pub use imputation::{
    build_imputation_distribution, conditional_mean_impute, impute_multiple,
    ImputationDistribution, RbiMethod,
};
pub use jackknife::{condmean_estimate, condmean_jackknife, jackknife, jackknife_se, JackknifeEstimate};
pub use pooling::{rubins_rules, PooledEstimate, Z_975};

pub(crate) use imputation::patterns_present;

use rand::Rng;

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::mmrm::PosteriorDraws;

/// Multiple imputation with `m` posterior draws, the analysis model on each completed
/// dataset, and Rubin's rules.
pub fn rubin_estimate<R: Rng + ?Sized>(
    data: &TrialDataset,
    draws: &PosteriorDraws,
    method: RbiMethod,
    m: usize,
    rng: &mut R,
) -> Result<PooledEstimate> {
    if m > draws.len() {
        return Err(Error::InvalidInput(format!(
            "{m} imputations requested but only {} posterior draws available",
            draws.len()
        )));
    }
    let present = patterns_present(data);
    let mut points = Vec::with_capacity(m);
    let mut variances = Vec::with_capacity(m);
    for draw in &draws.draws[..m] {
        let completed = imputation::impute_one(data, draw, method, &present, rng)?;
        let fit = analyze_ancova(&completed)?;
        points.push(fit.point);
        variances.push(fit.variance);
    }
    rubins_rules(&points, &variances)
}
