//! Bayesian causal model: a prior on the fraction of the on-treatment effect that is
//! kept after discontinuation, combined with MMRM posterior draws and a Dirichlet
//! posterior on the active-arm discontinuation pattern.

mod model;
mod prior;

pub use model::{
    carry_forward_k, decay_k, decompose, draw_pi, effect_draws, implied_trajectory, summarize,
    EffectDraw, EffectKind, EstimateSummary, MaintainedEffectModel, PiPosterior, MIN_SUMMARY_DRAWS,
};
pub use prior::{draw_k0, IntervalKind, K0Prior, PRIOR_GRAMMAR};

use rand::Rng;

use crate::data::{pattern_counts, Arm, TrialDataset};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mmrm::PosteriorDraws;

/// Posterior summary of the final-visit treatment-policy effect. `pi_rng` and `k_rng`
/// should be independent streams.
pub fn bcm_estimate<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    data: &TrialDataset,
    draws: &PosteriorDraws,
    model: &MaintainedEffectModel,
    d_min: Option<usize>,
    interval: Option<IntervalKind>,
    pi_rng: &mut R1,
    k_rng: &mut R2,
) -> Result<EstimateSummary> {
    model.prior.validate()?;
    let l = draws.len();
    let pi = draw_pi(&pattern_counts(data, Arm::Active), d_min, l, pi_rng)?;
    let k = draw_k0(&model.prior, l, k_rng);
    let effects = effect_draws(&draws.draws, &pi, &k, model.kind, data.schedule())?;
    let theta: Vec<f64> = effects.iter().map(|e| e.theta).collect();
    summarize(&theta, interval.unwrap_or_else(|| model.prior.default_interval()))
}

/// Normal-prior summaries over a grid of prior SDs sharing one `(a, b)` decomposition.
///
/// Each draw is paired with its antithetic partner `mean -/+ sigma * z`, so the sample
/// SD is exactly non-decreasing in `sigma` and the point estimate does not move.
pub fn normal_prior_sweep<R: Rng + ?Sized>(
    decomposition: &[(f64, f64)],
    mean: f64,
    sigmas: &[f64],
    rng: &mut R,
) -> Result<Vec<EstimateSummary>> {
    if sigmas.is_empty() {
        return Err(Error::InvalidParameter("sigma grid is empty".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(Error::InvalidParameter(format!("prior SD must be finite and >= 0, got {s}")));
    }
    let z: Vec<f64> = decomposition.iter().map(|_| rng.sample(StandardNormal)).collect();
    sigmas
        .iter()
        .map(|&sigma| {
            let theta: Vec<f64> = decomposition
                .iter()
                .zip(&z)
                .flat_map(|(&(a, b), &z)| [a + (mean + sigma * z) * b, a + (mean - sigma * z) * b])
                .collect();
            summarize(&theta, IntervalKind::NormalApprox)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn sweep_sd_is_monotone_and_point_fixed() {
        let mut rng = stream_rng(9, 0);
        let ab: Vec<(f64, f64)> = (0..500)
            .map(|_| (rng.random::<f64>() - 0.5, rng.random::<f64>() - 1.0))
            .collect();
        let grid: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        let rows = normal_prior_sweep(&ab, 0.3, &grid, &mut stream_rng(9, 1)).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].sd >= w[0].sd);
            assert!((w[1].point - w[0].point).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_rejects_negative_sigma() {
        let ab = vec![(0.0, 1.0); 200];
        assert!(normal_prior_sweep(&ab, 0.0, &[0.1, -0.1], &mut stream_rng(1, 0)).is_err());
        assert!(normal_prior_sweep(&ab, 0.0, &[], &mut stream_rng(1, 0)).is_err());
    }
}
