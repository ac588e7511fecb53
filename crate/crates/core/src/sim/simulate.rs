use rand::Rng;
use serde::Serialize;

use super::scenario::{ArmDropout, DropoutModel, ScenarioConfig};
use crate::data::{Arm, PatientRecord, TrialDataset};
use crate::error::Result;
use crate::gaussian::{CholFactor, MvnParams};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Last on-treatment visit of one patient under the hazard model.
fn last_on_treatment<R: Rng + ?Sized>(y: &[f64], visits: &[usize], coef: &ArmDropout, rng: &mut R) -> usize {
    for (k, &j) in visits.iter().enumerate() {
        let eta = coef.intercept[k] + coef.base[k] * y[0] + coef.prev[k] * y[j - 1];
        if rng.random::<f64>() < sigmoid(eta) {
            return j - 1;
        }
    }
    y.len() - 1
}

fn simulate_arm<R: Rng + ?Sized>(
    arm: Arm,
    params: &MvnParams,
    chol: &CholFactor,
    dropout: &DropoutModel,
    n: usize,
    rng: &mut R,
    out: &mut Vec<PatientRecord>,
) -> Result<()> {
    let coef = dropout.arm(arm);
    let prefix = match arm {
        Arm::Reference => 'r',
        Arm::Active => 'a',
    };
    for i in 0..n {
        let y = params.mean() + chol.draw(rng);
        let d = last_on_treatment(y.as_slice(), &dropout.visits, coef, rng);
        let outcomes = y.iter().enumerate().map(|(j, &v)| (j <= d).then_some(v)).collect();
        out.push(PatientRecord::new(format!("{prefix}{i}"), arm, outcomes)?);
    }
    Ok(())
}

/// One simulated trial: reference patients `r0..` followed by active patients `a0..`.
pub fn simulate_trial<R: Rng + ?Sized>(scenario: &ScenarioConfig, rng: &mut R) -> Result<TrialDataset> {
    let (active, reference) = scenario.arm_params()?;
    let n = scenario.n_per_arm;
    let mut patients = Vec::with_capacity(2 * n);
    for (arm, params) in [(Arm::Reference, &reference), (Arm::Active, &active)] {
        let chol = params.chol()?;
        simulate_arm(arm, params, &chol, &scenario.dropout, n, rng, &mut patients)?;
    }
    TrialDataset::new(scenario.schedule.clone(), patients)
}

/// Monte Carlo pattern probabilities of one arm.
pub fn simulate_patterns<R: Rng + ?Sized>(
    params: &MvnParams,
    dropout: &DropoutModel,
    arm: Arm,
    n_mc: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let chol = params.chol()?;
    let coef = dropout.arm(arm);
    let mut counts = vec![0usize; params.dim()];
    for _ in 0..n_mc {
        let y = params.mean() + chol.draw(rng);
        counts[last_on_treatment(y.as_slice(), &dropout.visits, coef, rng)] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / n_mc as f64).collect())
}

/// True effect decomposition `theta(k0) = a + k0 * b` under the scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEffect {
    pub a: f64,
    pub b: f64,
    /// Active-arm pattern probabilities.
    pub pi: Vec<f64>,
    /// Per-visit mean difference, active minus reference.
    pub delta: Vec<f64>,
    pub n_mc: usize,
}

impl OracleEffect {
    pub fn effect(&self, k0: f64) -> f64 {
        self.a + k0 * self.b
    }

    /// Monte Carlo SE of `effect(k0)` from the multinomial estimate of `pi`.
    pub fn mcse(&self, k0: f64) -> f64 {
        let jm = self.pi.len() - 1;
        let c = |j: usize| if j == jm { self.delta[j] } else { k0 * self.delta[j] };
        let theta = self.effect(k0);
        let second: f64 = (0..=jm).map(|j| self.pi[j] * c(j) * c(j)).sum();
        ((second - theta * theta).max(0.0) / self.n_mc as f64).sqrt()
    }
}

pub fn true_effect_oracle<R: Rng + ?Sized>(
    scenario: &ScenarioConfig,
    n_mc: usize,
    rng: &mut R,
) -> Result<OracleEffect> {
    let (active, reference) = scenario.arm_params()?;
    let pi = simulate_patterns(&active, &scenario.dropout, Arm::Active, n_mc, rng)?;
    let delta: Vec<f64> = active
        .mean()
        .iter()
        .zip(reference.mean().iter())
        .map(|(a, r)| a - r)
        .collect();
    let jm = delta.len() - 1;
    let a = pi[jm] * delta[jm];
    let b = (0..jm).map(|j| pi[j] * delta[j]).sum();
    Ok(OracleEffect { a, b, pi, delta, n_mc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pattern_counts;
    use crate::rng::stream_rng;

    fn scenario(name: &str) -> ScenarioConfig {
        ScenarioConfig::bundled(name).unwrap()
    }

    #[test]
    fn huge_negative_intercept_means_no_dropout() {
        let mut s = scenario("high_alt");
        s.dropout = s.dropout.with_intercept(-1000.0);
        let data = simulate_trial(&s, &mut stream_rng(1, 0)).unwrap();
        assert!(data.is_complete());
    }

    #[test]
    fn simulated_patterns_respect_design() {
        let s = scenario("high_alt");
        let data = simulate_trial(&s, &mut stream_rng(2, 0)).unwrap();
        for arm in Arm::BOTH {
            let c = pattern_counts(&data, arm);
            assert_eq!(c.total(), s.n_per_arm);
            assert_eq!(c.counts[0], 0);
        }
        assert_eq!(data.patients()[0].id(), "r0");
    }

    #[test]
    fn null_oracle_is_exactly_zero() {
        let o = true_effect_oracle(&scenario("low_null"), 10_000, &mut stream_rng(3, 0)).unwrap();
        assert_eq!((o.a, o.b), (0.0, 0.0));
        assert_eq!(o.mcse(0.5), 0.0);
    }

    #[test]
    fn discontinuation_rises_with_intercept() {
        let s = scenario("low_alt");
        let (active, _) = s.arm_params().unwrap();
        let mut last = 0.0;
        for b0 in [-17.0, -15.0, -13.0, -11.0] {
            let pi = simulate_patterns(&active, &s.dropout.with_intercept(b0), Arm::Active, 50_000, &mut stream_rng(4, 0)).unwrap();
            let stopped = 1.0 - pi[pi.len() - 1];
            assert!(stopped >= last, "{b0}: {stopped} < {last}");
            last = stopped;
        }
    }

    #[test]
    fn oracle_theta_matches_direct_pattern_sum() {
        let o = true_effect_oracle(&scenario("high_alt"), 20_000, &mut stream_rng(5, 0)).unwrap();
        for k in [-0.5, 0.0, 0.3, 1.0] {
            let jm = o.pi.len() - 1;
            let direct: f64 = (0..jm).map(|j| o.pi[j] * k * o.delta[j]).sum::<f64>() + o.pi[jm] * o.delta[jm];
            assert!((o.effect(k) - direct).abs() < 1e-12);
        }
    }
}
