use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::scenario::{EstimatorSpec, Hypothesis, ScenarioConfig};
use super::simulate::{simulate_trial, true_effect_oracle, OracleEffect};
use crate::bcm::{decompose, draw_k0, draw_pi, summarize};
use crate::data::{pattern_counts, Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::mmrm::{gibbs_sample, GibbsConfig, PosteriorDraws};
use crate::rbi::{condmean_jackknife, rubin_estimate, RbiMethod};
use crate::rng::{tagged_rng, StreamTag};

/// One estimator's output in one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorResult {
    pub estimator: String,
    pub point: f64,
    /// Standard error, or posterior SD for the causal model.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Maintained-effect value behind `true_effect`.
    pub true_k0: f64,
    pub true_effect: f64,
}

impl EstimatorResult {
    pub fn covers(&self) -> bool {
        self.ci_low <= self.true_effect && self.true_effect <= self.ci_high
    }

    pub fn rejects_zero(&self) -> bool {
        self.ci_low > 0.0 || self.ci_high < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub index: u64,
    pub estimates: Vec<EstimatorResult>,
}

/// Study-level output for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorMetrics {
    pub estimator: String,
    pub reps: usize,
    pub mean: f64,
    pub mean_mcse: f64,
    /// Average of the per-replication true values.
    pub true_value: f64,
    pub emp_se: f64,
    pub est_se: f64,
    pub coverage_pct: f64,
    pub coverage_mcse: f64,
    /// Share of intervals excluding zero: type-1 error under the null.
    pub rejection_pct: f64,
    pub rejection_mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<EstimatorMetrics>,
}

impl MetricsReport {
    pub fn get(&self, estimator: &str) -> Option<&EstimatorMetrics> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "estimator",
            "reps",
            "mean",
            "mean_mcse",
            "true_value",
            "emp_se",
            "est_se",
            "coverage_pct",
            "coverage_mcse",
            "rejection_pct",
            "rejection_mcse",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.estimator.clone(),
                r.reps.to_string(),
                r.mean.to_string(),
                r.mean_mcse.to_string(),
                r.true_value.to_string(),
                r.emp_se.to_string(),
                r.est_se.to_string(),
                r.coverage_pct.to_string(),
                r.coverage_mcse.to_string(),
                r.rejection_pct.to_string(),
                r.rejection_mcse.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const REPLICATION_HEADER: [&str; 9] = [
    "replication",
    "estimator",
    "point",
    "se",
    "ci_low",
    "ci_high",
    "true_k0",
    "true_effect",
    "covers",
];

pub fn replication_record(index: u64, e: &EstimatorResult) -> Vec<String> {
    vec![
        index.to_string(),
        e.estimator.clone(),
        e.point.to_string(),
        e.se.to_string(),
        e.ci_low.to_string(),
        e.ci_high.to_string(),
        e.true_k0.to_string(),
        e.true_effect.to_string(),
        u8::from(e.covers()).to_string(),
    ]
}

/// One row per (replication, estimator).
pub fn write_replications_csv<W: Write>(results: &[ReplicationResult], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPLICATION_HEADER)?;
    for r in results {
        for e in &r.estimates {
            w.write_record(replication_record(r.index, e))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Means, empirical and model SEs, coverage and rejection rates per estimator.
/// With a single replication the empirical SE and Monte Carlo SEs are `NaN`.
pub fn compute_metrics(results: &[ReplicationResult]) -> Result<MetricsReport> {
    let first = results
        .first()
        .ok_or_else(|| Error::InvalidInput("no replications to summarize".into()))?;
    let r = results.len() as f64;
    let mut rows = Vec::with_capacity(first.estimates.len());
    for (k, head) in first.estimates.iter().enumerate() {
        let column = results
            .iter()
            .map(|rep| {
                rep.estimates
                    .get(k)
                    .filter(|e| e.estimator == head.estimator)
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "replication {} lacks estimator {}",
                            rep.index, head.estimator
                        ))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = column.iter().map(|e| e.point).sum::<f64>() / r;
        let emp_se = if column.len() > 1 {
            (column.iter().map(|e| (e.point - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
        } else {
            f64::NAN
        };
        let rate = |f: &dyn Fn(&EstimatorResult) -> bool| {
            column.iter().filter(|e| f(e)).count() as f64 / r
        };
        let binom_se = |p: f64| {
            if column.len() > 1 {
                100.0 * (p * (1.0 - p) / r).sqrt()
            } else {
                f64::NAN
            }
        };
        let coverage = rate(&|e| e.covers());
        let rejection = rate(&|e| e.rejects_zero());
        rows.push(EstimatorMetrics {
            estimator: head.estimator.clone(),
            reps: column.len(),
            mean,
            mean_mcse: emp_se / r.sqrt(),
            true_value: column.iter().map(|e| e.true_effect).sum::<f64>() / r,
            emp_se,
            est_se: column.iter().map(|e| e.se).sum::<f64>() / r,
            coverage_pct: 100.0 * coverage,
            coverage_mcse: binom_se(coverage),
            rejection_pct: 100.0 * rejection,
            rejection_mcse: binom_se(rejection),
        });
    }
    Ok(MetricsReport { rows })
}

/// Sampler configuration of replication `index`.
pub fn replication_gibbs_config(scenario: &ScenarioConfig, index: u64) -> GibbsConfig {
    GibbsConfig {
        seed: tagged_rng(scenario.seed, index, StreamTag::GibbsReference).random(),
        ..scenario.gibbs
    }
}

fn posterior(data: &TrialDataset, scenario: &ScenarioConfig, index: u64) -> Result<PosteriorDraws> {
    gibbs_sample(data, &replication_gibbs_config(scenario, index))
}

/// Runs every configured estimator on the dataset of replication `index`.
pub fn run_replication(
    scenario: &ScenarioConfig,
    oracle: &OracleEffect,
    index: u64,
) -> Result<ReplicationResult> {
    let seed = scenario.seed;
    let data = simulate_trial(scenario, &mut tagged_rng(seed, index, StreamTag::Simulate))?;
    let specs = &scenario.estimators;

    let condmean_methods: Vec<RbiMethod> = specs
        .iter()
        .filter_map(|e| match e {
            EstimatorSpec::CondMean(m) => Some(*m),
            _ => None,
        })
        .collect();
    let condmean = if condmean_methods.is_empty() {
        Vec::new()
    } else {
        condmean_jackknife(&data, &condmean_methods)?
    };

    let needs_draws = specs.iter().any(|e| !matches!(e, EstimatorSpec::CondMean(_)));
    let draws = if needs_draws { Some(posterior(&data, scenario, index)?) } else { None };
    let decomposition = match &draws {
        Some(d) if specs.iter().any(|e| matches!(e, EstimatorSpec::Bcm(_))) => {
            let pi = draw_pi(
                &pattern_counts(&data, Arm::Active),
                scenario.d_min,
                d.len(),
                &mut tagged_rng(seed, index, StreamTag::Pi),
            )?;
            Some(decompose(&d.draws, &pi)?)
        }
        _ => None,
    };

    let mut estimates = Vec::with_capacity(specs.len());
    let mut next_condmean = condmean.iter();
    for spec in specs {
        let true_k0 = match spec.fixed_k0() {
            Some(k) => k,
            None => match spec {
                EstimatorSpec::Bcm(prior) => prior.sample(&mut tagged_rng(seed, index, StreamTag::TrueK0)),
                _ => unreachable!("only causal-model priors are random"),
            },
        };
        let (point, se, ci_low, ci_high) = match spec {
            EstimatorSpec::CondMean(_) => {
                let j = next_condmean.next().expect("one jackknife result per condmean estimator");
                (j.point, j.se, j.ci_low, j.ci_high)
            }
            EstimatorSpec::Rubin(method) => {
                let d = draws.as_ref().expect("posterior drawn");
                let stride = (d.len() / scenario.imputations).max(1);
                let r = rubin_estimate(
                    &data,
                    &d.thinned(stride),
                    *method,
                    scenario.imputations,
                    &mut tagged_rng(seed, index, StreamTag::Imputation),
                )?;
                (r.point, r.se, r.ci_low, r.ci_high)
            }
            EstimatorSpec::Bcm(prior) => {
                let ab = decomposition.as_ref().expect("decomposition computed");
                let k = draw_k0(prior, ab.len(), &mut tagged_rng(seed, index, StreamTag::K0));
                let theta: Vec<f64> = ab.iter().zip(&k).map(|((a, b), k)| a + k * b).collect();
                let s = summarize(&theta, prior.default_interval())?;
                (s.point, s.sd, s.ci_low, s.ci_high)
            }
        };
        estimates.push(EstimatorResult {
            estimator: spec.to_string(),
            point,
            se,
            ci_low,
            ci_high,
            true_k0,
            true_effect: oracle.effect(true_k0),
        });
    }
    Ok(ReplicationResult { index, estimates })
}

/// Oracle for the scenario on its dedicated stream.
pub fn scenario_oracle(scenario: &ScenarioConfig) -> Result<OracleEffect> {
    true_effect_oracle(
        scenario,
        scenario.oracle_n_mc,
        &mut tagged_rng(scenario.seed, 0, StreamTag::Oracle),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyOutput {
    pub oracle: OracleEffect,
    pub replications: Vec<ReplicationResult>,
    pub report: MetricsReport,
}

/// All replications in parallel on the current rayon pool, then the metrics reduction.
pub fn run_study(scenario: &ScenarioConfig) -> Result<StudyOutput> {
    scenario.validate()?;
    let oracle = scenario_oracle(scenario)?;
    let replications = (0..scenario.reps as u64)
        .into_par_iter()
        .map(|i| {
            run_replication(scenario, &oracle, i).map_err(|e| Error::Replication {
                index: i,
                seed: scenario.seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = compute_metrics(&replications)?;
    Ok(StudyOutput {
        oracle,
        replications,
        report,
    })
}

/// Whether the study targets type-1 error rather than coverage.
pub fn is_null(scenario: &ScenarioConfig) -> bool {
    scenario.hypothesis == Hypothesis::Null
}
