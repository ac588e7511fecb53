use serde::Serialize;

use super::ancova::ancova_fit;
use super::imputation::{patterns_present, PatternLaws, RbiMethod};
use super::pooling::Z_975;
use crate::data::{Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::gaussian::MvnParams;
use crate::mmrm::{fit_arm, fit_mle};

/// Full-data point estimate with a delete-one jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JackknifeEstimate {
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

impl JackknifeEstimate {
    fn new(point: f64, leave_one_out: &[f64]) -> Self {
        let se = jackknife_se(leave_one_out);
        Self {
            point,
            se,
            ci_low: point - Z_975 * se,
            ci_high: point + Z_975 * se,
            n: leave_one_out.len(),
        }
    }
}

/// `sqrt((n-1)/n * sum (theta_i - mean)^2)` over leave-one-out estimates.
pub fn jackknife_se(leave_one_out: &[f64]) -> f64 {
    let n = leave_one_out.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mean = leave_one_out.iter().sum::<f64>() / n;
    let ss: f64 = leave_one_out.iter().map(|t| (t - mean).powi(2)).sum();
    ((n - 1.0) / n * ss).sqrt()
}

/// Jackknife of an arbitrary estimator; `estimator(None)` is the full-data fit and
/// `estimator(Some(i))` drops patient `i`.
pub fn jackknife<F>(data: &TrialDataset, mut estimator: F) -> Result<JackknifeEstimate>
where
    F: FnMut(&TrialDataset) -> Result<f64>,
{
    let point = estimator(data)?;
    let loo = (0..data.patients().len())
        .map(|i| {
            let reduced = data.without(i)?;
            estimator(&reduced).map_err(|e| Error::LeaveOneOut {
                id: data.patients()[i].id().to_string(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(JackknifeEstimate::new(point, &loo))
}

/// Conditional-mean imputation followed by the analysis model, dropping row `skip`.
fn condmean_point(
    data: &TrialDataset,
    reference: &MvnParams,
    active: &MvnParams,
    method: RbiMethod,
    present: &[Vec<bool>; 2],
    skip: Option<usize>,
) -> Result<f64> {
    let laws = PatternLaws::new(method, active, reference, [&present[0], &present[1]])?;
    let last = data.n_visits() - 1;
    let mut rows = Vec::with_capacity(data.patients().len());
    for (i, r) in data.patients().iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        let y0 = r.outcomes()[0].expect("baseline observed");
        let y = match laws.get(r.arm(), r.last_observed()) {
            None => r.outcomes()[last].expect("completer observed at final visit"),
            Some(law) => {
                let tail = law.mean_at(&r.observed());
                tail[tail.len() - 1]
            }
        };
        rows.push((y0, y, r.arm().indicator()));
    }
    ancova_fit(&rows).map(|a| a.point)
}

/// Conditional-mean estimate under the method's law at the MLE.
pub fn condmean_estimate(data: &TrialDataset, method: RbiMethod) -> Result<f64> {
    let mle = fit_mle(data)?;
    let present = patterns_present(data);
    condmean_point(data, &mle.reference, &mle.active, method, &present, None)
}

/// Conditional-mean estimates with jackknife SEs for each method. Each leave-one-out
/// refit touches only the arm of the dropped patient and is shared across methods.
pub fn condmean_jackknife(
    data: &TrialDataset,
    methods: &[RbiMethod],
) -> Result<Vec<JackknifeEstimate>> {
    let mle = fit_mle(data)?;
    let present = patterns_present(data);
    let views = [data.arm_view(Arm::Reference), data.arm_view(Arm::Active)];
    let points = methods
        .iter()
        .map(|&m| condmean_point(data, &mle.reference, &mle.active, m, &present, None))
        .collect::<Result<Vec<_>>>()?;

    let n = data.patients().len();
    let mut loo = vec![Vec::with_capacity(n); methods.len()];
    let mut row_in_arm = [0usize; 2];
    for (i, r) in data.patients().iter().enumerate() {
        let a = r.arm().index();
        let row = row_in_arm[a];
        row_in_arm[a] += 1;
        let tag = |e: Error| Error::LeaveOneOut {
            id: r.id().to_string(),
            source: Box::new(e),
        };
        let (refit, _) = fit_arm(&views[a], Some(row)).map_err(tag)?;
        let (reference, active) = match r.arm() {
            Arm::Reference => (&refit, &mle.active),
            Arm::Active => (&mle.reference, &refit),
        };
        for (k, &m) in methods.iter().enumerate() {
            loo[k].push(condmean_point(data, reference, active, m, &present, Some(i)).map_err(tag)?);
        }
    }
    Ok(points
        .into_iter()
        .zip(&loo)
        .map(|(p, l)| JackknifeEstimate::new(p, l))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbi::{analyze_ancova, conditional_mean_impute};
    use crate::sim::tests_support::small_trial;

    #[test]
    fn se_of_sample_mean_matches_classical_formula() {
        // leave-one-out means of x: jackknife SE equals s / sqrt(n)
        let x = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let n = x.len() as f64;
        let total: f64 = x.iter().sum();
        let loo: Vec<f64> = x.iter().map(|v| (total - v) / (n - 1.0)).collect();
        let mean = total / n;
        let s2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((jackknife_se(&loo) - (s2 / n).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fast_path_matches_generic_jackknife() {
        let data = small_trial(40, 7);
        for method in RbiMethod::ALL {
            let fast = condmean_jackknife(&data, &[method]).unwrap()[0];
            let slow = jackknife(&data, |d| {
                let mle = fit_mle(d)?;
                analyze_ancova(&conditional_mean_impute(d, &mle, method)?).map(|a| a.point)
            })
            .unwrap();
            assert!((fast.point - slow.point).abs() < 1e-10, "{method}");
            assert!((fast.se - slow.se).abs() < 1e-10, "{method}");
        }
    }

    #[test]
    fn failing_refit_names_the_patient() {
        let err = jackknife(&small_trial(20, 3), |d| {
            if d.patients().len() < 40 && d.patients()[0].id() != "r0" {
                Err(Error::Estimation { visit: 1, reason: "forced".into() })
            } else {
                Ok(0.0)
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::LeaveOneOut { ref id, .. } if id == "r0"), "{err}");
    }
}
