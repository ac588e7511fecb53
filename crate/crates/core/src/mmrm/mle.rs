//! Closed-form maximum likelihood under monotone missingness.
//!
//! The joint normal likelihood of monotone data factorizes into the marginal of
//! visit 0 and a sequence of regressions of visit `j` on visits `0..j`, each fitted
//! on the patients still observed at `j`. The factors have distinct parameters, so
//! maximizing each by ordinary least squares and recomposing gives the exact MLE.

use nalgebra::{DMatrix, DVector};

use crate::data::{Arm, ArmData, TrialDataset};
use crate::error::{Error, Result};
use crate::gaussian::{CholFactor, MvnParams};

/// Per-arm point estimates.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub reference: MvnParams,
    pub active: MvnParams,
    pub log_likelihood: f64,
    /// Patients used per arm, indexed by `Arm::index`.
    pub n_used: [usize; 2],
}

impl MleFit {
    pub fn arm(&self, arm: Arm) -> &MvnParams {
        match arm {
            Arm::Reference => &self.reference,
            Arm::Active => &self.active,
        }
    }
}

pub fn fit_mle(data: &TrialDataset) -> Result<MleFit> {
    let (reference, ll_r) = fit_arm(&data.arm_view(Arm::Reference), None)?;
    let (active, ll_a) = fit_arm(&data.arm_view(Arm::Active), None)?;
    Ok(MleFit {
        reference,
        active,
        log_likelihood: ll_r + ll_a,
        n_used: [data.arm_size(Arm::Reference), data.arm_size(Arm::Active)],
    })
}

pub fn fit_monotone_mle(data: &TrialDataset, arm: Arm) -> Result<MvnParams> {
    fit_arm(&data.arm_view(arm), None).map(|(p, _)| p)
}

/// Fits one arm, optionally leaving out row `skip`. Returns the estimate and its
/// maximized log-likelihood.
pub fn fit_arm(arm: &ArmData, skip: Option<usize>) -> Result<(MvnParams, f64)> {
    let p = arm.p();
    let rows: Vec<usize> = (0..arm.n()).filter(|&i| Some(i) != skip).collect();
    let y = &arm.values;

    let mut mu = DVector::<f64>::zeros(p);
    let mut sigma = DMatrix::<f64>::zeros(p, p);
    let mut loglik = 0.0;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();

    let n0 = rows.len();
    if n0 < 2 {
        return Err(Error::Estimation {
            visit: 0,
            reason: format!("{n0} observations at baseline"),
        });
    }
    let m0 = rows.iter().map(|&i| y[(i, 0)]).sum::<f64>() / n0 as f64;
    let v0 = rows.iter().map(|&i| (y[(i, 0)] - m0).powi(2)).sum::<f64>() / n0 as f64;
    if !(v0 > 0.0) {
        return Err(Error::Estimation {
            visit: 0,
            reason: "zero variance at baseline".into(),
        });
    }
    mu[0] = m0;
    sigma[(0, 0)] = v0;
    loglik += -0.5 * n0 as f64 * (ln2pi + v0.ln() + 1.0);

    for j in 1..p {
        let obs: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| arm.last_observed[i] >= j)
            .collect();
        let nj = obs.len();
        let k = j + 1; // intercept + j predecessors
        if nj < j + 2 {
            return Err(Error::Estimation {
                visit: j,
                reason: format!("{nj} observations for a regression on {j} earlier visits"),
            });
        }
        // Center predictors and response for conditioning.
        let mut xbar = vec![0.0; j];
        let mut ybar = 0.0;
        for &i in &obs {
            for (c, xb) in xbar.iter_mut().enumerate() {
                *xb += y[(i, c)];
            }
            ybar += y[(i, j)];
        }
        xbar.iter_mut().for_each(|v| *v /= nj as f64);
        ybar /= nj as f64;
        let mut sxx = DMatrix::<f64>::zeros(j, j);
        let mut sxy = DVector::<f64>::zeros(j);
        let mut syy = 0.0;
        for &i in &obs {
            let dy = y[(i, j)] - ybar;
            syy += dy * dy;
            for a in 0..j {
                let da = y[(i, a)] - xbar[a];
                sxy[a] += da * dy;
                for b in 0..=a {
                    sxx[(a, b)] += da * (y[(i, b)] - xbar[b]);
                }
            }
        }
        for a in 0..j {
            for b in 0..a {
                sxx[(b, a)] = sxx[(a, b)];
            }
        }
        let chol = CholFactor::new(&sxx, &format!("design at visit {j}")).map_err(|_| {
            Error::Estimation {
                visit: j,
                reason: format!("collinear predictors among {nj} observations ({k} parameters)"),
            }
        })?;
        let beta = chol.solve_vec(&sxy);
        let rss = syy - beta.dot(&sxy);
        let s2 = rss / nj as f64;
        if !(s2 > 0.0) {
            return Err(Error::Estimation {
                visit: j,
                reason: "non-positive residual variance".into(),
            });
        }
        let intercept = ybar - beta.iter().zip(&xbar).map(|(b, x)| b * x).sum::<f64>();
        loglik += -0.5 * nj as f64 * (ln2pi + s2.ln() + 1.0);

        let prev = sigma.view((0, 0), (j, j)).clone_owned();
        let cross = &prev * &beta; // Cov(Y_<j, Y_j)
        mu[j] = intercept + beta.dot(&mu.rows(0, j));
        for c in 0..j {
            sigma[(j, c)] = cross[c];
            sigma[(c, j)] = cross[c];
        }
        sigma[(j, j)] = s2 + beta.dot(&cross);
    }
    let params = MvnParams::new(mu, sigma).map_err(|e| Error::Estimation {
        visit: p - 1,
        reason: format!("recomposed covariance rejected: {e}"),
    })?;
    Ok((params, loglik))
}
