//! Multivariate-normal primitives: covariance construction, conditioning and sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative pivot threshold for the positive-definiteness gate.
pub const PD_PIVOT_TOL: f64 = 1e-10;

/// Ordered visit times in weeks; index 0 is baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct VisitSchedule {
    times: Vec<f64>,
}

impl VisitSchedule {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidParameter(
                "visit schedule needs at least baseline and one follow-up".into(),
            ));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("visit times must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(format!(
                "visit times must be strictly increasing, got {times:?}"
            )));
        }
        Ok(Self { times })
    }

    /// Parses a comma-separated list such as `0,4,8,14,20,26`.
    pub fn parse(spec: &str) -> Result<Self> {
        let times = spec
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidParameter(format!("bad visit time '{s}' in schedule '{spec}'"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of the final visit.
    pub fn j_max(&self) -> usize {
        self.times.len() - 1
    }

    pub fn time(&self, visit: usize) -> f64 {
        self.times[visit]
    }
}

impl TryFrom<Vec<f64>> for VisitSchedule {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<VisitSchedule> for Vec<f64> {
    fn from(s: VisitSchedule) -> Self {
        s.times
    }
}

/// Lower Cholesky factor that passed the positive-definiteness gate.
#[derive(Debug, Clone)]
pub struct CholFactor {
    l: DMatrix<f64>,
}

impl CholFactor {
    /// Factorizes `m`, failing when any pivot drops below `PD_PIVOT_TOL` times the
    /// largest diagonal entry.
    pub fn new(m: &DMatrix<f64>, context: &str) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "{context}: expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let max_diag = (0..n).map(|i| m[(i, i)]).fold(f64::NEG_INFINITY, f64::max);
        let threshold = PD_PIVOT_TOL * max_diag.max(0.0);
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut pivot = m[(j, j)];
            for k in 0..j {
                pivot -= l[(j, k)] * l[(j, k)];
            }
            if !(pivot > threshold) || max_diag <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    context: format!("{context}, pivot index {j}"),
                    pivot,
                    threshold,
                });
            }
            let d = pivot.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Solves `A x = b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("gated factor has a non-zero diagonal");
        self.l
            .tr_solve_lower_triangular(&y)
            .expect("gated factor has a non-zero diagonal")
    }

    /// Solves `A X = B`.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .l
            .solve_lower_triangular(b)
            .expect("gated factor has a non-zero diagonal");
        self.l
            .tr_solve_lower_triangular(&y)
            .expect("gated factor has a non-zero diagonal")
    }

    /// `A^{-1}` assembled from the factor.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve_mat(&DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L z` for a vector of standard normals `z`.
    pub fn scale(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for k in 0..=i {
                s += self.l[(i, k)] * z[k];
            }
            out[i] = s;
        }
        out
    }

    /// Draws `L z` with fresh standard normals.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = standard_normal_vec(self.dim(), rng);
        self.scale(&z)
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Per-visit mean vector and covariance matrix of a multivariate normal.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnParams {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl MvnParams {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::InvalidParameter(format!(
                "mean has dimension {p} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        let scale = cov.amax().max(1.0);
        for i in 0..p {
            for j in 0..i {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::InvalidParameter(format!(
                        "covariance not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        CholFactor::new(&cov, "MvnParams covariance")?;
        Ok(Self { mean, cov })
    }

    /// Skips validation; the caller has already gated `cov`.
    pub(crate) fn from_trusted(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    pub fn from_slices(mean: &[f64], cov: DMatrix<f64>) -> Result<Self> {
        Self::new(DVector::from_column_slice(mean), cov)
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn chol(&self) -> Result<CholFactor> {
        CholFactor::new(&self.cov, "MvnParams covariance")
    }

    /// Regression form of the law of the components after `last_observed`
    /// given components `0..=last_observed`.
    pub fn prefix_conditional(&self, last_observed: usize) -> Result<ConditionalLaw> {
        let obs: Vec<usize> = (0..=last_observed).collect();
        ConditionalLaw::new(self, &obs)
    }
}

/// `sds[i] * sds[j] * rho^(|t_i - t_j| / scale_weeks)`.
pub fn spatial_power_cov(
    sds: &[f64],
    schedule: &VisitSchedule,
    rho: f64,
    scale_weeks: f64,
) -> Result<DMatrix<f64>> {
    if sds.len() != schedule.len() {
        return Err(Error::InvalidParameter(format!(
            "{} standard deviations for {} visits",
            sds.len(),
            schedule.len()
        )));
    }
    if let Some(sd) = sds.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "standard deviations must be positive, got {sd}"
        )));
    }
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho must be in (0,1), got {rho}")));
    }
    if !(scale_weeks > 0.0 && scale_weeks.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scale must be positive, got {scale_weeks}"
        )));
    }
    let t = schedule.times();
    let p = sds.len();
    let cov = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            sds[i] * sds[i]
        } else {
            sds[i] * sds[j] * rho.powf((t[i] - t[j]).abs() / scale_weeks)
        }
    });
    CholFactor::new(&cov, "spatial power covariance")?;
    Ok(cov)
}

fn check_observed_idx(p: usize, observed_idx: &[usize]) -> Result<Vec<usize>> {
    if observed_idx.is_empty() || observed_idx.len() >= p {
        return Err(Error::InvalidInput(format!(
            "observed index set must be a non-empty proper subset of 0..{p}"
        )));
    }
    let mut seen = vec![false; p];
    for &i in observed_idx {
        if i >= p || seen[i] {
            return Err(Error::InvalidInput(format!(
                "observed index {i} out of range or repeated"
            )));
        }
        seen[i] = true;
    }
    Ok((0..p).filter(|i| !seen[*i]).collect())
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Law of the unobserved block given the observed block, in regression form:
/// `Y_u | y_o ~ N(mu_u + B (y_o - mu_o), S)`.
#[derive(Debug, Clone)]
pub struct ConditionalLaw {
    observed_idx: Vec<usize>,
    unobserved_idx: Vec<usize>,
    mu_o: DVector<f64>,
    mu_u: DVector<f64>,
    regression: DMatrix<f64>,
    cov: DMatrix<f64>,
    cov_chol: Option<CholFactor>,
}

impl ConditionalLaw {
    pub fn new(params: &MvnParams, observed_idx: &[usize]) -> Result<Self> {
        let unobserved_idx = check_observed_idx(params.dim(), observed_idx)?;
        let s = params.cov();
        let s_oo = submatrix(s, observed_idx, observed_idx);
        let s_ou = submatrix(s, observed_idx, &unobserved_idx);
        let s_uu = submatrix(s, &unobserved_idx, &unobserved_idx);
        let chol_oo = CholFactor::new(&s_oo, "observed block of conditioning").map_err(|e| {
            match e {
                Error::NotPositiveDefinite { pivot, threshold, .. } => {
                    let diag_max = s_oo.diagonal().max();
                    Error::NotPositiveDefinite {
                        context: format!(
                            "singular observed block in conditioning (pivot/max-diagonal ratio {:.3e})",
                            pivot / diag_max
                        ),
                        pivot,
                        threshold,
                    }
                }
                other => other,
            }
        })?;
        // B^T = S_oo^{-1} S_ou
        let regression = chol_oo.solve_mat(&s_ou).transpose();
        let mut cov = &s_uu - &regression * &s_ou;
        cov = (&cov + cov.transpose()) * 0.5;
        let cov_chol = CholFactor::new(&cov, "conditional covariance").ok();
        Ok(Self {
            mu_o: subvector(params.mean(), observed_idx),
            mu_u: subvector(params.mean(), &unobserved_idx),
            observed_idx: observed_idx.to_vec(),
            unobserved_idx,
            regression,
            cov,
            cov_chol,
        })
    }

    pub fn observed_idx(&self) -> &[usize] {
        &self.observed_idx
    }

    pub fn unobserved_idx(&self) -> &[usize] {
        &self.unobserved_idx
    }

    pub fn regression(&self) -> &DMatrix<f64> {
        &self.regression
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn base_mean(&self) -> &DVector<f64> {
        &self.mu_u
    }

    pub fn mean_at(&self, y_obs: &[f64]) -> DVector<f64> {
        let mut out = self.mu_u.clone();
        for (r, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for (c, y) in y_obs.iter().enumerate() {
                s += self.regression[(r, c)] * (y - self.mu_o[c]);
            }
            *o += s;
        }
        out
    }

    /// One draw of the unobserved block given `y_obs`.
    pub fn sample_at<R: Rng + ?Sized>(&self, y_obs: &[f64], rng: &mut R) -> Result<DVector<f64>> {
        let mean = self.mean_at(y_obs);
        match &self.cov_chol {
            Some(c) => Ok(mean + c.draw(rng)),
            None => {
                // Degenerate conditional law: only all-zero covariance is acceptable.
                if self.cov.amax() <= PD_PIVOT_TOL {
                    Ok(mean)
                } else {
                    Err(Error::NotPositiveDefinite {
                        context: "conditional covariance".into(),
                        pivot: f64::NAN,
                        threshold: PD_PIVOT_TOL,
                    })
                }
            }
        }
    }

    pub fn at(&self, y_obs: &[f64]) -> ConditionalMvn {
        ConditionalMvn {
            mean: self.mean_at(y_obs),
            cov: self.cov.clone(),
            regression: self.regression.clone(),
        }
    }
}

/// Conditional distribution of the unobserved components at given observed values.
#[derive(Debug, Clone)]
pub struct ConditionalMvn {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Coefficients of the unobserved block on the observed block.
    pub regression: DMatrix<f64>,
}

pub fn condition_mvn(
    params: &MvnParams,
    observed_idx: &[usize],
    observed_values: &[f64],
) -> Result<ConditionalMvn> {
    if observed_values.len() != observed_idx.len() {
        return Err(Error::InvalidInput(format!(
            "{} observed values for {} indices",
            observed_values.len(),
            observed_idx.len()
        )));
    }
    Ok(ConditionalLaw::new(params, observed_idx)?.at(observed_values))
}

/// `n` independent draws via the Cholesky factor of the covariance.
pub fn sample_mvn<R: Rng + ?Sized>(
    params: &MvnParams,
    rng: &mut R,
    n: usize,
) -> Result<Vec<DVector<f64>>> {
    let chol = params.chol()?;
    Ok((0..n).map(|_| params.mean() + chol.draw(rng)).collect())
}
