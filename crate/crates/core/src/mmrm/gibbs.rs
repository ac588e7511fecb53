//! Data-augmentation Gibbs sampler for the per-arm normal model.
//!
//! Each iteration imputes the missing tail of every incomplete patient from its
//! conditional normal law (MAR), then draws `Sigma | Y ~ IW(nu0 + n - 1, Psi0 + S)`
//! followed by `mu | Sigma, Y ~ N(ybar, Sigma / n)`. The mean has a flat prior; the
//! covariance prior is inverse-Wishart with `nu0 = p + df_offset` and scale chosen so
//! the prior mean is the completers' ML covariance.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Arm, ArmData, TrialDataset};
use crate::error::{Error, Result};
use crate::gaussian::{CholFactor, MvnParams};
use crate::mmrm::mle::fit_arm;
use crate::rng::{tagged_rng, StreamTag};

const DIVERGENCE_LIMIT: f64 = 1e6;
const DIAGNOSTIC_CHECKPOINTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsConfig {
    /// Total iterations including burn-in.
    pub n_total: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    pub iw_df_offset: f64,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_total: 5200,
            n_burn: 200,
            thin: 1,
            seed: 1,
            iw_df_offset: 2.0,
        }
    }
}

impl GibbsConfig {
    /// Configuration keeping exactly `kept` draws after the default burn-in.
    pub fn keeping(kept: usize, seed: u64) -> Self {
        let d = Self::default();
        Self {
            n_total: d.n_burn + kept,
            seed,
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_total <= self.n_burn {
            return Err(Error::InvalidParameter(format!(
                "n_total ({}) must exceed n_burn ({})",
                self.n_total, self.n_burn
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thin must be at least 1".into()));
        }
        if !(self.iw_df_offset > 1.0) {
            return Err(Error::InvalidParameter(format!(
                "iw_df_offset must exceed 1 so the prior mean exists, got {}",
                self.iw_df_offset
            )));
        }
        Ok(())
    }

    pub fn kept_draws(&self) -> usize {
        (self.n_total - self.n_burn) / self.thin
    }
}

/// One joint draw of both arms' parameters.
#[derive(Debug, Clone)]
pub struct ArmPairDraw {
    pub reference: MvnParams,
    pub active: MvnParams,
}

impl ArmPairDraw {
    pub fn arm(&self, arm: Arm) -> &MvnParams {
        match arm {
            Arm::Reference => &self.reference,
            Arm::Active => &self.active,
        }
    }
}

/// Running posterior means of `mu` at evenly spaced checkpoints of the kept chain.
#[derive(Debug, Clone, Default)]
pub struct ChainDiagnostics {
    pub checkpoints: Vec<usize>,
    /// `[arm][checkpoint]` running mean vectors.
    pub running_means: [Vec<Vec<f64>>; 2],
}

#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub draws: Vec<ArmPairDraw>,
    pub config: GibbsConfig,
    pub diagnostics: ChainDiagnostics,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Every `stride`-th draw, starting from the `stride`-th.
    pub fn thinned(&self, stride: usize) -> PosteriorDraws {
        let stride = stride.max(1);
        PosteriorDraws {
            draws: self
                .draws
                .iter()
                .skip(stride - 1)
                .step_by(stride)
                .cloned()
                .collect(),
            config: GibbsConfig {
                thin: self.config.thin * stride,
                ..self.config
            },
            diagnostics: self.diagnostics.clone(),
        }
    }

    /// Audit dump with columns `draw,arm,param,visit_i,visit_j,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["draw", "arm", "param", "visit_i", "visit_j", "value"])?;
        for (l, d) in self.draws.iter().enumerate() {
            for arm in Arm::BOTH {
                let p = d.arm(arm);
                for (i, m) in p.mean().iter().enumerate() {
                    w.write_record([
                        l.to_string(),
                        arm.to_string(),
                        "mean".into(),
                        i.to_string(),
                        String::new(),
                        format!("{m}"),
                    ])?;
                }
                for i in 0..p.dim() {
                    for j in i..p.dim() {
                        w.write_record([
                            l.to_string(),
                            arm.to_string(),
                            "cov".into(),
                            i.to_string(),
                            j.to_string(),
                            format!("{}", p.cov()[(i, j)]),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws from the joint posterior of both arms' `(mu, Sigma)`; each arm runs its own
/// chain on its own stream, so results depend only on `config`.
pub fn gibbs_sample(data: &TrialDataset, config: &GibbsConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let reference = ArmChain::new(&data.arm_view(Arm::Reference), config)?
        .run(&mut tagged_rng(config.seed, 0, StreamTag::GibbsReference))?;
    let active = ArmChain::new(&data.arm_view(Arm::Active), config)?
        .run(&mut tagged_rng(config.seed, 0, StreamTag::GibbsActive))?;
    let draws = reference
        .draws
        .into_iter()
        .zip(active.draws)
        .map(|(r, a)| ArmPairDraw {
            reference: r,
            active: a,
        })
        .collect();
    Ok(PosteriorDraws {
        draws,
        config: *config,
        diagnostics: ChainDiagnostics {
            checkpoints: reference.checkpoints,
            running_means: [reference.running_means, active.running_means],
        },
    })
}

struct ArmRun {
    draws: Vec<MvnParams>,
    checkpoints: Vec<usize>,
    running_means: Vec<Vec<f64>>,
}

/// Sampler state for one arm. Completed data are stored row-major.
struct ArmChain<'a> {
    config: &'a GibbsConfig,
    n: usize,
    p: usize,
    completed: Vec<f64>,
    /// Incomplete rows grouped by last observed visit.
    patterns: Vec<(usize, Vec<usize>)>,
    /// Centering shift for the sufficient statistics.
    shift: Vec<f64>,
    /// Sums over complete rows (centered), fixed for the whole chain.
    fixed_sum: Vec<f64>,
    fixed_cross: DMatrix<f64>,
    prior_scale: DMatrix<f64>,
    post_df: f64,
    chi: Vec<ChiSquared<f64>>,
    current: MvnParams,
}

impl<'a> ArmChain<'a> {
    fn new(arm: &ArmData, config: &'a GibbsConfig) -> Result<Self> {
        let (n, p) = (arm.n(), arm.p());
        let (mle, _) = fit_arm(arm, None)?;
        let mut completed = vec![0.0; n * p];
        for i in 0..n {
            for j in 0..p {
                completed[i * p + j] = arm.values[(i, j)];
            }
        }
        let mut patterns: Vec<(usize, Vec<usize>)> = Vec::new();
        for d in 0..p - 1 {
            let rows: Vec<usize> = (0..n).filter(|&i| arm.last_observed[i] == d).collect();
            if !rows.is_empty() {
                patterns.push((d, rows));
            }
        }
        let shift: Vec<f64> = mle.mean().iter().copied().collect();
        let mut fixed_sum = vec![0.0; p];
        let mut fixed_cross = DMatrix::zeros(p, p);
        let mut n_complete = 0usize;
        for i in (0..n).filter(|&i| arm.last_observed[i] == p - 1) {
            n_complete += 1;
            accumulate(&completed[i * p..(i + 1) * p], &shift, &mut fixed_sum, &mut fixed_cross);
        }

        let prior_df = p as f64 + config.iw_df_offset;
        let centre = completers_cov(&fixed_sum, &fixed_cross, n_complete, p)
            .unwrap_or_else(|| mle.cov().clone());
        let prior_scale = centre * (prior_df - p as f64 - 1.0);
        let post_df = prior_df + n as f64 - 1.0;
        let chi = (0..p)
            .map(|i| ChiSquared::new(post_df - i as f64))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidParameter(format!("inverse-Wishart degrees of freedom: {e}")))?;
        Ok(Self {
            config,
            n,
            p,
            completed,
            patterns,
            shift,
            fixed_sum,
            fixed_cross,
            prior_scale,
            post_df,
            chi,
            current: mle,
        })
    }

    fn run<R: Rng + ?Sized>(mut self, rng: &mut R) -> Result<ArmRun> {
        let kept = self.config.kept_draws();
        let mut draws = Vec::with_capacity(kept);
        let every = (kept / DIAGNOSTIC_CHECKPOINTS).max(1);
        let mut checkpoints = Vec::new();
        let mut running_means = Vec::new();
        let mut acc = vec![0.0; self.p];
        for it in 0..self.config.n_total {
            self.augment(rng)?;
            self.draw_parameters(rng, it)?;
            if it >= self.config.n_burn && (it - self.config.n_burn + 1).is_multiple_of(self.config.thin) {
                draws.push(self.current.clone());
                for (a, m) in acc.iter_mut().zip(self.current.mean().iter()) {
                    *a += m;
                }
                if draws.len() % every == 0 || draws.len() == kept {
                    let k = draws.len() as f64;
                    checkpoints.push(draws.len());
                    running_means.push(acc.iter().map(|a| a / k).collect());
                }
                if draws.len() == kept {
                    break;
                }
            }
        }
        Ok(ArmRun {
            draws,
            checkpoints,
            running_means,
        })
    }

    /// Redraws every missing tail from its conditional law under the current parameters.
    fn augment<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let p = self.p;
        for (d, rows) in &self.patterns {
            let law = self.current.prefix_conditional(*d)?;
            let b = law.regression();
            let mu_u = law.base_mean();
            let mu_o = &self.current.mean().as_slice()[..=*d];
            let chol = CholFactor::new(law.cov(), "conditional covariance in augmentation")?;
            let l = chol.l();
            let m = p - d - 1;
            let mut z = vec![0.0; m];
            for &i in rows {
                let row = &mut self.completed[i * p..(i + 1) * p];
                for zk in z.iter_mut() {
                    *zk = rng.sample(StandardNormal);
                }
                for r in 0..m {
                    let mut v = mu_u[r];
                    for c in 0..=*d {
                        v += b[(r, c)] * (row[c] - mu_o[c]);
                    }
                    for k in 0..=r {
                        v += l[(r, k)] * z[k];
                    }
                    row[d + 1 + r] = v;
                }
            }
        }
        Ok(())
    }

    fn draw_parameters<R: Rng + ?Sized>(&mut self, rng: &mut R, iteration: usize) -> Result<()> {
        let (n, p) = (self.n, self.p);
        let mut sum = self.fixed_sum.clone();
        let mut cross = self.fixed_cross.clone();
        for (_, rows) in &self.patterns {
            for &i in rows {
                accumulate(&self.completed[i * p..(i + 1) * p], &self.shift, &mut sum, &mut cross);
            }
        }
        let nf = n as f64;
        let mean_c: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        // Scatter about the completed-data mean.
        let mut scatter = cross;
        for a in 0..p {
            for b in 0..=a {
                let v = scatter[(a, b)] - nf * mean_c[a] * mean_c[b];
                scatter[(a, b)] = v;
                scatter[(b, a)] = v;
            }
        }
        let scale = &self.prior_scale + scatter;
        let sigma = self.draw_inverse_wishart(&scale, rng)?;
        let chol = CholFactor::new(&sigma, "posterior covariance draw")?;
        let z = crate::gaussian::standard_normal_vec(p, rng);
        let noise = chol.scale(&z) / nf.sqrt();
        let mu = DVector::from_iterator(p, (0..p).map(|j| mean_c[j] + self.shift[j] + noise[j]));
        if let Some(bad) = mu.iter().find(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                iteration,
                reason: format!("mean component {bad:e} beyond {DIVERGENCE_LIMIT:e}"),
            });
        }
        self.current = MvnParams::from_trusted(mu, sigma);
        Ok(())
    }

    /// Bartlett construction: if `A A^T ~ W(nu, I)` then `C (A A^T)^{-1} C^T ~ IW(nu, C C^T)`.
    fn draw_inverse_wishart<R: Rng + ?Sized>(
        &self,
        scale: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        let p = self.p;
        let c = CholFactor::new(scale, "inverse-Wishart scale")?;
        let mut a = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            a[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                a[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let a_inv = a
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .ok_or_else(|| Error::NotPositiveDefinite {
                context: "Bartlett factor".into(),
                pivot: 0.0,
                threshold: 0.0,
            })?;
        let t = c.l() * a_inv.transpose();
        let mut sigma = &t * t.transpose();
        for i in 0..p {
            for j in 0..i {
                let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
                sigma[(i, j)] = v;
                sigma[(j, i)] = v;
            }
        }
        debug_assert!(self.post_df > p as f64 - 1.0);
        Ok(sigma)
    }
}

fn accumulate(row: &[f64], shift: &[f64], sum: &mut [f64], cross: &mut DMatrix<f64>) {
    let p = row.len();
    for a in 0..p {
        let da = row[a] - shift[a];
        sum[a] += da;
        for b in 0..=a {
            let v = da * (row[b] - shift[b]);
            cross[(a, b)] += v;
            if a != b {
                cross[(b, a)] += v;
            }
        }
    }
}

/// ML covariance of the complete rows, if there are enough of them to be non-singular.
fn completers_cov(sum: &[f64], cross: &DMatrix<f64>, n: usize, p: usize) -> Option<DMatrix<f64>> {
    if n <= p {
        return None;
    }
    let nf = n as f64;
    let cov = DMatrix::from_fn(p, p, |a, b| cross[(a, b)] / nf - sum[a] * sum[b] / (nf * nf));
    CholFactor::new(&cov, "completers covariance").ok().map(|_| cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PatientRecord;
    use crate::gaussian::{sample_mvn, spatial_power_cov, VisitSchedule};
    use crate::rng::stream_rng;

    fn dataset(n: usize, seed: u64, dropout: bool) -> TrialDataset {
        let s = VisitSchedule::parse("0,4,8,12").unwrap();
        let cov = spatial_power_cov(&[1.0, 1.1, 1.2, 1.3], &s, 0.7, 4.0).unwrap();
        let p = MvnParams::from_slices(&[5.0, 4.5, 4.0, 3.5], cov).unwrap();
        let mut rng = stream_rng(seed, 0);
        let mut patients = Vec::new();
        for arm in Arm::BOTH {
            for (i, y) in sample_mvn(&p, &mut rng, n).unwrap().into_iter().enumerate() {
                let d = if dropout { [1, 2, 3, 3][i % 4] } else { 3 };
                let ys = y.iter().enumerate().map(|(j, v)| (j <= d).then_some(*v)).collect();
                patients.push(PatientRecord::new(format!("{arm}{i}"), arm, ys).unwrap());
            }
        }
        TrialDataset::new(s, patients).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(GibbsConfig { n_total: 10, n_burn: 10, ..Default::default() }.validate().is_err());
        assert!(GibbsConfig { thin: 0, ..Default::default() }.validate().is_err());
        assert!(GibbsConfig { iw_df_offset: 1.0, ..Default::default() }.validate().is_err());
        let c = GibbsConfig { n_total: 5200, n_burn: 200, thin: 50, ..Default::default() };
        assert_eq!(c.kept_draws(), 100);
    }

    #[test]
    fn kept_draw_count_and_determinism() {
        let data = dataset(30, 1, true);
        let cfg = GibbsConfig { n_total: 130, n_burn: 30, thin: 7, seed: 9, iw_df_offset: 2.0 };
        let a = gibbs_sample(&data, &cfg).unwrap();
        let b = gibbs_sample(&data, &cfg).unwrap();
        assert_eq!(a.len(), 14);
        for (x, y) in a.draws.iter().zip(&b.draws) {
            assert_eq!(x.active.mean(), y.active.mean());
            assert_eq!(x.reference.cov(), y.reference.cov());
        }
        for d in &a.draws {
            assert!(d.active.chol().is_ok() && d.reference.chol().is_ok());
        }
        assert_eq!(a.diagnostics.checkpoints.last(), Some(&14));
    }

    #[test]
    fn complete_data_posterior_matches_conjugate_theory() {
        let data = dataset(400, 2, false);
        let cfg = GibbsConfig::keeping(4000, 3);
        let post = gibbs_sample(&data, &cfg).unwrap();
        let view = data.arm_view(Arm::Active);
        let n = view.n() as f64;
        let l = post.len() as f64;
        for j in 0..4 {
            let col = view.values.column(j);
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let draws: Vec<f64> = post.draws.iter().map(|d| d.active.mean()[j]).collect();
            let pm = draws.iter().sum::<f64>() / l;
            let psd = (draws.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / (l - 1.0)).sqrt();
            assert!((pm - mean).abs() < 3.0 * psd, "visit {j}: {pm} vs {mean}");
            let ratio = psd / (sd / n.sqrt());
            assert!((ratio - 1.0).abs() < 0.15, "visit {j}: sd ratio {ratio}");
        }
    }

    #[test]
    fn posterior_sd_shrinks_with_sample_size() {
        let cfg = GibbsConfig::keeping(3000, 4);
        let sd_of = |n: usize| {
            let post = gibbs_sample(&dataset(n, 5, true), &cfg).unwrap();
            let xs: Vec<f64> = post.draws.iter().map(|d| d.reference.mean()[3]).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            (xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
        };
        let ratio = sd_of(400) / sd_of(200);
        assert!((ratio - 1.0 / 2f64.sqrt()).abs() < 0.15 / 2f64.sqrt(), "ratio {ratio}");
    }

    #[test]
    fn thinning_and_dump() {
        let data = dataset(20, 6, true);
        let cfg = GibbsConfig { n_total: 60, n_burn: 10, thin: 1, seed: 1, iw_df_offset: 2.0 };
        let post = gibbs_sample(&data, &cfg).unwrap();
        let t = post.thinned(10);
        assert_eq!(t.len(), 5);
        assert_eq!(t.draws[0].active.mean(), post.draws[9].active.mean());
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("draw,arm,param,visit_i,visit_j,value"));
        // 5 draws x 2 arms x (4 means + 10 covariance entries) + header
        assert_eq!(text.lines().count(), 1 + 5 * 2 * 14);
    }
}
