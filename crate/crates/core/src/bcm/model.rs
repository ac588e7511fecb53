use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::prior::{IntervalKind, K0Prior};
use crate::data::IcePatternCounts;
use crate::error::{Error, Result};
use crate::gaussian::VisitSchedule;
use crate::mmrm::ArmPairDraw;
use crate::rbi::Z_975;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    /// A fixed fraction `k0` of the visit-D effect is kept at every later visit.
    ConstantK0,
    /// The kept fraction decays as `k1^(weeks since D)`.
    DecayK1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaintainedEffectModel {
    pub kind: EffectKind,
    pub prior: K0Prior,
}

impl MaintainedEffectModel {
    pub fn constant(prior: K0Prior) -> Self {
        Self {
            kind: EffectKind::ConstantK0,
            prior,
        }
    }

    pub fn decay(prior: K0Prior) -> Result<Self> {
        if let K0Prior::Point(k1) = prior {
            check_k1(k1)?;
        }
        Ok(Self {
            kind: EffectKind::DecayK1,
            prior,
        })
    }

    /// Weight on the visit-`d` effect at visit `u > d`.
    pub fn weight(&self, k: f64, schedule: &VisitSchedule, d: usize, u: usize) -> f64 {
        match self.kind {
            EffectKind::ConstantK0 => k,
            EffectKind::DecayK1 => k.powf(schedule.time(u) - schedule.time(d)),
        }
    }
}

fn check_k1(k1: f64) -> Result<()> {
    if k1 > 0.0 && k1 < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("decay parameter k1 = {k1} outside (0, 1)")))
    }
}

fn check_index(j: usize, j_max: usize) -> Result<()> {
    if j < j_max {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("visit {j} has no later visits (j_max = {j_max})")))
    }
}

/// `k0 * C_j`: zero except the last column, which is `k0`.
pub fn carry_forward_k(j: usize, j_max: usize, k0: f64) -> Result<DMatrix<f64>> {
    check_index(j, j_max)?;
    let mut k = DMatrix::zeros(j_max - j, j + 1);
    k.column_mut(j).fill(k0);
    Ok(k)
}

/// Decaying carry-forward: row `u` of the last column is `k1^(v_u - v_j)`.
pub fn decay_k(j: usize, j_max: usize, k1: f64, schedule: &VisitSchedule) -> Result<DMatrix<f64>> {
    check_index(j, j_max)?;
    check_k1(k1)?;
    let mut k = DMatrix::zeros(j_max - j, j + 1);
    for (r, u) in (j + 1..=j_max).enumerate() {
        k[(r, j)] = k1.powf(schedule.time(u) - schedule.time(j));
    }
    Ok(k)
}

/// Dirichlet posterior for the active-arm pattern probabilities over `d_min..=j_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiPosterior {
    pub d_min: usize,
    /// Concentrations for patterns `d_min..=j_max`.
    pub alpha: Vec<f64>,
}

impl PiPosterior {
    /// Flat prior plus counts. `d_min` defaults to the earliest observed pattern.
    pub fn new(counts: &IcePatternCounts, d_min: Option<usize>) -> Result<Self> {
        let p = counts.counts.len();
        let d_min = d_min.or_else(|| counts.earliest_observed()).unwrap_or(p - 1);
        if d_min >= p {
            return Err(Error::InvalidParameter(format!("pattern support start {d_min} beyond final visit")));
        }
        if let Some(j) = (0..d_min).find(|&j| counts.counts[j] > 0) {
            return Err(Error::InvalidInput(format!(
                "{} patients with pattern {j} lie outside the support starting at {d_min}",
                counts.counts[j]
            )));
        }
        Ok(Self {
            d_min,
            alpha: counts.counts[d_min..].iter().map(|&c| c as f64 + 1.0).collect(),
        })
    }

    /// One probability vector over all visits `0..=j_max`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.d_min + self.alpha.len()];
        if self.alpha.len() == 1 {
            out[self.d_min] = 1.0;
            return out;
        }
        let mut total = 0.0;
        for (o, &a) in out[self.d_min..].iter_mut().zip(&self.alpha) {
            *o = Gamma::new(a, 1.0).expect("positive concentration").sample(rng);
            total += *o;
        }
        for o in out.iter_mut() {
            *o /= total;
        }
        out
    }
}

pub fn draw_pi<R: Rng + ?Sized>(
    counts: &IcePatternCounts,
    d_min: Option<usize>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let post = PiPosterior::new(counts, d_min)?;
    Ok((0..n).map(|_| post.draw(rng)).collect())
}

/// One posterior effect draw, `theta = a + k * b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectDraw {
    pub theta: f64,
    /// Completers' share of the effect.
    pub a: f64,
    /// Dropouts' visit-D effects, weighted by pattern probability (and decay, if any).
    pub b: f64,
    pub k: f64,
}

fn check_aligned(draws: &[ArmPairDraw], pi: &[Vec<f64>]) -> Result<()> {
    if draws.len() != pi.len() {
        return Err(Error::InvalidInput(format!(
            "{} parameter draws but {} pattern-probability draws",
            draws.len(),
            pi.len()
        )));
    }
    Ok(())
}

/// `(A, B)` of the constant model for each aligned (parameter, pi) draw.
pub fn decompose(draws: &[ArmPairDraw], pi: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    check_aligned(draws, pi)?;
    Ok(draws
        .iter()
        .zip(pi)
        .map(|(d, w)| {
            let (ma, mr) = (d.active.mean(), d.reference.mean());
            let jm = ma.len() - 1;
            let b = (0..jm).map(|j| w[j] * (ma[j] - mr[j])).sum::<f64>();
            (w[jm] * (ma[jm] - mr[jm]), b)
        })
        .collect())
}

/// Final-visit effect for each aligned triple of parameter, pattern-probability and
/// maintained-effect draws.
pub fn effect_draws(
    draws: &[ArmPairDraw],
    pi: &[Vec<f64>],
    k: &[f64],
    kind: EffectKind,
    schedule: &VisitSchedule,
) -> Result<Vec<EffectDraw>> {
    if k.len() != draws.len() {
        return Err(Error::InvalidInput(format!(
            "{} parameter draws but {} maintained-effect draws",
            draws.len(),
            k.len()
        )));
    }
    match kind {
        EffectKind::ConstantK0 => Ok(decompose(draws, pi)?
            .into_iter()
            .zip(k)
            .map(|((a, b), &k)| EffectDraw {
                theta: a + k * b,
                a,
                b,
                k,
            })
            .collect()),
        EffectKind::DecayK1 => {
            check_aligned(draws, pi)?;
            let jm = schedule.j_max();
            let end = schedule.time(jm);
            draws
                .iter()
                .zip(pi)
                .zip(k)
                .map(|((d, w), &k1)| {
                    check_k1(k1)?;
                    let (ma, mr) = (d.active.mean(), d.reference.mean());
                    let a = w[jm] * (ma[jm] - mr[jm]);
                    let b = (0..jm)
                        .map(|j| w[j] * k1.powf(end - schedule.time(j)) * (ma[j] - mr[j]))
                        .sum::<f64>();
                    Ok(EffectDraw {
                        theta: a + b,
                        a,
                        b,
                        k: 1.0,
                    })
                })
                .collect()
        }
    }
}

/// Posterior summary of effect draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateSummary {
    pub point: f64,
    pub sd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub interval_kind: IntervalKind,
    pub draws: usize,
}

pub const MIN_SUMMARY_DRAWS: usize = 100;

pub fn summarize(theta: &[f64], kind: IntervalKind) -> Result<EstimateSummary> {
    let n = theta.len();
    if n < MIN_SUMMARY_DRAWS {
        return Err(Error::InvalidInput(format!(
            "{n} draws; at least {MIN_SUMMARY_DRAWS} are needed for a summary"
        )));
    }
    let nf = n as f64;
    let point = theta.iter().sum::<f64>() / nf;
    let sd = (theta.iter().map(|t| (t - point).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let (ci_low, ci_high) = match kind {
        IntervalKind::NormalApprox => (point - Z_975 * sd, point + Z_975 * sd),
        IntervalKind::Percentile => {
            let mut sorted = theta.to_vec();
            sorted.sort_by(f64::total_cmp);
            // nearest-rank order statistics
            let rank = |q: f64| ((q * nf).ceil() as usize).clamp(1, n) - 1;
            (sorted[rank(0.025)], sorted[rank(0.975)])
        }
    };
    Ok(EstimateSummary {
        point,
        sd,
        ci_low,
        ci_high,
        interval_kind: kind,
        draws: n,
    })
}

/// Mean trajectory of an active-arm patient last on treatment at visit `d`.
pub fn implied_trajectory(
    active: &DVector<f64>,
    reference: &DVector<f64>,
    d: usize,
    model: &MaintainedEffectModel,
    k: f64,
    schedule: &VisitSchedule,
) -> Result<DVector<f64>> {
    let p = active.len();
    if reference.len() != p || schedule.len() != p {
        return Err(Error::InvalidInput("mean vectors and schedule differ in length".into()));
    }
    check_index(d, p - 1)?;
    if model.kind == EffectKind::DecayK1 {
        check_k1(k)?;
    }
    let delta = active[d] - reference[d];
    Ok(DVector::from_iterator(
        p,
        (0..p).map(|u| {
            if u <= d {
                active[u]
            } else {
                reference[u] + model.weight(k, schedule, d, u) * delta
            }
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Arm;
    use crate::gaussian::MvnParams;
    use crate::rng::stream_rng;
    use proptest::prelude::*;

    fn weeks() -> VisitSchedule {
        VisitSchedule::parse("0,4,8,14,20,26").unwrap()
    }

    fn counts(c: Vec<usize>) -> IcePatternCounts {
        IcePatternCounts { arm: Arm::Active, counts: c }
    }

    fn pair(ma: &[f64], mr: &[f64]) -> ArmPairDraw {
        let p = ma.len();
        ArmPairDraw {
            active: MvnParams::from_slices(ma, DMatrix::identity(p, p)).unwrap(),
            reference: MvnParams::from_slices(mr, DMatrix::identity(p, p)).unwrap(),
        }
    }

    #[test]
    fn carry_forward_structure() {
        let k = carry_forward_k(2, 5, 1.0).unwrap();
        assert_eq!(k.shape(), (3, 3));
        assert!(k.column(0).iter().chain(k.column(1).iter()).all(|&v| v == 0.0));
        assert!(k.column(2).iter().all(|&v| v == 1.0));
        assert!(carry_forward_k(2, 5, 0.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(carry_forward_k(5, 5, 1.0).is_err());
    }

    #[test]
    fn first_row_extracts_scaled_last_component() {
        let v = DVector::from_vec(vec![0.3, -1.2, 2.5]);
        let kv = carry_forward_k(2, 5, 0.7).unwrap() * &v;
        assert!((kv[0] - 0.7 * 2.5).abs() < 1e-15);
    }

    #[test]
    fn decay_entries() {
        let k = decay_k(2, 5, 0.5, &weeks()).unwrap();
        assert!((k[(2, 2)] - 0.5f64.powi(18)).abs() < 1e-18);
        assert!((k[(0, 2)] - 0.5f64.powi(6)).abs() < 1e-15);
        let near_one = decay_k(2, 5, 1.0 - 1e-12, &weeks()).unwrap();
        assert!((near_one - carry_forward_k(2, 5, 1.0).unwrap()).amax() < 1e-9);
        assert!(decay_k(2, 5, 1.0, &weeks()).is_err());
        let decay = MaintainedEffectModel::decay(K0Prior::Point(0.3)).unwrap();
        assert_eq!(decay.weight(0.3, &weeks(), 2, 2), 1.0);
    }

    #[test]
    fn dirichlet_posterior_mean() {
        let n = 40_000;
        let draws = draw_pi(&counts(vec![10, 5, 5]), Some(0), n, &mut stream_rng(1, 0)).unwrap();
        let alpha: [f64; 3] = [11.0, 6.0, 6.0];
        for j in 0..3 {
            let m = draws.iter().map(|d| d[j]).sum::<f64>() / n as f64;
            let target = alpha[j] / 23.0;
            let sd = (target * (1.0 - target) / 24.0).sqrt();
            assert!((m - target).abs() < 3.0 * sd / (n as f64).sqrt(), "{j}: {m}");
        }
        for d in &draws {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dirichlet_prior_only_and_single_category() {
        let n = 30_000;
        let draws = draw_pi(&counts(vec![0, 0, 0]), Some(0), n, &mut stream_rng(2, 0)).unwrap();
        let m0 = draws.iter().map(|d| d[0]).sum::<f64>() / n as f64;
        assert!((m0 - 1.0 / 3.0).abs() < 0.01);
        let one = draw_pi(&counts(vec![0, 0, 4]), None, 5, &mut stream_rng(3, 0)).unwrap();
        assert!(one.iter().all(|d| d == &vec![0.0, 0.0, 1.0]));
    }

    #[test]
    fn support_excludes_observed_pattern() {
        assert!(PiPosterior::new(&counts(vec![1, 2, 3]), Some(1)).is_err());
        let post = PiPosterior::new(&counts(vec![0, 2, 3]), None).unwrap();
        assert_eq!(post.d_min, 1);
        assert_eq!(post.alpha, vec![3.0, 4.0]);
    }

    #[test]
    fn no_ices_ignores_k0() {
        let d = vec![pair(&[1.0, 2.0, 3.0], &[1.0, 2.5, 4.0]); 3];
        let pi = vec![vec![0.0, 0.0, 1.0]; 3];
        let out = effect_draws(&d, &pi, &[0.0, 1.0, 5.0], EffectKind::ConstantK0, &VisitSchedule::parse("0,1,2").unwrap()).unwrap();
        assert!(out.iter().all(|e| (e.theta + 1.0).abs() < 1e-15));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let d = vec![pair(&[1.0, 2.0], &[1.0, 2.0]); 3];
        let s = VisitSchedule::parse("0,1").unwrap();
        assert!(effect_draws(&d, &vec![vec![0.0, 1.0]; 2], &[0.0; 3], EffectKind::ConstantK0, &s).is_err());
        assert!(effect_draws(&d, &vec![vec![0.0, 1.0]; 3], &[0.0; 2], EffectKind::DecayK1, &s).is_err());
    }

    #[test]
    fn decay_folds_weights_into_b() {
        let s = weeks();
        let d = vec![pair(&[0.0, 0.0, -1.0, -1.0, -1.0, -1.0], &[0.0; 6])];
        let pi = vec![vec![0.0, 0.0, 0.5, 0.0, 0.0, 0.5]];
        let e = effect_draws(&d, &pi, &[0.5], EffectKind::DecayK1, &s).unwrap()[0];
        assert_eq!(e.k, 1.0);
        assert!((e.theta - (-0.5 - 0.5 * 0.5f64.powi(18))).abs() < 1e-15);
    }

    #[test]
    fn constant_summary() {
        let s = summarize(&[2.5; 200], IntervalKind::Percentile).unwrap();
        assert_eq!((s.point, s.sd, s.ci_low, s.ci_high), (2.5, 0.0, 2.5, 2.5));
        assert!(summarize(&[1.0; 99], IntervalKind::NormalApprox).is_err());
    }

    #[test]
    fn percentile_matches_normal_interval_on_normal_draws() {
        use rand_distr::StandardNormal;
        let n = 100_000;
        let mut rng = stream_rng(9, 0);
        let x: Vec<f64> = (0..n).map(|_| 1.0 + 2.0 * rand::Rng::sample::<f64, _>(&mut rng, StandardNormal)).collect();
        let pct = summarize(&x, IntervalKind::Percentile).unwrap();
        let nor = summarize(&x, IntervalKind::NormalApprox).unwrap();
        // SE of the 2.5% quantile: sqrt(p(1-p)/n) / phi(z) scaled by sd 2
        let phi = (-0.5 * Z_975 * Z_975).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let qse = 2.0 * (0.025f64 * 0.975 / n as f64).sqrt() / phi;
        assert!((pct.ci_low - nor.ci_low).abs() < 2.0 * qse);
        assert!((pct.ci_high - nor.ci_high).abs() < 2.0 * qse);
    }

    #[test]
    fn trajectories() {
        let s = weeks();
        let ma = DVector::from_vec(vec![7.92, 7.55, 7.20, 7.10, 7.05, 7.05]);
        let mr = DVector::from_vec(vec![7.92, 7.82, 7.80, 7.80, 7.78, 7.78]);
        let c = |k| MaintainedEffectModel::constant(K0Prior::Point(k));
        let j2r = implied_trajectory(&ma, &mr, 2, &c(0.0), 0.0, &s).unwrap();
        assert_eq!(j2r.as_slice(), &[7.92, 7.55, 7.20, 7.80, 7.78, 7.78]);
        let cir = implied_trajectory(&ma, &mr, 2, &c(1.0), 1.0, &s).unwrap();
        for u in 3..6 {
            assert!((cir[u] - (mr[u] - 0.6)).abs() < 1e-12);
        }
        let decay = MaintainedEffectModel::decay(K0Prior::Point(0.5)).unwrap();
        let t = implied_trajectory(&ma, &mr, 2, &decay, 0.5, &s).unwrap();
        assert!((t[5] - mr[5]).abs() < 1e-5);
        assert!((t[3] - mr[3]).abs() > (t[5] - mr[5]).abs());
        let same = implied_trajectory(&mr, &mr, 2, &decay, 0.5, &s).unwrap();
        assert_eq!(same, mr);
    }

    proptest! {
        #[test]
        fn theta_is_affine_in_k(
            ma in proptest::collection::vec(-3.0f64..3.0, 4),
            mr in proptest::collection::vec(-3.0f64..3.0, 4),
            w in proptest::collection::vec(0.01f64..1.0, 4),
            k in -2.0f64..2.0,
        ) {
            let total: f64 = w.iter().sum();
            let pi: Vec<f64> = w.iter().map(|x| x / total).collect();
            let s = VisitSchedule::parse("0,1,2,3").unwrap();
            let e = effect_draws(&[pair(&ma, &mr)], &[pi.clone()], &[k], EffectKind::ConstantK0, &s).unwrap()[0];
            // direct evaluation with the carry-forward matrices
            let mut direct = pi[3] * (ma[3] - mr[3]);
            for j in 0..3 {
                let diff = DVector::from_iterator(j + 1, (0..=j).map(|i| ma[i] - mr[i]));
                direct += pi[j] * (carry_forward_k(j, 3, k).unwrap() * diff)[0];
            }
            prop_assert!((e.theta - direct).abs() <= 1e-12 * (1.0 + direct.abs()));
            prop_assert!((e.theta - (e.a + e.k * e.b)).abs() <= 1e-12 * (1.0 + e.theta.abs()));
        }
    }
}
