use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Arm, PatientRecord, TrialDataset};
use crate::error::{Error, Result};
use crate::gaussian::{ConditionalLaw, MvnParams};
use crate::mmrm::{ArmPairDraw, MleFit, PosteriorDraws};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RbiMethod {
    /// Jump to reference.
    J2R,
    /// Copy increments in reference.
    CIR,
}

impl RbiMethod {
    pub const ALL: [RbiMethod; 2] = [RbiMethod::J2R, RbiMethod::CIR];

    /// Maintained-effect parameter this method corresponds to in the causal model.
    pub fn equivalent_k0(self) -> f64 {
        match self {
            RbiMethod::J2R => 0.0,
            RbiMethod::CIR => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RbiMethod::J2R => "j2r",
            RbiMethod::CIR => "cir",
        }
    }
}

impl fmt::Display for RbiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RbiMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "j2r" => Ok(RbiMethod::J2R),
            "cir" => Ok(RbiMethod::CIR),
            other => Err(Error::InvalidParameter(format!(
                "unknown reference-based method '{other}' (expected j2r|cir)"
            ))),
        }
    }
}

/// Joint law of pre- and post-ICE outcomes for active-arm patients whose last
/// on-treatment visit is `pattern`.
#[derive(Debug, Clone)]
pub struct ImputationDistribution {
    pub pattern: usize,
    pub joint_mean: DVector<f64>,
    pub joint_cov: DMatrix<f64>,
}

impl ImputationDistribution {
    /// Regression form of the post-ICE block given the pre-ICE block.
    pub fn post_given_pre(&self) -> Result<ConditionalLaw> {
        let joint = MvnParams::from_trusted(self.joint_mean.clone(), self.joint_cov.clone());
        joint.prefix_conditional(self.pattern)
    }
}

/// Builds the reference-based joint law for pattern `d`. Returns `Ok(None)` when
/// `d` is the final visit and nothing needs imputing.
///
/// Means follow the active arm through `d`; afterwards J2R uses the reference means
/// and CIR the reference means shifted by the visit-`d` difference. The pre-ICE block
/// of the covariance is the active arm's; the post-ICE block given the pre-ICE block
/// follows the reference arm's conditional law.
pub fn build_imputation_distribution(
    method: RbiMethod,
    active: &MvnParams,
    reference: &MvnParams,
    d: usize,
) -> Result<Option<ImputationDistribution>> {
    let p = active.dim();
    if reference.dim() != p {
        return Err(Error::InvalidInput(format!(
            "arm dimensions differ: active {p}, reference {}",
            reference.dim()
        )));
    }
    if d + 1 > p {
        return Err(Error::InvalidInput(format!("pattern {d} beyond final visit {}", p - 1)));
    }
    if d + 1 == p {
        return Ok(None);
    }
    let mu_a = active.mean();
    let mu_r = reference.mean();
    let shift = match method {
        RbiMethod::J2R => 0.0,
        RbiMethod::CIR => mu_a[d] - mu_r[d],
    };
    let joint_mean = DVector::from_fn(p, |t, _| if t <= d { mu_a[t] } else { mu_r[t] + shift });

    let ref_law = reference.prefix_conditional(d)?;
    let beta = ref_law.regression(); // (p-d-1) x (d+1)
    let pre = active.cov().view((0, 0), (d + 1, d + 1)).clone_owned();
    let cross = beta * &pre; // Cov(post, pre)
    let post = ref_law.cov() + &cross * beta.transpose();
    let mut joint_cov = DMatrix::zeros(p, p);
    joint_cov.view_mut((0, 0), (d + 1, d + 1)).copy_from(&pre);
    joint_cov.view_mut((d + 1, 0), (p - d - 1, d + 1)).copy_from(&cross);
    joint_cov
        .view_mut((0, d + 1), (d + 1, p - d - 1))
        .copy_from(&cross.transpose());
    joint_cov.view_mut((d + 1, d + 1), (p - d - 1, p - d - 1)).copy_from(&post);
    let joint_cov = (&joint_cov + joint_cov.transpose()) * 0.5;
    Ok(Some(ImputationDistribution {
        pattern: d,
        joint_mean,
        joint_cov,
    }))
}

/// Post-ICE laws for every pattern of both arms under one parameter set. Reference-arm
/// dropouts get their own arm's MAR law.
pub(crate) struct PatternLaws {
    laws: [Vec<Option<ConditionalLaw>>; 2],
}

impl PatternLaws {
    pub(crate) fn new(
        method: RbiMethod,
        active: &MvnParams,
        reference: &MvnParams,
        needed: [&[bool]; 2],
    ) -> Result<Self> {
        let p = active.dim();
        let mut laws: [Vec<Option<ConditionalLaw>>; 2] = [Vec::new(), Vec::new()];
        for arm in Arm::BOTH {
            for d in 0..p {
                let law = if d + 1 == p || !needed[arm.index()][d] {
                    None
                } else {
                    Some(match arm {
                        Arm::Reference => reference.prefix_conditional(d)?,
                        Arm::Active => build_imputation_distribution(method, active, reference, d)?
                            .expect("d below final visit")
                            .post_given_pre()?,
                    })
                };
                laws[arm.index()].push(law);
            }
        }
        Ok(Self { laws })
    }

    pub(crate) fn get(&self, arm: Arm, d: usize) -> Option<&ConditionalLaw> {
        self.laws[arm.index()].get(d).and_then(Option::as_ref)
    }
}

pub(crate) fn patterns_present(data: &TrialDataset) -> [Vec<bool>; 2] {
    let p = data.n_visits();
    let mut present = [vec![false; p], vec![false; p]];
    for r in data.patients() {
        present[r.arm().index()][r.last_observed()] = true;
    }
    present
}

pub(crate) fn impute_one<R: Rng + ?Sized>(
    data: &TrialDataset,
    draw: &ArmPairDraw,
    method: RbiMethod,
    present: &[Vec<bool>; 2],
    rng: &mut R,
) -> Result<TrialDataset> {
    let laws = PatternLaws::new(method, &draw.active, &draw.reference, [&present[0], &present[1]])?;
    let mut patients = Vec::with_capacity(data.patients().len());
    for r in data.patients() {
        match laws.get(r.arm(), r.last_observed()) {
            None => patients.push(r.clone()),
            Some(law) => {
                let tail = law.sample_at(&r.observed(), rng)?;
                patients.push(r.completed_with(tail.as_slice()));
            }
        }
    }
    Ok(data.with_patients(patients))
}

/// `m` completed datasets; imputation `i` uses posterior draw `i`.
pub fn impute_multiple<R: Rng + ?Sized>(
    data: &TrialDataset,
    draws: &PosteriorDraws,
    method: RbiMethod,
    m: usize,
    rng: &mut R,
) -> Result<Vec<TrialDataset>> {
    if m > draws.len() {
        return Err(Error::InvalidInput(format!(
            "{m} imputations requested but only {} posterior draws available",
            draws.len()
        )));
    }
    let present = patterns_present(data);
    draws.draws[..m]
        .iter()
        .map(|d| impute_one(data, d, method, &present, rng))
        .collect()
}

/// Replaces each missing block by its conditional mean under the method's law at the MLE.
pub fn conditional_mean_impute(
    data: &TrialDataset,
    mle: &MleFit,
    method: RbiMethod,
) -> Result<TrialDataset> {
    let present = patterns_present(data);
    let laws = PatternLaws::new(method, &mle.active, &mle.reference, [&present[0], &present[1]])?;
    let patients: Vec<PatientRecord> = data
        .patients()
        .iter()
        .map(|r| match laws.get(r.arm(), r.last_observed()) {
            None => r.clone(),
            Some(law) => r.completed_with(law.mean_at(&r.observed()).as_slice()),
        })
        .collect();
    Ok(data.with_patients(patients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{spatial_power_cov, VisitSchedule};
    use crate::mmrm::fit_mle;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn table1() -> (MvnParams, MvnParams) {
        let s = VisitSchedule::parse("0,4,8,14,20,26").unwrap();
        let sds: Vec<f64> = [0.48, 0.8, 1.1, 1.4, 1.23, 1.48].iter().map(|v: &f64| v.sqrt()).collect();
        let cov = spatial_power_cov(&sds, &s, 0.8, 4.0).unwrap();
        (
            MvnParams::from_slices(&[7.92, 7.55, 7.20, 7.10, 7.05, 7.05], cov.clone()).unwrap(),
            MvnParams::from_slices(&[7.92, 7.82, 7.80, 7.80, 7.78, 7.78], cov).unwrap(),
        )
    }

    #[test]
    fn j2r_mean_switches_to_reference() {
        let (a, r) = table1();
        let dist = build_imputation_distribution(RbiMethod::J2R, &a, &r, 2).unwrap().unwrap();
        let want = [7.92, 7.55, 7.20, 7.80, 7.78, 7.78];
        for (x, y) in dist.joint_mean.iter().zip(want) {
            assert_relative_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn cir_mean_copies_reference_increments() {
        let (a, r) = table1();
        let dist = build_imputation_distribution(RbiMethod::CIR, &a, &r, 2).unwrap().unwrap();
        let want = [7.92, 7.55, 7.20, 7.20, 7.18, 7.18];
        for (x, y) in dist.joint_mean.iter().zip(want) {
            assert_relative_eq!(*x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn final_pattern_is_a_no_op() {
        let (a, r) = table1();
        assert!(build_imputation_distribution(RbiMethod::J2R, &a, &r, 5).unwrap().is_none());
        assert!(build_imputation_distribution(RbiMethod::J2R, &a, &r, 6).is_err());
    }

    #[test]
    fn identical_arms_reproduce_the_arm() {
        let (a, _) = table1();
        for m in RbiMethod::ALL {
            for d in 0..5 {
                let dist = build_imputation_distribution(m, &a, &a, d).unwrap().unwrap();
                assert!((&dist.joint_mean - a.mean()).amax() < 1e-12);
                assert!((&dist.joint_cov - a.cov()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn post_ice_conditional_law_is_the_reference_law() {
        let (a, r) = table1();
        let r2 = MvnParams::new(r.mean().clone(), r.cov() * 1.3).unwrap();
        let dist = build_imputation_distribution(RbiMethod::J2R, &a, &r2, 2).unwrap().unwrap();
        let joint = dist.post_given_pre().unwrap();
        let reference = r2.prefix_conditional(2).unwrap();
        assert!((joint.regression() - reference.regression()).amax() < 1e-10);
        assert!((joint.cov() - reference.cov()).amax() < 1e-10);
        // pre-ICE block is the active arm's
        let pre = dist.joint_cov.view((0, 0), (3, 3)).clone_owned();
        assert!((pre - a.cov().view((0, 0), (3, 3))).amax() < 1e-14);
    }

    fn small_data() -> TrialDataset {
        let csv = "id,arm,y0,y1,y2\n\
            a1,active,1.0,2.0,3.0\na2,active,1.5,2.2,\na3,active,0.5,1.1,1.9\na4,active,1.2,,\n\
            a5,active,0.9,1.7,2.5\n\
            r1,reference,1.0,1.1,1.3\nr2,reference,1.3,1.0,\nr3,reference,0.7,0.9,1.2\nr4,reference,1.1,1.4,1.2\n";
        crate::data::read_csv(csv.as_bytes(), &VisitSchedule::parse("0,1,2").unwrap()).unwrap()
    }

    fn diagonal_fit() -> MleFit {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        MleFit {
            reference: MvnParams::from_slices(&[1.0, 1.2, 1.4], cov.clone()).unwrap(),
            active: MvnParams::from_slices(&[1.0, 1.8, 2.6], cov).unwrap(),
            log_likelihood: 0.0,
            n_used: [4, 5],
        }
    }

    #[test]
    fn conditional_mean_with_diagonal_cov_fills_joint_mean() {
        let data = small_data();
        let fit = diagonal_fit();
        let done = conditional_mean_impute(&data, &fit, RbiMethod::J2R).unwrap();
        assert!(done.is_complete());
        let a4 = done.patients().iter().find(|p| p.id() == "a4").unwrap();
        assert_eq!(a4.outcomes(), &[Some(1.2), Some(1.2), Some(1.4)]);
        let a2 = done.patients().iter().find(|p| p.id() == "a2").unwrap();
        assert_eq!(a2.outcomes()[2], Some(1.4));
        // reference dropouts follow their own arm
        let r2 = done.patients().iter().find(|p| p.id() == "r2").unwrap();
        assert_eq!(r2.outcomes()[2], Some(1.4));
        // completers untouched
        assert_eq!(done.patients()[0], data.patients()[0]);
    }

    #[test]
    fn conditional_mean_is_idempotent() {
        let data = crate::sim::tests_support::small_trial(30, 11);
        let fit = fit_mle(&data).unwrap();
        let once = conditional_mean_impute(&data, &fit, RbiMethod::CIR).unwrap();
        let twice = conditional_mean_impute(&once, &fit, RbiMethod::CIR).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_cross_covariance_imputes_around_joint_mean() {
        let data = small_data();
        let fit = diagonal_fit();
        let draws = PosteriorDraws {
            draws: vec![ArmPairDraw { reference: fit.reference.clone(), active: fit.active.clone() }; 4000],
            config: Default::default(),
            diagnostics: Default::default(),
        };
        let imps = impute_multiple(&data, &draws, RbiMethod::J2R, 4000, &mut stream_rng(3, 3)).unwrap();
        let vals: Vec<f64> = imps
            .iter()
            .map(|d| d.patients().iter().find(|p| p.id() == "a4").unwrap().outcomes()[2].unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.4).abs() < 4.0 * (3.0f64 / 4000.0).sqrt());
        assert!(impute_multiple(&data, &draws, RbiMethod::J2R, 4001, &mut stream_rng(3, 3)).is_err());
        // completers come back unchanged
        assert_eq!(imps[0].patients()[0], data.patients()[0]);
    }

    proptest! {
        #[test]
        fn cir_minus_j2r_is_the_visit_d_difference(d in 0usize..5, bump in -1.0f64..1.0) {
            let (a, r) = table1();
            let a = MvnParams::new(a.mean().add_scalar(bump), a.cov().clone()).unwrap();
            let j = build_imputation_distribution(RbiMethod::J2R, &a, &r, d).unwrap().unwrap();
            let c = build_imputation_distribution(RbiMethod::CIR, &a, &r, d).unwrap().unwrap();
            let gap = a.mean()[d] - r.mean()[d];
            for t in 0..6 {
                let want = if t <= d { 0.0 } else { gap };
                prop_assert!((c.joint_mean[t] - j.joint_mean[t] - want).abs() < 1e-12);
                if t <= d {
                    prop_assert_eq!(j.joint_mean[t], a.mean()[t]);
                }
            }
            prop_assert!(crate::gaussian::CholFactor::new(&j.joint_cov, "t").is_ok());
        }
    }
}
