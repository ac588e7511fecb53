use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bcm::K0Prior;
use crate::data::Arm;
use crate::error::{Error, Result};
use crate::gaussian::{spatial_power_cov, MvnParams, VisitSchedule};
use crate::mmrm::GibbsConfig;
use crate::rbi::RbiMethod;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    Null,
    Alternative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IceLevel {
    Low,
    High,
}

/// Per-arm outcome distribution: spatial-power covariance shared by both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeModel {
    pub active_mean: Vec<f64>,
    pub reference_mean: Vec<f64>,
    pub variances: Vec<f64>,
    pub rho: f64,
    pub rho_scale_weeks: f64,
}

/// Logistic discontinuation coefficients of one arm, one entry per eligible visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmDropout {
    pub intercept: Vec<f64>,
    pub base: Vec<f64>,
    pub prev: Vec<f64>,
}

/// Sequential discontinuation hazard
/// `logit P(stop at visit j | on treatment) = b0 + b_base * y0 + b_prev * y_{j-1}`.
/// Stopping at visit `j` leaves visits `0..j` observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DropoutModel {
    pub visits: Vec<usize>,
    pub active: ArmDropout,
    pub reference: ArmDropout,
}

impl DropoutModel {
    pub fn arm(&self, arm: Arm) -> &ArmDropout {
        match arm {
            Arm::Active => &self.active,
            Arm::Reference => &self.reference,
        }
    }

    pub fn validate(&self, n_visits: usize) -> Result<()> {
        if self.visits.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("dropout visits must be strictly increasing".into()));
        }
        if let Some(v) = self.visits.iter().find(|&&v| v < 2 || v >= n_visits) {
            return Err(Error::Config(format!(
                "dropout visit {v} must lie in 2..{n_visits} (baseline and the first follow-up are always observed)"
            )));
        }
        for arm in Arm::BOTH {
            let c = self.arm(arm);
            for (name, v) in [("intercept", &c.intercept), ("base", &c.base), ("prev", &c.prev)] {
                if v.len() != self.visits.len() {
                    return Err(Error::Config(format!(
                        "{arm} dropout {name} has {} entries for {} visits",
                        v.len(),
                        self.visits.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Config(format!("{arm} dropout {name} is not finite")));
                }
            }
        }
        Ok(())
    }

    /// Same slopes with every intercept replaced.
    pub fn with_intercept(&self, b0: f64) -> Self {
        let mut out = self.clone();
        for c in [&mut out.active, &mut out.reference] {
            c.intercept.iter_mut().for_each(|x| *x = b0);
        }
        out
    }
}

/// One estimator in a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorSpec {
    /// Multiple imputation with Rubin's rules.
    Rubin(RbiMethod),
    /// Conditional-mean imputation with jackknife SE.
    CondMean(RbiMethod),
    Bcm(K0Prior),
}

impl EstimatorSpec {
    /// Maintained-effect value implied by a fixed-assumption estimator.
    pub fn fixed_k0(&self) -> Option<f64> {
        match self {
            EstimatorSpec::Rubin(m) | EstimatorSpec::CondMean(m) => Some(m.equivalent_k0()),
            EstimatorSpec::Bcm(K0Prior::Point(k)) => Some(*k),
            EstimatorSpec::Bcm(_) => None,
        }
    }
}

impl fmt::Display for EstimatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorSpec::Rubin(m) => write!(f, "rubin:{m}"),
            EstimatorSpec::CondMean(m) => write!(f, "condmean:{m}"),
            EstimatorSpec::Bcm(p) => write!(f, "bcm:{p}"),
        }
    }
}

impl FromStr for EstimatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidInput(format!("estimator '{s}': expected rubin:M, condmean:M or bcm:PRIOR")))?;
        match kind {
            "rubin" => Ok(EstimatorSpec::Rubin(rest.parse()?)),
            "condmean" => Ok(EstimatorSpec::CondMean(rest.parse()?)),
            "bcm" => Ok(EstimatorSpec::Bcm(rest.parse()?)),
            _ => Err(Error::InvalidInput(format!(
                "estimator '{s}': expected rubin:M, condmean:M or bcm:PRIOR"
            ))),
        }
    }
}

impl TryFrom<String> for EstimatorSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorSpec> for String {
    fn from(e: EstimatorSpec) -> String {
        e.to_string()
    }
}

fn default_imputations() -> usize {
    100
}

fn default_oracle_n_mc() -> usize {
    1_000_000
}

/// Everything needed to run (and replay) a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub hypothesis: Hypothesis,
    pub ice_level: IceLevel,
    pub n_per_arm: usize,
    pub reps: usize,
    pub seed: u64,
    #[serde(default = "default_imputations")]
    pub imputations: usize,
    #[serde(default = "default_oracle_n_mc")]
    pub oracle_n_mc: usize,
    /// First pattern in the Dirichlet support; defaults to the earliest observed.
    #[serde(default)]
    pub d_min: Option<usize>,
    pub schedule: VisitSchedule,
    pub estimators: Vec<EstimatorSpec>,
    pub outcome: OutcomeModel,
    pub dropout: DropoutModel,
    /// Sampler settings; the seed is replaced per replication.
    #[serde(default)]
    pub gibbs: GibbsConfig,
}

const BUNDLED: [(&str, &str); 4] = [
    ("high_alt", include_str!("../../scenarios/high_alt.toml")),
    ("high_null", include_str!("../../scenarios/high_null.toml")),
    ("low_alt", include_str!("../../scenarios/low_alt.toml")),
    ("low_null", include_str!("../../scenarios/low_null.toml")),
];

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    /// One of `high_alt`, `high_null`, `low_alt`, `low_null`.
    pub fn bundled(name: &str) -> Result<Self> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("no bundled scenario named '{name}'")))?;
        Self::from_toml(text)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.schedule.len();
        let o = &self.outcome;
        for (name, v) in [
            ("active_mean", &o.active_mean),
            ("reference_mean", &o.reference_mean),
            ("variances", &o.variances),
        ] {
            if v.len() != p {
                return Err(Error::Config(format!("outcome {name} has {} entries for {p} visits", v.len())));
            }
        }
        self.dropout.validate(p)?;
        if self.n_per_arm < 10 {
            return Err(Error::Config("n_per_arm must be at least 10".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimator suite is empty".into()));
        }
        self.gibbs.validate()?;
        let has_rubin = self.estimators.iter().any(|e| matches!(e, EstimatorSpec::Rubin(_)));
        if has_rubin && (self.imputations < 2 || self.imputations > self.gibbs.kept_draws()) {
            return Err(Error::Config(format!(
                "imputations must be in 2..={}",
                self.gibbs.kept_draws()
            )));
        }
        if let Some(d) = self.d_min {
            if d >= p {
                return Err(Error::Config(format!("d_min {d} beyond final visit")));
            }
        }
        self.arm_params().map(|_| ())
    }

    /// `(active, reference)` outcome laws; under the null both use the reference mean.
    pub fn arm_params(&self) -> Result<(MvnParams, MvnParams)> {
        let o = &self.outcome;
        let sds: Vec<f64> = o.variances.iter().map(|v| v.sqrt()).collect();
        let cov = spatial_power_cov(&sds, &self.schedule, o.rho, o.rho_scale_weeks)?;
        let active_mean = match self.hypothesis {
            Hypothesis::Null => &o.reference_mean,
            Hypothesis::Alternative => &o.active_mean,
        };
        Ok((
            MvnParams::from_slices(active_mean, cov.clone())?,
            MvnParams::from_slices(&o.reference_mean, cov)?,
        ))
    }
}
