use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const PRIOR_GRAMMAR: &str = "point:V | normal:MEAN,SD | triangular:[MIN,]MODE,MAX | truncnorm:MEAN,SD[,LOWER]";

/// Prior on the maintained-effect parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum K0Prior {
    Point(f64),
    Normal { mean: f64, sd: f64 },
    Triangular { min: f64, mode: f64, max: f64 },
    /// Normal with the given untruncated moments, restricted to `[lower, inf)`.
    TruncatedNormal { mean: f64, sd: f64, lower: f64 },
}

/// How credible intervals are formed from effect draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    NormalApprox,
    Percentile,
}

impl K0Prior {
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let ok = match *self {
            K0Prior::Point(v) => finite(&[v]),
            K0Prior::Normal { mean, sd } => finite(&[mean, sd]) && sd >= 0.0,
            K0Prior::Triangular { min, mode, max } => {
                finite(&[min, mode, max]) && min <= mode && mode <= max && min < max
            }
            K0Prior::TruncatedNormal { mean, sd, lower } => {
                finite(&[mean, sd, lower]) && sd > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid k0 prior {self}")))
        }
    }

    /// Percentile intervals for the skewed priors, normal intervals otherwise.
    pub fn default_interval(&self) -> IntervalKind {
        match self {
            K0Prior::Point(_) | K0Prior::Normal { .. } => IntervalKind::NormalApprox,
            _ => IntervalKind::Percentile,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, K0Prior::Point(_) | K0Prior::Normal { sd: 0.0, .. })
    }

    /// Same prior with the normal SD replaced; other kinds are returned unchanged.
    pub fn with_sd(&self, sd: f64) -> K0Prior {
        match *self {
            K0Prior::Point(mean) | K0Prior::Normal { mean, .. } => K0Prior::Normal { mean, sd },
            K0Prior::TruncatedNormal { mean, lower, .. } => K0Prior::TruncatedNormal { mean, sd, lower },
            other => other,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            K0Prior::Point(v) => v,
            K0Prior::Normal { mean, .. } => mean,
            K0Prior::Triangular { min, mode, max } => (min + mode + max) / 3.0,
            K0Prior::TruncatedNormal { mean, sd, lower } => {
                let std = Normal::standard();
                let a = (lower - mean) / sd;
                let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
                mean + sd * phi / (1.0 - std.cdf(a))
            }
        }
    }

    /// One draw. Normal priors always consume exactly one standard normal, so draws
    /// for different SDs on the same stream are matched.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            K0Prior::Point(v) => v,
            K0Prior::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            K0Prior::Triangular { min, mode, max } => {
                let u: f64 = rng.random();
                let span = max - min;
                if u < (mode - min) / span {
                    min + (u * span * (mode - min)).sqrt()
                } else {
                    max - ((1.0 - u) * span * (max - mode)).sqrt()
                }
            }
            K0Prior::TruncatedNormal { mean, sd, lower } => {
                let std = Normal::standard();
                let u: f64 = rng.random();
                let lo = std.cdf((lower - mean) / sd);
                let q = (lo + u * (1.0 - lo)).min(1.0 - f64::EPSILON);
                (mean + sd * std.inverse_cdf(q)).max(lower)
            }
        }
    }
}

/// `n` i.i.d. prior draws.
pub fn draw_k0<R: Rng + ?Sized>(prior: &K0Prior, n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| prior.sample(rng)).collect()
}

impl fmt::Display for K0Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            K0Prior::Point(v) => write!(f, "point:{v}"),
            K0Prior::Normal { mean, sd } => write!(f, "normal:{mean},{sd}"),
            K0Prior::Triangular { min, mode, max } => write!(f, "triangular:{min},{mode},{max}"),
            K0Prior::TruncatedNormal { mean, sd, lower } => write!(f, "truncnorm:{mean},{sd},{lower}"),
        }
    }
}

impl FromStr for K0Prior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidInput(format!("prior '{s}': {why}; expected {PRIOR_GRAMMAR}"));
        let (kind, rest) = s.trim().split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let params = rest
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad(&format!("'{t}' is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        let prior = match (kind.trim().to_ascii_lowercase().as_str(), params.as_slice()) {
            ("point", [v]) => K0Prior::Point(*v),
            ("normal", [mean, sd]) => K0Prior::Normal { mean: *mean, sd: *sd },
            ("triangular", [mode, max]) => K0Prior::Triangular { min: 0.0, mode: *mode, max: *max },
            ("triangular", [min, mode, max]) => K0Prior::Triangular { min: *min, mode: *mode, max: *max },
            ("truncnorm", [mean, sd]) => K0Prior::TruncatedNormal { mean: *mean, sd: *sd, lower: 0.0 },
            ("truncnorm", [mean, sd, lower]) => {
                K0Prior::TruncatedNormal { mean: *mean, sd: *sd, lower: *lower }
            }
            ("point" | "normal" | "triangular" | "truncnorm", _) => {
                return Err(bad("wrong number of parameters"))
            }
            _ => return Err(bad("unknown kind")),
        };
        prior.validate().map_err(|_| bad("parameters out of range"))?;
        Ok(prior)
    }
}

impl TryFrom<String> for K0Prior {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<K0Prior> for String {
    fn from(p: K0Prior) -> String {
        p.to_string()
    }
}
