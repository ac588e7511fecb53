use serde::Serialize;

use crate::error::{Error, Result};

pub const Z_975: f64 = 1.959_963_984_540_054;

/// Rubin's-rules combination of per-imputation estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PooledEstimate {
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub m: usize,
    pub within: f64,
    pub between: f64,
}

impl PooledEstimate {
    pub fn total_variance(&self) -> f64 {
        self.se * self.se
    }
}

/// Pools `m >= 2` estimates: `T = W + (1 + 1/m) B`, normal-reference interval.
pub fn rubins_rules(points: &[f64], variances: &[f64]) -> Result<PooledEstimate> {
    let m = points.len();
    if m < 2 {
        return Err(Error::InvalidInput(format!("Rubin's rules need at least 2 imputations, got {m}")));
    }
    if variances.len() != m {
        return Err(Error::InvalidInput(format!(
            "{m} point estimates but {} variances",
            variances.len()
        )));
    }
    let mf = m as f64;
    let point = points.iter().sum::<f64>() / mf;
    let within = variances.iter().sum::<f64>() / mf;
    let between = points.iter().map(|x| (x - point).powi(2)).sum::<f64>() / (mf - 1.0);
    let total = within + (1.0 + 1.0 / mf) * between;
    let se = total.sqrt();
    Ok(PooledEstimate {
        point,
        se,
        ci_low: point - Z_975 * se,
        ci_high: point + Z_975 * se,
        m,
        within,
        between,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_imputations_have_no_between_variance() {
        let r = rubins_rules(&[1.5; 5], &[0.25; 5]).unwrap();
        assert_eq!(r.point, 1.5);
        assert_eq!(r.between, 0.0);
        assert!((r.se - 0.5).abs() < 1e-15);
    }

    #[test]
    fn three_imputation_example() {
        let r = rubins_rules(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(r.point, 2.0);
        assert!((r.total_variance() - (0.5 + 4.0 / 3.0)).abs() < 1e-12);
        assert!((r.ci_high - r.point - (r.point - r.ci_low)).abs() < 1e-12);
    }

    #[test]
    fn too_few_imputations() {
        assert!(rubins_rules(&[1.0], &[1.0]).is_err());
        assert!(rubins_rules(&[1.0, 2.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn total_variance_at_least_within(
            pv in proptest::collection::vec((-10.0f64..10.0, 0.0f64..5.0), 2..50)
        ) {
            let (p, v): (Vec<f64>, Vec<f64>) = pv.into_iter().unzip();
            let r = rubins_rules(&p, &v).unwrap();
            prop_assert!(r.total_variance() >= r.within - 1e-12);
        }
    }
}
