use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::gaussian::CholFactor;

/// Treatment coefficient from the final-visit analysis model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AncovaResult {
    pub point: f64,
    pub variance: f64,
    /// The baseline column was collinear and the estimate is a plain difference in means.
    pub fallback: bool,
}

/// OLS of the final-visit outcome on intercept, baseline and treatment indicator.
pub fn analyze_ancova(completed: &TrialDataset) -> Result<AncovaResult> {
    let last = completed.n_visits() - 1;
    let rows = completed
        .patients()
        .iter()
        .map(|p| {
            let y = p.outcomes()[last].ok_or_else(|| Error::Validation {
                id: p.id().to_string(),
                reason: "final visit missing in completed data".into(),
            })?;
            Ok((p.outcomes()[0].expect("baseline observed"), y, p.arm().indicator()))
        })
        .collect::<Result<Vec<_>>>()?;
    ancova_fit(&rows)
}

/// ANCOVA on `(baseline, outcome, treatment indicator)` triples.
pub(crate) fn ancova_fit(rows: &[(f64, f64, f64)]) -> Result<AncovaResult> {
    let n = rows.len();
    if n < 4 {
        return Err(Error::InvalidInput(format!("{n} patients is too few for the analysis model")));
    }
    let nf = n as f64;
    let (mut m0, mut my, mut mt) = (0.0, 0.0, 0.0);
    for &(b, y, t) in rows {
        m0 += b;
        my += y;
        mt += t;
    }
    m0 /= nf;
    my /= nf;
    mt /= nf;
    // Centered cross-products; the intercept is profiled out.
    let (mut sbb, mut sbt, mut stt, mut sby, mut sty, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for &(b, y, t) in rows {
        let (db, dy, dt) = (b - m0, y - my, t - mt);
        sbb += db * db;
        sbt += db * dt;
        stt += dt * dt;
        sby += db * dy;
        sty += dt * dy;
        syy += dy * dy;
    }
    if !(stt > 0.0) {
        return Err(Error::InvalidInput("analysis needs patients in both arms".into()));
    }
    let xtx = DMatrix::from_row_slice(2, 2, &[sbb, sbt, sbt, stt]);
    match CholFactor::new(&xtx, "analysis design") {
        Ok(chol) => {
            let beta = chol.solve_vec(&DVector::from_vec(vec![sby, sty]));
            let rss = syy - beta[0] * sby - beta[1] * sty;
            let sigma2 = rss.max(0.0) / (nf - 3.0);
            let inv = chol.inverse();
            Ok(AncovaResult {
                point: beta[1],
                variance: sigma2 * inv[(1, 1)],
                fallback: false,
            })
        }
        Err(_) => {
            let point = sty / stt;
            let rss = syy - point * sty;
            let sigma2 = rss.max(0.0) / (nf - 2.0);
            Ok(AncovaResult {
                point,
                variance: sigma2 / stt,
                fallback: true,
            })
        }
    }
}
