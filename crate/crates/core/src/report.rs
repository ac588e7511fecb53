//! Result records shared by the analysis front ends.

use std::io::Write;

use serde::Serialize;

use crate::bcm::EstimateSummary;
use crate::error::Result;
use crate::rbi::{JackknifeEstimate, PooledEstimate};

/// One estimate in the analysis report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub method: String,
    pub point: f64,
    /// Standard error, or posterior SD for the causal model.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Imputations, jackknife replicates or posterior draws behind the estimate.
    pub m: usize,
}

impl EstimateRecord {
    pub fn from_pooled(method: impl Into<String>, e: &PooledEstimate) -> Self {
        Self {
            method: method.into(),
            point: e.point,
            se: e.se,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            m: e.m,
        }
    }

    pub fn from_jackknife(method: impl Into<String>, e: &JackknifeEstimate) -> Self {
        Self {
            method: method.into(),
            point: e.point,
            se: e.se,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            m: e.n,
        }
    }

    pub fn from_summary(method: impl Into<String>, e: &EstimateSummary) -> Self {
        Self {
            method: method.into(),
            point: e.point,
            se: e.sd,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            m: e.draws,
        }
    }
}

pub fn write_records_csv<W: Write>(records: &[EstimateRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records_json<W: Write>(records: &[EstimateRecord], mut writer: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut writer, records).map_err(std::io::Error::from)?;
    writeln!(writer)?;
    Ok(())
}
