//! Trial datasets under monotone missingness, wide-CSV ingestion and ICE-pattern tabulation.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::VisitSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Reference,
    Active,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Reference, Arm::Active];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Reference => "reference",
            Arm::Active => "active",
        }
    }

    /// Treatment indicator used by the analysis model.
    pub fn indicator(self) -> f64 {
        match self {
            Arm::Reference => 0.0,
            Arm::Active => 1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Arm::Reference => 0,
            Arm::Active => 1,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "reference" => Ok(Arm::Reference),
            "active" => Ok(Arm::Active),
            other => Err(format!("unknown arm label '{other}' (expected reference|active)")),
        }
    }
}

/// One patient's outcomes; observed at visits `0..=last_observed`, missing afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    id: String,
    arm: Arm,
    outcomes: Vec<Option<f64>>,
    last_observed: usize,
}

impl PatientRecord {
    /// Validates the monotone pattern and derives the last observed visit.
    pub fn new(id: impl Into<String>, arm: Arm, outcomes: Vec<Option<f64>>) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| Error::Validation {
            id: id.clone(),
            reason,
        };
        match outcomes.first() {
            None => return Err(invalid("no outcome columns".into())),
            Some(None) => return Err(invalid("baseline (visit 0) is missing".into())),
            Some(Some(_)) => {}
        }
        let observed = outcomes.iter().take_while(|v| v.is_some()).count();
        if let Some(j) = outcomes[observed..].iter().position(|v| v.is_some()) {
            return Err(invalid(format!(
                "intermittent missingness: visit {} observed after missing visit {}",
                observed + j,
                observed
            )));
        }
        if let Some(v) = outcomes.iter().flatten().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite outcome {v}")));
        }
        Ok(Self {
            id,
            arm,
            outcomes,
            last_observed: observed - 1,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn outcomes(&self) -> &[Option<f64>] {
        &self.outcomes
    }

    /// Last visit observed before the intercurrent event (`D`).
    pub fn last_observed(&self) -> usize {
        self.last_observed
    }

    pub fn is_complete(&self) -> bool {
        self.last_observed + 1 == self.outcomes.len()
    }

    /// Observed prefix `y_0..=y_D`.
    pub fn observed(&self) -> Vec<f64> {
        self.outcomes[..=self.last_observed]
            .iter()
            .map(|v| v.expect("monotone prefix is observed"))
            .collect()
    }

    /// Copy with the missing tail filled; the result is complete.
    pub fn completed_with(&self, tail: &[f64]) -> PatientRecord {
        let d = self.last_observed;
        assert_eq!(tail.len(), self.outcomes.len() - d - 1, "tail length mismatch");
        let mut outcomes = self.outcomes.clone();
        for (slot, v) in outcomes[d + 1..].iter_mut().zip(tail) {
            *slot = Some(*v);
        }
        PatientRecord {
            id: self.id.clone(),
            arm: self.arm,
            outcomes,
            last_observed: self.outcomes.len() - 1,
        }
    }
}

/// Patients sharing one visit schedule, with at least two patients per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    schedule: VisitSchedule,
    patients: Vec<PatientRecord>,
}

impl TrialDataset {
    pub fn new(schedule: VisitSchedule, patients: Vec<PatientRecord>) -> Result<Self> {
        for p in &patients {
            if p.outcomes.len() != schedule.len() {
                return Err(Error::Validation {
                    id: p.id.clone(),
                    reason: format!(
                        "{} outcome columns for a {}-visit schedule",
                        p.outcomes.len(),
                        schedule.len()
                    ),
                });
            }
        }
        for arm in Arm::BOTH {
            let n = patients.iter().filter(|p| p.arm == arm).count();
            if n < 2 {
                return Err(Error::InvalidInput(format!(
                    "arm {arm} has {n} patients; at least 2 are required"
                )));
            }
        }
        Ok(Self { schedule, patients })
    }

    pub fn schedule(&self) -> &VisitSchedule {
        &self.schedule
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn n_visits(&self) -> usize {
        self.schedule.len()
    }

    pub fn arm_size(&self, arm: Arm) -> usize {
        self.patients.iter().filter(|p| p.arm == arm).count()
    }

    pub fn is_complete(&self) -> bool {
        self.patients.iter().all(PatientRecord::is_complete)
    }

    /// Dataset with patient `index` removed; used by leave-one-out refits.
    pub fn without(&self, index: usize) -> Result<TrialDataset> {
        let mut patients = self.patients.clone();
        patients.remove(index);
        TrialDataset::new(self.schedule.clone(), patients)
    }

    pub(crate) fn with_patients(&self, patients: Vec<PatientRecord>) -> TrialDataset {
        TrialDataset {
            schedule: self.schedule.clone(),
            patients,
        }
    }

    /// Dense per-arm view for numeric kernels.
    pub fn arm_view(&self, arm: Arm) -> ArmData {
        ArmData::from_records(self.patients.iter().filter(|p| p.arm == arm), self.n_visits())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "arm".to_string()];
        header.extend((0..self.n_visits()).map(|j| format!("y{j}")));
        w.write_record(&header)?;
        for p in &self.patients {
            let mut row = vec![p.id.clone(), p.arm.to_string()];
            row.extend(p.outcomes.iter().map(|v| match v {
                Some(x) => format!("{x}"),
                None => String::new(),
            }));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Reads the wide layout `id,arm,y0,...,y{j_max}` with empty cells for missing values.
pub fn read_csv<R: Read>(reader: R, schedule: &VisitSchedule) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let expected: Vec<String> = ["id".to_string(), "arm".to_string()]
        .into_iter()
        .chain((0..schedule.len()).map(|j| format!("y{j}")))
        .collect();
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != expected {
        return Err(Error::Parse {
            line: 1,
            reason: format!(
                "header {:?} does not match expected {:?} for a {}-visit schedule",
                header.join(","),
                expected.join(","),
                schedule.len()
            ),
        });
    }
    let mut patients = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let id = rec[0].to_string();
        let arm: Arm = rec[1]
            .parse()
            .map_err(|reason| Error::Parse { line, reason })?;
        let outcomes = rec
            .iter()
            .skip(2)
            .map(|cell| {
                if cell.is_empty() {
                    Ok(None)
                } else {
                    cell.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                        line,
                        reason: format!("patient {id}: '{cell}' is not a number"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        patients.push(PatientRecord::new(id, arm, outcomes)?);
    }
    TrialDataset::new(schedule.clone(), patients)
}

pub fn load_csv(path: impl AsRef<Path>, schedule: &VisitSchedule) -> Result<TrialDataset> {
    let f = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(f), schedule)
}

/// Number of patients in one arm whose last on-treatment visit is `D = j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IcePatternCounts {
    pub arm: Arm,
    pub counts: Vec<usize>,
}

impl IcePatternCounts {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Share of patients observed through the final visit.
    pub fn completer_share(&self) -> f64 {
        *self.counts.last().unwrap_or(&0) as f64 / self.total().max(1) as f64
    }

    /// Earliest pattern with a non-zero count.
    pub fn earliest_observed(&self) -> Option<usize> {
        self.counts.iter().position(|&c| c > 0)
    }
}

pub fn pattern_counts(data: &TrialDataset, arm: Arm) -> IcePatternCounts {
    let mut counts = vec![0; data.n_visits()];
    for p in data.patients.iter().filter(|p| p.arm == arm) {
        counts[p.last_observed] += 1;
    }
    IcePatternCounts { arm, counts }
}

/// Row-major outcomes of one arm; missing entries hold `NaN`.
#[derive(Debug, Clone)]
pub struct ArmData {
    pub values: DMatrix<f64>,
    pub last_observed: Vec<usize>,
}

impl ArmData {
    pub fn from_records<'a>(records: impl Iterator<Item = &'a PatientRecord>, p: usize) -> Self {
        let records: Vec<&PatientRecord> = records.collect();
        let n = records.len();
        let mut values = DMatrix::from_element(n, p, f64::NAN);
        let mut last_observed = Vec::with_capacity(n);
        for (i, r) in records.iter().enumerate() {
            for (j, v) in r.outcomes.iter().enumerate() {
                if let Some(x) = v {
                    values[(i, j)] = *x;
                }
            }
            last_observed.push(r.last_observed);
        }
        Self {
            values,
            last_observed,
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_prefix(&self, i: usize, upto: usize) -> Vec<f64> {
        (0..=upto).map(|j| self.values[(i, j)]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sched() -> VisitSchedule {
        VisitSchedule::parse("0,4,8,14,20,26").unwrap()
    }

    const SAMPLE: &str = "id,arm,y0,y1,y2,y3,y4,y5\n\
        p1,active,7.9,7.5,7.2,,,\n\
        p2,active,8.0,7.6,7.4,7.3,7.1,7.0\n\
        p3,reference,7.9,7.8,7.8,7.7,,\n\
        p4,reference,7.7,7.9,7.6,7.8,7.7,7.9\n";

    #[test]
    fn monotone_row_gives_last_observed_visit() {
        let d = read_csv(SAMPLE.as_bytes(), &sched()).unwrap();
        assert_eq!(d.patients()[0].last_observed(), 2);
        assert_eq!(d.patients()[0].observed(), vec![7.9, 7.5, 7.2]);
        assert_eq!(d.patients()[1].last_observed(), 5);
        assert!(d.patients()[1].is_complete());
    }

    #[test]
    fn intermittent_missingness_names_patient() {
        let bad = SAMPLE.replace("p3,reference,7.9,7.8,7.8,7.7,,", "p3,reference,7.9,,7.8,7.7,,");
        match read_csv(bad.as_bytes(), &sched()) {
            Err(Error::Validation { id, reason }) => {
                assert_eq!(id, "p3");
                assert!(reason.contains("intermittent"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_baseline_rejected() {
        let bad = SAMPLE.replace("p2,active,8.0", "p2,active,");
        assert!(matches!(
            read_csv(bad.as_bytes(), &sched()),
            Err(Error::Validation { id, .. }) if id == "p2"
        ));
    }

    #[test]
    fn unknown_arm_is_parse_error() {
        let bad = SAMPLE.replace("p4,reference", "p4,placebo");
        assert!(matches!(read_csv(bad.as_bytes(), &sched()), Err(Error::Parse { .. })));
    }

    #[test]
    fn header_must_match_schedule() {
        let s = VisitSchedule::parse("0,4,8").unwrap();
        assert!(matches!(read_csv(SAMPLE.as_bytes(), &s), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn too_few_patients_per_arm() {
        let one = "id,arm,y0,y1\na,active,1,2\nb,reference,1,2\nc,reference,1,\n";
        let s = VisitSchedule::parse("0,4").unwrap();
        assert!(matches!(read_csv(one.as_bytes(), &s), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pattern_tabulation() {
        let ds = [2, 2, 3, 5, 5, 5, 5, 5, 5, 5];
        let mut patients: Vec<PatientRecord> = ds
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let outcomes = (0..6).map(|j| (j <= d).then_some(1.0)).collect();
                PatientRecord::new(format!("a{i}"), Arm::Active, outcomes).unwrap()
            })
            .collect();
        for i in 0..2 {
            patients.push(PatientRecord::new(format!("r{i}"), Arm::Reference, vec![Some(0.0); 6]).unwrap());
        }
        let data = TrialDataset::new(sched(), patients).unwrap();
        let c = pattern_counts(&data, Arm::Active);
        assert_eq!(c.counts, vec![0, 0, 2, 1, 0, 7]);
        assert_eq!(c.total(), 10);
        assert_eq!(pattern_counts(&data, Arm::Reference).counts, vec![0, 0, 0, 0, 0, 2]);
        assert_eq!(c.earliest_observed(), Some(2));
    }

    fn arb_dataset() -> impl Strategy<Value = TrialDataset> {
        proptest::collection::vec(
            (any::<bool>(), 0usize..4, proptest::collection::vec(-50.0f64..50.0, 4)),
            4..30,
        )
        .prop_map(|rows| {
            let mut patients: Vec<PatientRecord> = rows
                .into_iter()
                .enumerate()
                .map(|(i, (active, d, ys))| {
                    let arm = if active { Arm::Active } else { Arm::Reference };
                    let outcomes = ys.iter().enumerate().map(|(j, y)| (j <= d).then_some(*y)).collect();
                    PatientRecord::new(format!("p{i}"), arm, outcomes).unwrap()
                })
                .collect();
            for arm in Arm::BOTH {
                for k in 0..2 {
                    patients.push(PatientRecord::new(format!("{arm}{k}"), arm, vec![Some(1.5); 4]).unwrap());
                }
            }
            TrialDataset::new(VisitSchedule::parse("0,1,2,3").unwrap(), patients).unwrap()
        })
    }

    proptest! {
        #[test]
        fn csv_write_then_read_is_identity(data in arb_dataset()) {
            let mut buf = Vec::new();
            data.write_csv(&mut buf).unwrap();
            let back = read_csv(buf.as_slice(), data.schedule()).unwrap();
            prop_assert_eq!(back, data);
        }

        #[test]
        fn pattern_counts_sum_to_arm_size(data in arb_dataset()) {
            for arm in Arm::BOTH {
                prop_assert_eq!(pattern_counts(&data, arm).total(), data.arm_size(arm));
            }
        }
    }
}
