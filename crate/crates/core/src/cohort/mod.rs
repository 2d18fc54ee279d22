//! Patient data model: static admission profiles, timestamped measurements,
//! outcomes, and cohort-level validation.

mod catalog;
mod encode;
mod io;
mod split;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use catalog::{default_stream_catalog, default_vocabulary, icd9_chapter, ICD9_CHAPTERS};
pub use encode::StaticEncoder;
pub use io::{
    parse_cohort, parse_cohort_with, read_cohort, write_cohort, write_cohort_to, write_events_csv,
    CohortHeader, COHORT_FORMAT, COHORT_VERSION,
};
pub use split::{split_cohort, SplitRule};

/// Number of static admission fields.
pub const STATIC_FIELDS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticProfile {
    pub age: f64,
    pub gender: String,
    pub admission_floor: String,
    pub stem_cell_transplant: bool,
    /// Top-level ICD-9 chapter, see [`icd9_chapter`].
    pub icd9_group: String,
    pub transfer_status: String,
}

/// One measurement: stream index, hours since admission, raw value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(usize, f64, f64)", into = "(usize, f64, f64)")]
pub struct MeasurementEvent {
    pub stream: usize,
    pub time: f64,
    pub value: f64,
}

impl From<(usize, f64, f64)> for MeasurementEvent {
    fn from((stream, time, value): (usize, f64, f64)) -> Self {
        Self {
            stream,
            time,
            value,
        }
    }
}

impl From<MeasurementEvent> for (usize, f64, f64) {
    fn from(e: MeasurementEvent) -> Self {
        (e.stream, e.time, e.value)
    }
}

/// Ward outcome; `Icu` is the deteriorating status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Outcome {
    Discharged,
    Icu,
}

impl Outcome {
    pub fn index(self) -> usize {
        match self {
            Outcome::Discharged => 0,
            Outcome::Icu => 1,
        }
    }

    pub fn from_index(v: usize) -> Self {
        if v == 0 {
            Outcome::Discharged
        } else {
            Outcome::Icu
        }
    }
}

impl TryFrom<u8> for Outcome {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Outcome::Discharged),
            1 => Ok(Outcome::Icu),
            other => Err(format!("outcome must be 0 or 1, got {other}")),
        }
    }
}

impl From<Outcome> for u8 {
    fn from(o: Outcome) -> u8 {
        o.index() as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub profile: StaticProfile,
    pub events: Vec<MeasurementEvent>,
    pub outcome: Outcome,
    /// Last moment of the ward stay, hours since admission.
    pub endpoint_time: f64,
    /// Admission timestamp in hours since the start of the data collection
    /// window; used by time-based splits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admitted_at: Option<f64>,
}

impl PatientRecord {
    /// Events with `time <= t`.
    pub fn events_until(&self, t: f64) -> &[MeasurementEvent] {
        let end = self.events.partition_point(|e| e.time <= t);
        &self.events[..end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamInfo {
    pub name: String,
    pub unit: String,
}

/// Declared categorical value sets for the static profile.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub gender: Vec<String>,
    pub admission_floor: Vec<String>,
    pub icd9_group: Vec<String>,
    pub transfer_status: Vec<String>,
}

impl Vocabulary {
    fn check(&self, field: &str, values: &[String], value: &str) -> Result<()> {
        if values.iter().any(|v| v == value) {
            Ok(())
        } else {
            Err(Error::UnknownCategory {
                field: field.to_string(),
                value: value.to_string(),
            })
        }
    }

    pub fn check_profile(&self, p: &StaticProfile) -> Result<()> {
        self.check("gender", &self.gender, &p.gender)?;
        self.check("admission_floor", &self.admission_floor, &p.admission_floor)?;
        self.check("icd9_group", &self.icd9_group, &p.icd9_group)?;
        self.check("transfer_status", &self.transfer_status, &p.transfer_status)
    }

    fn validate(&self) -> Result<()> {
        for (name, values) in [
            ("gender", &self.gender),
            ("admission_floor", &self.admission_floor),
            ("icd9_group", &self.icd9_group),
            ("transfer_status", &self.transfer_status),
        ] {
            if values.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary field `{name}` is empty"
                )));
            }
            let unique: HashSet<&String> = values.iter().collect();
            if unique.len() != values.len() {
                return Err(Error::InvalidArgument(format!(
                    "vocabulary field `{name}` has duplicate values"
                )));
            }
        }
        Ok(())
    }
}

/// Range checks applied on top of the structural invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationBounds {
    pub endpoint_min: f64,
    pub endpoint_max: f64,
}

impl Default for ValidationBounds {
    fn default() -> Self {
        Self {
            endpoint_min: 0.0,
            endpoint_max: f64::INFINITY,
        }
    }
}

impl ValidationBounds {
    /// Stay lengths seen in real ward data, 4 h to 2700 h.
    pub fn ward_stays() -> Self {
        Self {
            endpoint_min: 4.0,
            endpoint_max: 2700.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub stream_catalog: Vec<StreamInfo>,
    pub vocabulary: Vocabulary,
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn streams(&self) -> usize {
        self.stream_catalog.len()
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Same catalog and vocabulary, different patients.
    pub fn with_patients(&self, patients: Vec<PatientRecord>) -> Self {
        Self {
            stream_catalog: self.stream_catalog.clone(),
            vocabulary: self.vocabulary.clone(),
            patients,
        }
    }

    pub fn count_outcome(&self, outcome: Outcome) -> usize {
        self.patients
            .iter()
            .filter(|p| p.outcome == outcome)
            .count()
    }

    pub fn validate(&self, bounds: &ValidationBounds) -> Result<()> {
        self.vocabulary.validate()?;
        if self.stream_catalog.is_empty() {
            return Err(Error::InvalidArgument("stream catalog is empty".into()));
        }
        let mut ids = HashSet::with_capacity(self.patients.len());
        for p in &self.patients {
            if !ids.insert(p.id.as_str()) {
                return Err(invariant(&p.id, "patient ids unique"));
            }
            validate_record(p, self.streams(), &self.vocabulary, bounds)?;
        }
        Ok(())
    }
}

fn invariant(patient: &str, rule: &str) -> Error {
    Error::Invariant {
        patient: patient.to_string(),
        rule: rule.to_string(),
    }
}

pub(crate) fn validate_record(
    p: &PatientRecord,
    streams: usize,
    vocabulary: &Vocabulary,
    bounds: &ValidationBounds,
) -> Result<()> {
    if !(0.0..=130.0).contains(&p.profile.age) {
        return Err(invariant(&p.id, "age in [0, 130]"));
    }
    vocabulary.check_profile(&p.profile).map_err(|e| match e {
        Error::UnknownCategory { field, value } => {
            invariant(&p.id, &format!("{field} value `{value}` in vocabulary"))
        }
        other => other,
    })?;
    if !p.endpoint_time.is_finite()
        || p.endpoint_time < bounds.endpoint_min
        || p.endpoint_time > bounds.endpoint_max
    {
        return Err(invariant(
            &p.id,
            &format!(
                "endpoint_time in [{}, {}]",
                bounds.endpoint_min, bounds.endpoint_max
            ),
        ));
    }
    if let Some(a) = p.admitted_at {
        if !a.is_finite() {
            return Err(invariant(&p.id, "admitted_at finite"));
        }
    }
    let mut prev: Option<(f64, usize)> = None;
    for e in &p.events {
        if e.stream >= streams {
            return Err(invariant(&p.id, "stream_id < D"));
        }
        if !e.time.is_finite() || e.time < 0.0 {
            return Err(invariant(&p.id, "event time finite and >= 0"));
        }
        if !e.value.is_finite() {
            return Err(invariant(&p.id, "event value finite"));
        }
        if e.time > p.endpoint_time {
            return Err(invariant(&p.id, "event time <= endpoint_time"));
        }
        if let Some(prev) = prev {
            if (e.time, e.stream) < prev {
                return Err(invariant(&p.id, "events sorted by (time, stream_id)"));
            }
        }
        prev = Some((e.time, e.stream));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn profile(gender: &str) -> StaticProfile {
        StaticProfile {
            age: 61.0,
            gender: gender.into(),
            admission_floor: "medical".into(),
            stem_cell_transplant: false,
            icd9_group: "circulatory".into(),
            transfer_status: "direct".into(),
        }
    }

    pub fn record(id: &str, events: Vec<(usize, f64, f64)>, outcome: Outcome) -> PatientRecord {
        PatientRecord {
            id: id.into(),
            profile: profile("F"),
            events: events.into_iter().map(Into::into).collect(),
            outcome,
            endpoint_time: 24.0,
            admitted_at: None,
        }
    }

    pub fn cohort(patients: Vec<PatientRecord>) -> Cohort {
        Cohort {
            stream_catalog: default_stream_catalog()[..3].to_vec(),
            vocabulary: default_vocabulary(),
            patients,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn empty_cohort_is_valid() {
        cohort(vec![])
            .validate(&ValidationBounds::default())
            .unwrap();
    }

    #[test]
    fn unsorted_events_name_the_patient() {
        let c = cohort(vec![record(
            "p-17",
            vec![(0, 2.0, 1.0), (1, 1.0, 1.0)],
            Outcome::Icu,
        )]);
        match c.validate(&ValidationBounds::default()).unwrap_err() {
            Error::Invariant { patient, rule } => {
                assert_eq!(patient, "p-17");
                assert!(rule.contains("sorted"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn same_time_events_sorted_by_stream() {
        let ok = cohort(vec![record(
            "a",
            vec![(0, 1.0, 1.0), (2, 1.0, 1.0)],
            Outcome::Icu,
        )]);
        ok.validate(&ValidationBounds::default()).unwrap();
        let bad = cohort(vec![record(
            "a",
            vec![(2, 1.0, 1.0), (0, 1.0, 1.0)],
            Outcome::Icu,
        )]);
        assert!(bad.validate(&ValidationBounds::default()).is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let c = cohort(vec![
            record("a", vec![], Outcome::Icu),
            record("a", vec![], Outcome::Discharged),
        ]);
        assert!(c.validate(&ValidationBounds::default()).is_err());
    }

    #[test]
    fn ward_stay_bounds() {
        let mut r = record("short", vec![], Outcome::Discharged);
        r.endpoint_time = 2.0;
        let c = cohort(vec![r]);
        c.validate(&ValidationBounds::default()).unwrap();
        assert!(c.validate(&ValidationBounds::ward_stays()).is_err());
    }

    #[test]
    fn events_after_endpoint_rejected() {
        let c = cohort(vec![record("a", vec![(0, 30.0, 1.0)], Outcome::Icu)]);
        assert!(c.validate(&ValidationBounds::default()).is_err());
    }

    #[test]
    fn unknown_category_rejected() {
        let mut r = record("a", vec![], Outcome::Icu);
        r.profile.gender = "X".into();
        assert!(cohort(vec![r])
            .validate(&ValidationBounds::default())
            .is_err());
    }
}
