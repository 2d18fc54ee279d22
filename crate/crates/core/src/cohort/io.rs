use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_record, Cohort, PatientRecord, StreamInfo, ValidationBounds, Vocabulary};
use crate::error::{Error, Result};

pub const COHORT_FORMAT: &str = "wardrisk-cohort";
pub const COHORT_VERSION: u32 = 1;

/// First line of a cohort file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortHeader {
    pub format: String,
    pub version: u32,
    pub stream_catalog: Vec<StreamInfo>,
    pub vocabulary: Vocabulary,
}

pub fn parse_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    parse_cohort_with(path, &ValidationBounds::default())
}

pub fn parse_cohort_with(path: impl AsRef<Path>, bounds: &ValidationBounds) -> Result<Cohort> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_cohort(BufReader::new(file), bounds).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Reads newline-delimited JSON: a header object then one patient per line.
/// Blank lines are ignored.
pub fn read_cohort(reader: impl BufRead, bounds: &ValidationBounds) -> Result<Cohort> {
    let mut header: Option<CohortHeader> = None;
    let mut patients = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io("<cohort stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |e: serde_json::Error| Error::Schema {
            line: line_no,
            message: e.to_string(),
        };
        match &header {
            None => {
                let h: CohortHeader = serde_json::from_str(&line).map_err(schema)?;
                if h.format != COHORT_FORMAT || h.version != COHORT_VERSION {
                    return Err(Error::Schema {
                        line: line_no,
                        message: format!(
                            "expected {COHORT_FORMAT} v{COHORT_VERSION}, found {} v{}",
                            h.format, h.version
                        ),
                    });
                }
                header = Some(h);
            }
            Some(h) => {
                let p: PatientRecord = serde_json::from_str(&line).map_err(schema)?;
                validate_record(&p, h.stream_catalog.len(), &h.vocabulary, bounds)?;
                patients.push(p);
            }
        }
    }
    let header = header.ok_or_else(|| Error::Schema {
        line: 1,
        message: "missing header line".into(),
    })?;
    let cohort = Cohort {
        stream_catalog: header.stream_catalog,
        vocabulary: header.vocabulary,
        patients,
    };
    cohort.validate(bounds)?;
    Ok(cohort)
}

pub fn write_cohort_to(cohort: &Cohort, mut w: impl Write) -> Result<()> {
    let header = CohortHeader {
        format: COHORT_FORMAT.into(),
        version: COHORT_VERSION,
        stream_catalog: cohort.stream_catalog.clone(),
        vocabulary: cohort.vocabulary.clone(),
    };
    let io = |e| Error::io("<cohort stream>", e);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    for p in &cohort.patients {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_cohort_to(cohort, BufWriter::new(file))
}

/// Flat `patient_id,stream,time,value` export for inspection.
pub fn write_events_csv(cohort: &Cohort, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["patient_id", "stream", "time", "value"])?;
    for p in &cohort.patients {
        for e in &p.events {
            out.write_record([
                p.id.as_str(),
                cohort.stream_catalog[e.stream].name.as_str(),
                &e.time.to_string(),
                &e.value.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv stream>", e))
}
