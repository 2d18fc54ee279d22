use super::{StreamInfo, Vocabulary};
use crate::error::{Error, Result};

/// Top-level ICD-9-CM chapters: the 17 numeric chapters plus V and E codes.
pub const ICD9_CHAPTERS: [&str; 19] = [
    "infectious",
    "neoplasms",
    "endocrine",
    "blood",
    "mental",
    "nervous",
    "circulatory",
    "respiratory",
    "digestive",
    "genitourinary",
    "pregnancy",
    "skin",
    "musculoskeletal",
    "congenital",
    "perinatal",
    "symptoms",
    "injury",
    "supplementary",
    "external",
];

const CHAPTER_STARTS: [u32; 17] = [
    1, 140, 240, 280, 290, 320, 390, 460, 520, 580, 630, 680, 710, 740, 760, 780, 800,
];

/// Maps a raw ICD-9 code (`"428.0"`, `"V45.81"`, `"E878"`) to its chapter name.
pub fn icd9_chapter(code: &str) -> Result<&'static str> {
    let code = code.trim();
    let bad = || Error::InvalidArgument(format!("malformed ICD-9 code `{code}`"));
    match code.chars().next() {
        Some('V') | Some('v') => return Ok(ICD9_CHAPTERS[17]),
        Some('E') | Some('e') => return Ok(ICD9_CHAPTERS[18]),
        None => return Err(bad()),
        _ => {}
    }
    let major = code.split('.').next().ok_or_else(bad)?;
    let n: u32 = major.parse().map_err(|_| bad())?;
    if n == 0 || n > 999 {
        return Err(bad());
    }
    let idx = CHAPTER_STARTS.partition_point(|&start| start <= n) - 1;
    Ok(ICD9_CHAPTERS[idx])
}

/// The 21 ward streams: 11 vital signs followed by 10 lab tests.
pub fn default_stream_catalog() -> Vec<StreamInfo> {
    [
        ("diastolic_bp", "mmHg"),
        ("eye_opening", "score"),
        ("glasgow_coma_score", "score"),
        ("heart_rate", "bpm"),
        ("respiratory_rate", "breaths/min"),
        ("temperature", "degC"),
        ("o2_device_assistance", "level"),
        ("o2_saturation", "%"),
        ("best_motor_response", "score"),
        ("best_verbal_response", "score"),
        ("systolic_bp", "mmHg"),
        ("glucose", "mg/dL"),
        ("urea_nitrogen", "mg/dL"),
        ("white_blood_cell", "10^3/uL"),
        ("creatinine", "mg/dL"),
        ("hemoglobin", "g/dL"),
        ("platelet_count", "10^3/uL"),
        ("potassium", "mmol/L"),
        ("sodium", "mmol/L"),
        ("total_co2", "mmol/L"),
        ("chloride", "mmol/L"),
    ]
    .into_iter()
    .map(|(name, unit)| StreamInfo {
        name: name.into(),
        unit: unit.into(),
    })
    .collect()
}

pub fn default_vocabulary() -> Vocabulary {
    let strings = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    Vocabulary {
        gender: strings(&["F", "M"]),
        admission_floor: strings(&[
            "medical",
            "surgical",
            "cardiac_observation",
            "cardiothoracic",
            "hematology_sct",
            "liver_transplant",
        ]),
        icd9_group: strings(&ICD9_CHAPTERS),
        transfer_status: strings(&["direct", "emergency_department", "interfacility"]),
    }
}
