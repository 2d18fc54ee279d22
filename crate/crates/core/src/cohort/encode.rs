use serde::{Deserialize, Serialize};

use super::{Cohort, StaticProfile, Vocabulary};
use crate::error::{Error, Result};

/// Maps a static profile to a numeric feature vector:
/// `[1, standardized age, one-hot gender, one-hot floor, one-hot transplant (no, yes),
/// one-hot ICD-9 chapter, one-hot transfer status]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticEncoder {
    pub vocabulary: Vocabulary,
    pub age_mean: f64,
    pub age_sd: f64,
}

impl StaticEncoder {
    /// Age statistics come from `cohort`; an empty or constant-age cohort
    /// falls back to unit scale.
    pub fn fit(cohort: &Cohort) -> Self {
        let n = cohort.len() as f64;
        let (age_mean, age_sd) = if cohort.is_empty() {
            (0.0, 1.0)
        } else {
            let mean = cohort.patients.iter().map(|p| p.profile.age).sum::<f64>() / n;
            let var = cohort
                .patients
                .iter()
                .map(|p| (p.profile.age - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            (mean, if sd > 0.0 { sd } else { 1.0 })
        };
        Self {
            vocabulary: cohort.vocabulary.clone(),
            age_mean,
            age_sd,
        }
    }

    pub fn len(&self) -> usize {
        let v = &self.vocabulary;
        2 + v.gender.len()
            + v.admission_floor.len()
            + 2
            + v.icd9_group.len()
            + v.transfer_status.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, profile: &StaticProfile) -> Result<Vec<f64>> {
        let v = &self.vocabulary;
        let mut out = Vec::with_capacity(self.len());
        out.push(1.0);
        out.push((profile.age - self.age_mean) / self.age_sd);
        one_hot(&mut out, "gender", &v.gender, &profile.gender)?;
        one_hot(
            &mut out,
            "admission_floor",
            &v.admission_floor,
            &profile.admission_floor,
        )?;
        out.push(if profile.stem_cell_transplant {
            0.0
        } else {
            1.0
        });
        out.push(if profile.stem_cell_transplant {
            1.0
        } else {
            0.0
        });
        one_hot(&mut out, "icd9_group", &v.icd9_group, &profile.icd9_group)?;
        one_hot(
            &mut out,
            "transfer_status",
            &v.transfer_status,
            &profile.transfer_status,
        )?;
        debug_assert_eq!(out.len(), self.len());
        Ok(out)
    }
}

fn one_hot(out: &mut Vec<f64>, field: &str, values: &[String], value: &str) -> Result<()> {
    let idx = values
        .iter()
        .position(|v| v == value)
        .ok_or_else(|| Error::UnknownCategory {
            field: field.to_string(),
            value: value.to_string(),
        })?;
    out.extend((0..values.len()).map(|i| if i == idx { 1.0 } else { 0.0 }));
    Ok(())
}
