use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Random subset of `round(fraction * n)` patients goes to training.
    Fraction(f64),
    /// Patients admitted strictly before the cutoff (hours on the
    /// `admitted_at` clock) go to training.
    AdmissionCutoff(f64),
}

/// Disjoint, exhaustive partition into `(train, test)`. Both halves keep the
/// original patient order.
pub fn split_cohort(cohort: &Cohort, rule: SplitRule, seed: u64) -> Result<(Cohort, Cohort)> {
    let n = cohort.len();
    let mut to_train = vec![false; n];
    match rule {
        SplitRule::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!(
                    "train fraction {f} outside [0, 1]"
                )));
            }
            let take = (f * n as f64).round() as usize;
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for &i in &idx[..take] {
                to_train[i] = true;
            }
        }
        SplitRule::AdmissionCutoff(cutoff) => {
            if !cutoff.is_finite() {
                return Err(Error::InvalidArgument("cutoff must be finite".into()));
            }
            for (i, p) in cohort.patients.iter().enumerate() {
                let at = p.admitted_at.ok_or_else(|| Error::Invariant {
                    patient: p.id.clone(),
                    rule: "admitted_at present for a time-cutoff split".into(),
                })?;
                to_train[i] = at < cutoff;
            }
            let n_train = to_train.iter().filter(|&&t| t).count();
            if n_train == 0 || n_train == n {
                log::warn!("admission cutoff {cutoff} leaves one side of the split empty");
            }
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (p, &t) in cohort.patients.iter().zip(&to_train) {
        if t {
            train.push(p.clone());
        } else {
            test.push(p.clone());
        }
    }
    Ok((cohort.with_patients(train), cohort.with_patients(test)))
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::Outcome;
    use super::*;
    use std::collections::HashSet;

    fn many(n: usize) -> Cohort {
        cohort(
            (0..n)
                .map(|i| {
                    let mut r = record(&format!("p{i}"), vec![], Outcome::Discharged);
                    r.admitted_at = Some(i as f64 * 10.0);
                    r
                })
                .collect(),
        )
    }

    #[test]
    fn fraction_one_leaves_test_empty() {
        let (train, test) = split_cohort(&many(20), SplitRule::Fraction(1.0), 3).unwrap();
        assert_eq!(train.len(), 20);
        assert!(test.is_empty());
    }

    #[test]
    fn fraction_split_is_deterministic_partition() {
        let c = many(101);
        let a = split_cohort(&c, SplitRule::Fraction(0.5), 11).unwrap();
        let b = split_cohort(&c, SplitRule::Fraction(0.5), 11).unwrap();
        assert_eq!(a, b);
        let ids_train: HashSet<_> = a.0.patients.iter().map(|p| p.id.clone()).collect();
        let ids_test: HashSet<_> = a.1.patients.iter().map(|p| p.id.clone()).collect();
        assert!(ids_train.is_disjoint(&ids_test));
        assert_eq!(ids_train.len() + ids_test.len(), 101);
    }

    #[test]
    fn cutoff_split_by_admission_time() {
        let (train, test) = split_cohort(&many(10), SplitRule::AdmissionCutoff(45.0), 0).unwrap();
        assert_eq!(train.len(), 5);
        assert_eq!(test.len(), 5);
        let (train, test) = split_cohort(&many(10), SplitRule::AdmissionCutoff(-1.0), 0).unwrap();
        assert!(train.is_empty());
        assert_eq!(test.len(), 10);
    }

    #[test]
    fn cutoff_requires_timestamps() {
        let c = cohort(vec![record("no-ts", vec![], Outcome::Icu)]);
        assert!(split_cohort(&c, SplitRule::AdmissionCutoff(1.0), 0).is_err());
    }
}
