//! Follow-up validity: three binary metrics, their conjunction, batch rates
//! and the manipulation diversity count.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::canon::canonicalize;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("no verdicts to aggregate")]
    EmptyBatch,
    #[error("verdict for {0} is inconsistent: valid must equal the conjunction of the metrics")]
    Inconsistent(String),
    #[error("metric value {0} is not 0 or 1")]
    NotBinary(u8),
}

/// One line of the verdicts JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityVerdict {
    pub case_id: String,
    pub mr_index: u32,
    pub scenario: u8,
    pub logical: u8,
    pub manipulation: u8,
    pub valid: bool,
}

impl ValidityVerdict {
    pub fn new(case_id: impl Into<String>, mr_index: u32, scenario: bool, logical: bool, manipulation: bool) -> Self {
        ValidityVerdict {
            case_id: case_id.into(),
            mr_index,
            scenario: u8::from(scenario),
            logical: u8::from(logical),
            manipulation: u8::from(manipulation),
            valid: scenario && logical && manipulation,
        }
    }

    /// Checks a deserialized verdict.
    pub fn check(&self) -> Result<(), ValidationError> {
        for bit in [self.scenario, self.logical, self.manipulation] {
            if bit > 1 {
                return Err(ValidationError::NotBinary(bit));
            }
        }
        let all = self.scenario == 1 && self.logical == 1 && self.manipulation == 1;
        if all != self.valid {
            return Err(ValidationError::Inconsistent(self.case_id.clone()));
        }
        Ok(())
    }
}

/// Logical alignment passes only when the self-check score is at most
/// `max_score` (0 by default: all three answers yes).
pub fn logical_alignment_from_score(score: f64, max_score: f64) -> bool {
    score <= max_score
}

pub fn validation_rate(verdicts: &[ValidityVerdict]) -> Result<f64, ValidationError> {
    if verdicts.is_empty() {
        return Err(ValidationError::EmptyBatch);
    }
    Ok(verdicts.iter().filter(|v| v.valid).count() as f64 / verdicts.len() as f64)
}

/// Overall and per-metric pass rates of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub total: usize,
    pub valid: usize,
    pub validation_rate: f64,
    pub scenario_alignment: f64,
    pub logical_alignment: f64,
    pub manipulation_verification: f64,
}

pub fn summarize(verdicts: &[ValidityVerdict]) -> Result<ValidationSummary, ValidationError> {
    let validation_rate = validation_rate(verdicts)?;
    let n = verdicts.len() as f64;
    let rate = |f: fn(&ValidityVerdict) -> u8| verdicts.iter().map(|v| f64::from(f(v))).sum::<f64>() / n;
    Ok(ValidationSummary {
        total: verdicts.len(),
        valid: verdicts.iter().filter(|v| v.valid).count(),
        validation_rate,
        scenario_alignment: rate(|v| v.scenario),
        logical_alignment: rate(|v| v.logical),
        manipulation_verification: rate(|v| v.manipulation),
    })
}

/// Distinct canonical manipulation phrases and how often each occurs.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Diversity {
    pub distinct: usize,
    pub histogram: BTreeMap<String, usize>,
}

pub fn distinct_manipulations<'a>(phrases: impl IntoIterator<Item = &'a str>) -> Diversity {
    let mut histogram = BTreeMap::new();
    for phrase in phrases {
        *histogram.entry(canonicalize(phrase)).or_insert(0) += 1;
    }
    Diversity { distinct: histogram.len(), histogram }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec::Vec;

    #[test]
    fn conjunction() {
        assert!(ValidityVerdict::new("c", 0, true, true, true).valid);
        for flip in 0..3 {
            let bits = [flip != 0, flip != 1, flip != 2];
            let v = ValidityVerdict::new("c", 0, bits[0], bits[1], bits[2]);
            assert!(!v.valid);
            v.check().unwrap();
        }
        let mut bad = ValidityVerdict::new("c", 0, true, true, true);
        bad.logical = 0;
        assert_eq!(bad.check(), Err(ValidationError::Inconsistent("c".into())));
    }

    #[test]
    fn rates() {
        let verdicts: Vec<_> = (0..10).map(|i| ValidityVerdict::new(format!("c{i}"), i, true, i < 3, true)).collect();
        assert_eq!(validation_rate(&verdicts).unwrap(), 0.3);
        let s = summarize(&verdicts).unwrap();
        assert_eq!((s.total, s.valid), (10, 3));
        assert_eq!(s.scenario_alignment, 1.0);
        assert_eq!(s.logical_alignment, 0.3);
        assert_eq!(validation_rate(&[]), Err(ValidationError::EmptyBatch));
        let all: Vec<_> = (0..4).map(|i| ValidityVerdict::new("c", i, true, true, true)).collect();
        assert_eq!(validation_rate(&all).unwrap(), 1.0);
    }

    #[test]
    fn logical_threshold() {
        assert!(logical_alignment_from_score(0.0, 0.0));
        assert!(!logical_alignment_from_score(1.0 / 3.0, 0.0));
    }

    #[test]
    fn diversity_canonicalizes() {
        let d = distinct_manipulations(["a Pedestrian", "a  pedestrian ", "rain"]);
        assert_eq!(d.distinct, 2);
        assert_eq!(d.histogram["a pedestrian"], 2);
        assert_eq!(distinct_manipulations([]).distinct, 0);
    }
}
