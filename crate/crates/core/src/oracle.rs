//! Variance-band violation oracle.
//!
//! Each ADS's per-frame predictions are reduced to medians. The medians of
//! all ADSs on the source case define a band `mean ± k·std` (population std)
//! per channel, and each ADS's follow-up medians are judged against those
//! shared bands with a rule per expected behavior:
//!
//! | behavior     | satisfied iff                                   |
//! |--------------|-------------------------------------------------|
//! | slow down    | speed < speed.lower                             |
//! | keep current | speed in [lower, upper] and steering in [lower, upper] |
//! | turn left    | steering beyond the band on the left, past zero |
//! | turn right   | steering beyond the band on the right, past zero |

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::canon::canonicalize;
use crate::stats::{mean, median, population_std};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("prediction series is empty")]
    EmptySeries,
    #[error("prediction series lengths differ: {speed} speeds, {steering} steering angles")]
    SeriesLength { speed: usize, steering: usize },
    #[error("need predictions from at least 2 ADSs, got {0}")]
    TooFewPredictors(usize),
    #[error("unknown expected behavior {0:?}")]
    UnknownBehavior(String),
    #[error("band factor must be finite and non-negative")]
    InvalidBandFactor,
    #[error("no verdicts to aggregate")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSeries {
    pub ads_id: String,
    pub case_id: String,
    pub speed_mps: Vec<f64>,
    pub steering_rad: Vec<f64>,
}

/// Per-channel medians of one prediction series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub speed_mps: f64,
    pub steering_rad: f64,
}

pub fn summarize(series: &PredictionSeries) -> Result<Summary, OracleError> {
    if series.speed_mps.len() != series.steering_rad.len() {
        return Err(OracleError::SeriesLength {
            speed: series.speed_mps.len(),
            steering: series.steering_rad.len(),
        });
    }
    let speed = median(&series.speed_mps).ok_or(OracleError::EmptySeries)?;
    let steering = median(&series.steering_rad).ok_or(OracleError::EmptySeries)?;
    Ok(Summary { speed_mps: speed, steering_rad: steering })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Speed,
    Steering,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBand {
    pub channel: Channel,
    pub mean: f64,
    pub std: f64,
    pub lower: f64,
    pub upper: f64,
}

impl VarianceBand {
    fn from_values(channel: Channel, values: &[f64], k: f64) -> Self {
        let m = mean(values).unwrap_or(0.0);
        let std = population_std(values, m);
        VarianceBand { channel, mean: m, std, lower: m - k * std, upper: m + k * std }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// Default band half-width in standard deviations.
pub const DEFAULT_BAND_K: f64 = 1.0;

/// Speed and steering bands from every ADS's source-case summary.
pub fn bands_from_source(summaries: &[Summary], k: f64) -> Result<(VarianceBand, VarianceBand), OracleError> {
    if !(k.is_finite() && k >= 0.0) {
        return Err(OracleError::InvalidBandFactor);
    }
    if summaries.len() < 2 {
        return Err(OracleError::TooFewPredictors(summaries.len()));
    }
    let speeds: Vec<f64> = summaries.iter().map(|s| s.speed_mps).collect();
    let steering: Vec<f64> = summaries.iter().map(|s| s.steering_rad).collect();
    Ok((
        VarianceBand::from_values(Channel::Speed, &speeds, k),
        VarianceBand::from_values(Channel::Steering, &steering, k),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Behavior {
    #[serde(rename = "slow down")]
    SlowDown,
    #[serde(rename = "keep current")]
    KeepCurrent,
    #[serde(rename = "turn left")]
    TurnLeft,
    #[serde(rename = "turn right")]
    TurnRight,
}

impl Behavior {
    pub const ALL: [Behavior; 4] = [Behavior::SlowDown, Behavior::KeepCurrent, Behavior::TurnLeft, Behavior::TurnRight];

    pub fn parse(s: &str) -> Result<Behavior, OracleError> {
        match canonicalize(s).as_str() {
            "slow down" => Ok(Behavior::SlowDown),
            "keep current" => Ok(Behavior::KeepCurrent),
            "turn left" => Ok(Behavior::TurnLeft),
            "turn right" => Ok(Behavior::TurnRight),
            _ => Err(OracleError::UnknownBehavior(s.to_string())),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::SlowDown => "slow down",
            Behavior::KeepCurrent => "keep current",
            Behavior::TurnLeft => "turn left",
            Behavior::TurnRight => "turn right",
        }
    }
}

impl fmt::Display for Behavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which steering sign means a left turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignConvention {
    #[default]
    LeftPositive,
    RightPositive,
}

/// Whether the follow-up summary satisfies the behavior rule.
pub fn satisfies(
    behavior: Behavior,
    followup: Summary,
    speed: &VarianceBand,
    steering: &VarianceBand,
    sign: SignConvention,
) -> bool {
    let s = followup.steering_rad;
    let beyond_positive = s > steering.upper.max(0.0);
    let beyond_negative = s < steering.lower.min(0.0);
    match (behavior, sign) {
        (Behavior::SlowDown, _) => followup.speed_mps < speed.lower,
        (Behavior::KeepCurrent, _) => speed.contains(followup.speed_mps) && steering.contains(s),
        (Behavior::TurnLeft, SignConvention::LeftPositive) | (Behavior::TurnRight, SignConvention::RightPositive) => {
            beyond_positive
        }
        (Behavior::TurnLeft, SignConvention::RightPositive) | (Behavior::TurnRight, SignConvention::LeftPositive) => {
            beyond_negative
        }
    }
}

/// The speed and steering bands of one source case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub speed: VarianceBand,
    pub steering: VarianceBand,
}

/// One line of the violations JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationVerdict {
    pub ads_id: String,
    pub case_id: String,
    pub behavior: Behavior,
    pub violated: bool,
    pub bands: Bands,
    pub observed: Summary,
}

pub fn judge(
    ads_id: &str,
    case_id: &str,
    behavior: Behavior,
    followup: Summary,
    bands: (VarianceBand, VarianceBand),
    sign: SignConvention,
) -> ViolationVerdict {
    let (speed, steering) = bands;
    ViolationVerdict {
        ads_id: ads_id.to_string(),
        case_id: case_id.to_string(),
        behavior,
        violated: !satisfies(behavior, followup, &speed, &steering, sign),
        bands: Bands { speed, steering },
        observed: followup,
    }
}

/// Fraction of verdicts that are violations.
pub fn violation_rate(verdicts: &[ViolationVerdict]) -> Result<f64, OracleError> {
    if verdicts.is_empty() {
        return Err(OracleError::EmptyBatch);
    }
    let violated = verdicts.iter().filter(|v| v.violated).count();
    Ok(violated as f64 / verdicts.len() as f64)
}
