//! Structured test-case representations built from a vision reply plus
//! ground-truth ego telemetry.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canon::canonicalize;
use crate::stats::median;

/// km/h per m/s.
pub const KMH_PER_MPS: f64 = 3.6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SceneError {
    #[error("scene reply is missing the {0:?} field")]
    MalformedSceneReply(&'static str),
    #[error("telemetry is empty")]
    EmptyTelemetry,
    #[error("telemetry length mismatch: {speed} speeds, {steering} steering angles")]
    TelemetryLength { speed: usize, steering: usize },
    #[error("representation JSON: {0}")]
    Json(String),
}

/// Per-frame ego telemetry of a source case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub speed_mps: Vec<f64>,
    pub steering_rad: Vec<f64>,
}

impl Telemetry {
    pub fn new(speed_mps: Vec<f64>, steering_rad: Vec<f64>) -> Result<Self, SceneError> {
        let t = Telemetry { speed_mps, steering_rad };
        t.check()?;
        Ok(t)
    }

    pub fn check(&self) -> Result<(), SceneError> {
        if self.speed_mps.len() != self.steering_rad.len() {
            return Err(SceneError::TelemetryLength {
                speed: self.speed_mps.len(),
                steering: self.steering_rad.len(),
            });
        }
        if self.speed_mps.is_empty() {
            return Err(SceneError::EmptyTelemetry);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.speed_mps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speed_mps.is_empty()
    }
}

/// The four fields of a vision-backend scene description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneFields {
    pub time: String,
    pub weather: String,
    pub road_type: String,
    pub objects: String,
}

const SCENE_KEYS: [&str; 4] = ["time:", "weather:", "road type:", "objects:"];

/// Parses a `time: , weather: , road type: , objects:` reply.
///
/// Keys are case-insensitive and may appear on one line or several. Each
/// value runs to the next key; anything after `objects:` stays in objects.
pub fn parse_scene_reply(reply: &str) -> Result<SceneFields, SceneError> {
    let lower = reply.to_ascii_lowercase();
    let mut found: [Option<(usize, usize)>; 4] = [None; 4];
    for (slot, key) in SCENE_KEYS.iter().enumerate() {
        found[slot] = find_key(&lower, key).map(|at| (at, at + key.len()));
    }
    let mut spans = [(0usize, 0usize); 4];
    for (slot, key) in SCENE_KEYS.iter().enumerate() {
        let (start, value_start) =
            found[slot].ok_or(SceneError::MalformedSceneReply(key.trim_end_matches(':')))?;
        let end = found
            .iter()
            .flatten()
            .map(|&(s, _)| s)
            .filter(|&s| s > start)
            .min()
            .unwrap_or(reply.len());
        spans[slot] = (value_start, end);
    }
    let value = |slot: usize| {
        let (a, b) = spans[slot];
        reply[a..b].trim().trim_end_matches([',', ';']).trim().to_string()
    };
    Ok(SceneFields {
        time: value(0),
        weather: value(1),
        road_type: canonicalize(&value(2)),
        objects: value(3),
    })
}

fn find_key(haystack: &str, key: &str) -> Option<usize> {
    let mut from = 0;
    while let Some(rel) = haystack[from..].find(key) {
        let at = from + rel;
        let boundary = haystack[..at].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        if boundary {
            return Some(at);
        }
        from = at + key.len();
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCaseRepresentation {
    pub time: String,
    pub weather: String,
    pub road_type: String,
    pub objects: String,
    /// Median ego speed over frames, m/s.
    pub ego_speed_mps: f64,
    /// Median ego steering over frames, radians.
    pub ego_steering_rad: f64,
}

impl TestCaseRepresentation {
    pub fn ego_speed_kmh(&self) -> f64 {
        KMH_PER_MPS * self.ego_speed_mps
    }

    /// Text used as the retrieval query and shown to the match prompt.
    pub fn describe(&self) -> String {
        format!(
            "Time: {}\nWeather: {}\nRoad type: {}\nObjects: {}\nEgo-vehicle speed: {:.3} km/h\nEgo-vehicle steering angle: {:.3} rad",
            self.time,
            self.weather,
            self.road_type,
            self.objects,
            self.ego_speed_kmh(),
            self.ego_steering_rad
        )
    }
}

/// Combines scene fields with median telemetry.
pub fn build_representation(
    telemetry: &Telemetry,
    fields: SceneFields,
) -> Result<TestCaseRepresentation, SceneError> {
    telemetry.check()?;
    let speed = median(&telemetry.speed_mps).ok_or(SceneError::EmptyTelemetry)?;
    let steering = median(&telemetry.steering_rad).ok_or(SceneError::EmptyTelemetry)?;
    Ok(TestCaseRepresentation {
        time: fields.time,
        weather: fields.weather,
        road_type: canonicalize(&fields.road_type),
        objects: fields.objects,
        ego_speed_mps: speed,
        ego_steering_rad: steering,
    })
}

#[derive(Serialize, Deserialize)]
struct RepresentationLine {
    case_id: String,
    #[serde(rename = "Test Case Representation")]
    body: RepresentationBody,
}

#[derive(Serialize, Deserialize)]
struct RepresentationBody {
    #[serde(rename = "Time")]
    time: String,
    #[serde(rename = "Weather")]
    weather: String,
    #[serde(rename = "RoadType")]
    road_type: String,
    #[serde(rename = "Objects")]
    objects: String,
    #[serde(rename = "EgoVehicle")]
    ego: EgoBody,
}

#[derive(Serialize, Deserialize)]
struct EgoBody {
    #[serde(rename = "Speed")]
    speed: String,
    #[serde(rename = "Steering Angle")]
    steering: String,
    /// Exact values; the display strings above are rounded.
    #[serde(rename = "SpeedMps")]
    speed_mps: f64,
    #[serde(rename = "SteeringRad")]
    steering_rad: f64,
}

/// One representations-JSONL line (no trailing newline).
pub fn representation_to_json(case_id: &str, rep: &TestCaseRepresentation) -> String {
    let line = RepresentationLine {
        case_id: case_id.to_string(),
        body: RepresentationBody {
            time: rep.time.clone(),
            weather: rep.weather.clone(),
            road_type: rep.road_type.clone(),
            objects: rep.objects.clone(),
            ego: EgoBody {
                speed: format!("{:.3} km/h", rep.ego_speed_kmh()),
                steering: format!("{:.3} rad", rep.ego_steering_rad),
                speed_mps: rep.ego_speed_mps,
                steering_rad: rep.ego_steering_rad,
            },
        },
    };
    serde_json::to_string(&line).expect("representation serializes")
}

pub fn representation_from_json(line: &str) -> Result<(String, TestCaseRepresentation), SceneError> {
    let parsed: RepresentationLine =
        serde_json::from_str(line).map_err(|e| SceneError::Json(e.to_string()))?;
    let b = parsed.body;
    Ok((
        parsed.case_id,
        TestCaseRepresentation {
            time: b.time,
            weather: b.weather,
            road_type: canonicalize(&b.road_type),
            objects: b.objects,
            ego_speed_mps: b.ego.speed_mps,
            ego_steering_rad: b.ego.steering_rad,
        },
    ))
}
