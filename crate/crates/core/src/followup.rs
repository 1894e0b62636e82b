//! Matching MRs to test cases and planning the image manipulation.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canon::canonicalize;
use crate::mr::{MetamorphicRelation, PlacementSuffix};
use crate::ontology::{Verb, ANY_ROADS};
use crate::retrieval::StoredMr;
use crate::scene::TestCaseRepresentation;

/// Segmentation classes treated as dynamic agents when building add masks.
pub const DEFAULT_MASK_CLASSES: [&str; 8] =
    ["person", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    OnRoad,
    Roadside,
    Global,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::OnRoad => "on_road",
            Placement::Roadside => "roadside",
            Placement::Global => "global",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Editable region excludes pixels of the mask classes.
    SegmentationFree,
    /// Global edit, no mask.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManipulationPlan {
    pub verb: Verb,
    pub instruction: String,
    pub placement: Placement,
    pub mask_policy: MaskPolicy,
    pub mask_classes: Vec<String>,
}

impl ManipulationPlan {
    pub fn is_consistent(&self) -> bool {
        match self.verb {
            Verb::Replaces => self.placement == Placement::Global && self.mask_policy == MaskPolicy::None,
            Verb::Adds => self.mask_policy == MaskPolicy::SegmentationFree && !self.mask_classes.is_empty(),
        }
    }
}

/// Lifts the MR's manipulation into an edit plan. Adds without a placement
/// suffix go on the road.
pub fn plan_manipulation(mr: &MetamorphicRelation) -> ManipulationPlan {
    match mr.verb {
        Verb::Replaces => ManipulationPlan {
            verb: Verb::Replaces,
            instruction: mr.manipulation.clone(),
            placement: Placement::Global,
            mask_policy: MaskPolicy::None,
            mask_classes: Vec::new(),
        },
        Verb::Adds => ManipulationPlan {
            verb: Verb::Adds,
            instruction: mr.manipulation.clone(),
            placement: match mr.placement() {
                PlacementSuffix::Roadside => Placement::Roadside,
                _ => Placement::OnRoad,
            },
            mask_policy: MaskPolicy::SegmentationFree,
            mask_classes: DEFAULT_MASK_CLASSES.iter().map(|s| s.to_string()).collect(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplicabilityThresholds {
    /// Minimum ego speed for a slow-down MR, m/s.
    pub v_min: f64,
    /// Speeds within this of zero count as stationary, m/s.
    pub epsilon: f64,
}

impl Default for ApplicabilityThresholds {
    fn default() -> Self {
        ApplicabilityThresholds { v_min: 1.0, epsilon: 0.05 }
    }
}

/// Why an MR does not apply to a test case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inapplicable {
    TooSlowToSlowDown,
    StationaryKeepCurrent,
    RoadTypeMismatch,
}

pub fn applicability(
    rep: &TestCaseRepresentation,
    mr: &MetamorphicRelation,
    thresholds: &ApplicabilityThresholds,
) -> Result<(), Inapplicable> {
    let behavior = canonicalize(&mr.expected_behavior);
    if behavior == "slow down" && rep.ego_speed_mps < thresholds.v_min {
        return Err(Inapplicable::TooSlowToSlowDown);
    }
    if behavior == "keep current" && rep.ego_speed_mps.abs() <= thresholds.epsilon {
        return Err(Inapplicable::StationaryKeepCurrent);
    }
    let road = canonicalize(&mr.road_type);
    if road != ANY_ROADS && road != canonicalize(&rep.road_type) {
        return Err(Inapplicable::RoadTypeMismatch);
    }
    Ok(())
}

pub fn applicability_filter(
    rep: &TestCaseRepresentation,
    mr: &MetamorphicRelation,
    thresholds: &ApplicabilityThresholds,
) -> bool {
    applicability(rep, mr, thresholds).is_ok()
}

/// Reads the MR index a model picked, from `Index: 3`, `index #3` or a bare
/// number.
pub fn parse_match_reply(reply: &str) -> Option<u32> {
    let lower = reply.to_ascii_lowercase();
    if let Some(at) = lower.find("index") {
        let rest = lower[at + "index".len()..].trim_start_matches([' ', ':', '=', '#', '*', '"']);
        return leading_number(rest);
    }
    leading_number(lower.trim())
}

fn leading_number(s: &str) -> Option<u32> {
    let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    s[..end].parse().ok()
}

/// Picks among ranked survivors: the model's choice if it names one of them,
/// otherwise the first survivor.
pub fn choose_survivor(survivors: &[&StoredMr], model_choice: Option<u32>) -> Option<usize> {
    if survivors.is_empty() {
        return None;
    }
    model_choice
        .and_then(|idx| survivors.iter().position(|s| s.index == idx))
        .or(Some(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn mr(road: &str, verb: Verb, manipulation: &str, behavior: &str) -> MetamorphicRelation {
        MetamorphicRelation {
            road_type: road.into(),
            verb,
            manipulation: manipulation.into(),
            expected_behavior: behavior.into(),
            source_rule: String::new(),
            region: "CA".into(),
            hallucination_score: 0.0,
        }
    }

    fn rep(road: &str, speed: f64) -> TestCaseRepresentation {
        TestCaseRepresentation {
            time: "Afternoon".into(),
            weather: "Clear".into(),
            road_type: road.into(),
            objects: "cars".into(),
            ego_speed_mps: speed,
            ego_steering_rad: 0.0,
        }
    }

    #[test]
    fn plans() {
        let p = plan_manipulation(&mr("intersection", Verb::Adds, "a red light on the roadside", "slow down"));
        assert_eq!(p.placement, Placement::Roadside);
        assert_eq!(p.mask_policy, MaskPolicy::SegmentationFree);
        assert_eq!(p.mask_classes.len(), 8);
        assert!(p.is_consistent());

        let p = plan_manipulation(&mr("any roads", Verb::Replaces, "the weather with a dust storm", "slow down"));
        assert_eq!((p.placement, p.mask_policy), (Placement::Global, MaskPolicy::None));
        assert!(p.mask_classes.is_empty());
        assert!(p.is_consistent());

        let p = plan_manipulation(&mr("crosswalk", Verb::Adds, "a pedestrian", "slow down"));
        assert_eq!(p.placement, Placement::OnRoad);
        let p = plan_manipulation(&mr("crosswalk", Verb::Adds, "a vehicle on the road", "slow down"));
        assert_eq!(p.placement, Placement::OnRoad);
    }

    #[test]
    fn applicability_rules() {
        let th = ApplicabilityThresholds::default();
        let slow = mr("any roads", Verb::Adds, "a pedestrian", "slow down");
        assert!(!applicability_filter(&rep("intersection", 0.0), &slow, &th));
        assert!(applicability_filter(&rep("intersection", 10.0), &slow, &th));
        let keep = mr("intersection", Verb::Adds, "a green light", "keep current");
        assert_eq!(applicability(&rep("intersection", 0.0), &keep, &th), Err(Inapplicable::StationaryKeepCurrent));
        assert!(applicability_filter(&rep("intersection", 0.5), &keep, &th));
        assert_eq!(
            applicability(&rep("field path", 5.0), &keep, &th),
            Err(Inapplicable::RoadTypeMismatch)
        );
    }

    #[test]
    fn match_replies() {
        assert_eq!(parse_match_reply("Index: 3"), Some(3));
        assert_eq!(parse_match_reply("I pick **Index** #12 because..."), Some(12));
        assert_eq!(parse_match_reply("7"), Some(7));
        assert_eq!(parse_match_reply("none fits"), None);
    }

    fn stored(index: u32, count: u64) -> StoredMr {
        StoredMr {
            index,
            mr: mr("any roads", Verb::Adds, "a pedestrian", "slow down"),
            embedding: vec![1.0],
            execution_count: count,
        }
    }

    #[test]
    fn survivor_choice() {
        let (a, b) = (stored(4, 1), stored(9, 3));
        let survivors = [&a, &b];
        assert_eq!(choose_survivor(&survivors, Some(9)), Some(1));
        assert_eq!(choose_survivor(&survivors, Some(999)), Some(0));
        assert_eq!(choose_survivor(&survivors, None), Some(0));
        assert_eq!(choose_survivor(&[], Some(4)), None);
    }
}
