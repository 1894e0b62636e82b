//! Metamorphic relations and their three-line Gherkin surface form.
//!
//! ```text
//! Given the ego-vehicle approaches to an intersection
//! When AutoMT adds a red light on the roadside
//! Then ego-vehicle should slow down
//! ```

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::canon::{canonicalize, indefinite_article, strip_article};
use crate::ontology::{ManipulationTarget, Slot, Taxonomy, Verb, ANY_ROADS};

/// System name rendered in the When line.
pub const DEFAULT_SYSTEM_NAME: &str = "AutoMT";

pub const SUFFIX_ON_ROAD: &str = "on the road";
pub const SUFFIX_ROADSIDE: &str = "on the roadside";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MrError {
    #[error("gherkin grammar error: {0}")]
    Grammar(String),
    #[error("{slot} value {value:?} is not in the ontology")]
    OntologyViolation { slot: Slot, value: String },
    #[error("target {target:?} takes {expected:?}, found {found:?}")]
    VerbMismatch { target: String, expected: Verb, found: Verb },
    #[error("invalid MR: {0}")]
    InvalidMr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetamorphicRelation {
    pub road_type: String,
    pub verb: Verb,
    /// Object or condition phrase, including any placement suffix.
    pub manipulation: String,
    pub expected_behavior: String,
    pub source_rule: String,
    pub region: String,
    /// Mean self-check answer score; 0 means fully consistent.
    pub hallucination_score: f64,
}

/// Placement suffix carried by a manipulation phrase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlacementSuffix {
    None,
    OnRoad,
    Roadside,
    /// Anything else after the target name, kept verbatim.
    Other(String),
}

impl PlacementSuffix {
    fn classify(rest: &str) -> Self {
        let rest = rest.trim().trim_end_matches(['.', ',', ';']).trim_end();
        match rest {
            "" => PlacementSuffix::None,
            SUFFIX_ON_ROAD => PlacementSuffix::OnRoad,
            SUFFIX_ROADSIDE => PlacementSuffix::Roadside,
            other => PlacementSuffix::Other(other.to_string()),
        }
    }

    /// Placement read off the end of a phrase without an ontology.
    pub fn of_phrase(phrase: &str) -> Self {
        let phrase = canonicalize(phrase);
        if phrase.ends_with(SUFFIX_ROADSIDE) {
            PlacementSuffix::Roadside
        } else if phrase.ends_with(SUFFIX_ON_ROAD) {
            PlacementSuffix::OnRoad
        } else {
            PlacementSuffix::None
        }
    }
}

/// Non-fatal findings from parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseWarning {
    UnknownPlacement(String),
}

/// A manipulation phrase resolved against an ontology.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedManipulation<'t> {
    pub target: &'t ManipulationTarget,
    pub suffix: PlacementSuffix,
}

/// Finds the ontology target named in `phrase`.
///
/// Accepted shapes are `[a|an|the] <target> [suffix]` and
/// `the <aspect> with [a|an] <target> [suffix]`.
pub fn resolve_manipulation<'t>(
    phrase: &str,
    taxonomy: &'t Taxonomy,
) -> Result<ResolvedManipulation<'t>, MrError> {
    let phrase = canonicalize(phrase);
    let mut candidates: Vec<&str> = Vec::with_capacity(2);
    candidates.push(strip_article(&phrase));
    if let Some(idx) = phrase.find(" with ") {
        candidates.push(strip_article(&phrase[idx + " with ".len()..]));
    }
    for candidate in candidates {
        if let Some(target) = taxonomy.longest_target_prefix(candidate) {
            let suffix = PlacementSuffix::classify(&candidate[target.name.len()..]);
            return Ok(ResolvedManipulation { target, suffix });
        }
    }
    Err(MrError::OntologyViolation { slot: Slot::Manipulation, value: phrase })
}

impl MetamorphicRelation {
    pub fn render_gherkin(&self) -> Result<String, MrError> {
        self.render_with(DEFAULT_SYSTEM_NAME)
    }

    pub fn render_with(&self, system_name: &str) -> Result<String, MrError> {
        self.check_shape()?;
        if system_name.is_empty() || system_name.contains(char::is_whitespace) {
            return Err(MrError::InvalidMr(format!("system name {system_name:?} must be one token")));
        }
        let road = if self.road_type == ANY_ROADS {
            self.road_type.clone()
        } else {
            format!("{} {}", indefinite_article(&self.road_type), self.road_type)
        };
        Ok(format!(
            "Given the ego-vehicle approaches to {road}\nWhen {system_name} {} {}\nThen ego-vehicle should {}",
            self.verb, self.manipulation, self.expected_behavior
        ))
    }

    /// Slot-level invariants that need no ontology.
    pub fn check_shape(&self) -> Result<(), MrError> {
        for (name, value) in [
            ("road_type", &self.road_type),
            ("manipulation", &self.manipulation),
            ("expected_behavior", &self.expected_behavior),
        ] {
            if value.is_empty() || canonicalize(value) != *value {
                return Err(MrError::InvalidMr(format!("{name} {value:?} is not canonical")));
            }
        }
        if !(0.0..=1.0).contains(&self.hallucination_score) {
            return Err(MrError::InvalidMr(format!(
                "hallucination score {} outside [0, 1]",
                self.hallucination_score
            )));
        }
        Ok(())
    }

    /// Full invariant check against an ontology.
    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<(), MrError> {
        self.check_shape()?;
        if !taxonomy.is_member(Slot::RoadType, &self.road_type) {
            return Err(MrError::OntologyViolation { slot: Slot::RoadType, value: self.road_type.clone() });
        }
        if !taxonomy.is_member(Slot::Behavior, &self.expected_behavior) {
            return Err(MrError::OntologyViolation {
                slot: Slot::Behavior,
                value: self.expected_behavior.clone(),
            });
        }
        let resolved = resolve_manipulation(&self.manipulation, taxonomy)?;
        let expected = resolved.target.verb();
        if expected != self.verb {
            return Err(MrError::VerbMismatch {
                target: resolved.target.name.clone(),
                expected,
                found: self.verb,
            });
        }
        Ok(())
    }

    pub fn placement(&self) -> PlacementSuffix {
        PlacementSuffix::of_phrase(&self.manipulation)
    }
}

/// Parses Gherkin text, discarding warnings.
pub fn parse_gherkin(text: &str, taxonomy: &Taxonomy) -> Result<MetamorphicRelation, MrError> {
    parse_gherkin_detailed(text, taxonomy).map(|(mr, _)| mr)
}

/// Parses the first Given/When/Then triple found in `text`.
///
/// Lines may carry list markers or bold markup. The system-name token in the
/// When line is not checked. The returned MR has an empty source rule, the
/// taxonomy's region and a score of 0.
pub fn parse_gherkin_detailed(
    text: &str,
    taxonomy: &Taxonomy,
) -> Result<(MetamorphicRelation, Vec<ParseWarning>), MrError> {
    let lines: Vec<String> = text.lines().map(clean_line).filter(|l| !l.is_empty()).collect();
    let given_at = lines
        .iter()
        .position(|l| l.starts_with("given "))
        .ok_or_else(|| MrError::Grammar("no Given line".into()))?;
    let when = lines
        .get(given_at + 1)
        .filter(|l| l.starts_with("when "))
        .ok_or_else(|| MrError::Grammar("Given line not followed by a When line".into()))?;
    let then = lines
        .get(given_at + 2)
        .filter(|l| l.starts_with("then "))
        .ok_or_else(|| MrError::Grammar("When line not followed by a Then line".into()))?;

    let road_type = parse_given(&lines[given_at])?;
    let (verb, manipulation) = parse_when(when)?;
    let expected_behavior = parse_then(then)?;

    if !taxonomy.is_member(Slot::RoadType, &road_type) {
        return Err(MrError::OntologyViolation { slot: Slot::RoadType, value: road_type });
    }
    let resolved = resolve_manipulation(&manipulation, taxonomy)?;
    if !taxonomy.is_member(Slot::Behavior, &expected_behavior) {
        return Err(MrError::OntologyViolation { slot: Slot::Behavior, value: expected_behavior });
    }
    let expected = resolved.target.verb();
    if expected != verb {
        return Err(MrError::VerbMismatch { target: resolved.target.name.clone(), expected, found: verb });
    }
    let mut warnings = Vec::new();
    if let PlacementSuffix::Other(s) = &resolved.suffix {
        warnings.push(ParseWarning::UnknownPlacement(s.clone()));
    }

    let mr = MetamorphicRelation {
        road_type,
        verb,
        manipulation,
        expected_behavior,
        source_rule: String::new(),
        region: taxonomy.region().to_string(),
        hallucination_score: 0.0,
    };
    Ok((mr, warnings))
}

fn clean_line(line: &str) -> String {
    let stripped = line.replace("**", "");
    let stripped = stripped.trim().trim_start_matches(['-', '*', '>', '•']).trim();
    canonicalize(stripped.trim_matches('"'))
}

fn trim_clause_end(s: &str) -> &str {
    s.trim().trim_end_matches(['.', ',', ';', '"']).trim_end()
}

fn parse_given(line: &str) -> Result<String, MrError> {
    let rest = line["given ".len()..].trim_start();
    let rest = rest.strip_prefix("the ").unwrap_or(rest);
    let rest = rest
        .strip_prefix("ego-vehicle approaches")
        .ok_or_else(|| MrError::Grammar(format!("malformed Given line: {line:?}")))?
        .trim_start();
    let rest = rest.strip_prefix("to ").unwrap_or(rest);
    let road = trim_clause_end(strip_article(rest));
    if road.is_empty() {
        return Err(MrError::Grammar("Given line has no road type".into()));
    }
    Ok(road.to_string())
}

fn parse_when(line: &str) -> Result<(Verb, String), MrError> {
    let mut parts = line["when ".len()..].splitn(3, ' ');
    let _system = parts.next().filter(|s| !s.is_empty());
    let verb = parts
        .next()
        .and_then(Verb::parse)
        .ok_or_else(|| MrError::Grammar(format!("When line has no adds/replaces verb: {line:?}")))?;
    let phrase = parts.next().map(trim_clause_end).unwrap_or("");
    if phrase.is_empty() {
        return Err(MrError::Grammar("When line has no manipulation".into()));
    }
    Ok((verb, phrase.to_string()))
}

fn parse_then(line: &str) -> Result<String, MrError> {
    let rest = line["then ".len()..].trim_start();
    let rest = rest.strip_prefix("the ").unwrap_or(rest);
    let rest = rest
        .strip_prefix("ego-vehicle should ")
        .ok_or_else(|| MrError::Grammar(format!("malformed Then line: {line:?}")))?;
    let behavior = trim_clause_end(rest);
    if behavior.is_empty() {
        return Err(MrError::Grammar("Then line has no behavior".into()));
    }
    Ok(behavior.to_string())
}

/// One line of MR interchange JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrRecord {
    pub gherkin: String,
    pub road_type: String,
    pub verb: Verb,
    pub manipulation: String,
    pub expected_behavior: String,
    pub source_rule: String,
    pub region: String,
    pub hallucination_score: f64,
}

impl MrRecord {
    pub fn from_mr(mr: &MetamorphicRelation) -> Result<Self, MrError> {
        Ok(MrRecord {
            gherkin: mr.render_gherkin()?,
            road_type: mr.road_type.clone(),
            verb: mr.verb,
            manipulation: mr.manipulation.clone(),
            expected_behavior: mr.expected_behavior.clone(),
            source_rule: mr.source_rule.clone(),
            region: mr.region.clone(),
            hallucination_score: mr.hallucination_score,
        })
    }

    pub fn into_mr(self) -> MetamorphicRelation {
        MetamorphicRelation {
            road_type: self.road_type,
            verb: self.verb,
            manipulation: self.manipulation,
            expected_behavior: self.expected_behavior,
            source_rule: self.source_rule,
            region: self.region,
            hallucination_score: self.hallucination_score,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RED_LIGHT: &str = "Given the ego-vehicle approaches to an intersection\n\
                             When AutoMT adds a red light on the roadside\n\
                             Then ego-vehicle should slow down";

    fn de() -> Taxonomy {
        Taxonomy::builtin("DE").unwrap()
    }

    fn red_light_mr() -> MetamorphicRelation {
        MetamorphicRelation {
            road_type: "intersection".into(),
            verb: Verb::Adds,
            manipulation: "a red light on the roadside".into(),
            expected_behavior: "slow down".into(),
            source_rule: String::new(),
            region: "DE".into(),
            hallucination_score: 0.0,
        }
    }

    #[test]
    fn renders_red_light_example() {
        assert_eq!(red_light_mr().render_gherkin().unwrap(), RED_LIGHT);
    }

    #[test]
    fn renders_any_roads_without_article() {
        let mr = MetamorphicRelation {
            road_type: "any roads".into(),
            verb: Verb::Replaces,
            manipulation: "the weather with a dust storm".into(),
            expected_behavior: "slow down".into(),
            ..red_light_mr()
        };
        let text = mr.render_gherkin().unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "Given the ego-vehicle approaches to any roads");
        assert_eq!(lines[1], "When AutoMT replaces the weather with a dust storm");
        assert!(text.ends_with("should slow down"));
        assert_eq!(parse_gherkin(&text, &de()).unwrap(), mr);
    }

    #[test]
    fn parses_red_light_example() {
        assert_eq!(parse_gherkin(RED_LIGHT, &de()).unwrap(), red_light_mr());
    }

    #[test]
    fn parses_amid_prose_and_markup() {
        let text = "Step 1: road type is intersection.\n\n**Given** the ego-vehicle approaches to an Intersection\n\
                    - **When** MyFork adds a red light on the roadside.\n  Then ego-vehicle should Slow Down.\n";
        assert_eq!(parse_gherkin(text, &de()).unwrap(), red_light_mr());
    }

    #[test]
    fn rejects_behavior_outside_ontology() {
        let text = RED_LIGHT.replace("slow down", "accelerate");
        assert_eq!(
            parse_gherkin(&text, &de()),
            Err(MrError::OntologyViolation { slot: Slot::Behavior, value: "accelerate".into() })
        );
    }

    #[test]
    fn rejects_replacing_a_pedestrian() {
        let text = "Given the ego-vehicle approaches to a crosswalk\n\
                    When AutoMT replaces a pedestrian on the road\n\
                    Then ego-vehicle should slow down";
        assert_eq!(
            parse_gherkin(text, &de()),
            Err(MrError::VerbMismatch { target: "pedestrian".into(), expected: Verb::Adds, found: Verb::Replaces })
        );
    }

    #[test]
    fn grammar_errors() {
        let t = de();
        assert!(matches!(parse_gherkin("The rule says stop.", &t), Err(MrError::Grammar(_))));
        let missing_then = "Given the ego-vehicle approaches to an intersection\nWhen AutoMT adds a red light";
        assert!(matches!(parse_gherkin(missing_then, &t), Err(MrError::Grammar(_))));
        let no_verb = "Given the ego-vehicle approaches to an intersection\nWhen AutoMT paints a red light\nThen ego-vehicle should slow down";
        assert!(matches!(parse_gherkin(no_verb, &t), Err(MrError::Grammar(_))));
    }

    #[test]
    fn unknown_road_type_is_violation() {
        let text = RED_LIGHT.replace("an intersection", "a racetrack");
        assert!(matches!(
            parse_gherkin(&text, &de()),
            Err(MrError::OntologyViolation { slot: Slot::RoadType, .. })
        ));
    }

    #[test]
    fn unknown_suffix_is_warning_only() {
        let text = "Given the ego-vehicle approaches to any roads\n\
                    When AutoMT adds a pedestrian walking close to the road edge\n\
                    Then ego-vehicle should slow down";
        let (mr, warnings) = parse_gherkin_detailed(text, &de()).unwrap();
        assert_eq!(mr.manipulation, "a pedestrian walking close to the road edge");
        assert_eq!(warnings, [ParseWarning::UnknownPlacement("walking close to the road edge".into())]);
    }

    #[test]
    fn render_rejects_bad_shapes() {
        let mut mr = red_light_mr();
        mr.hallucination_score = 1.5;
        assert!(matches!(mr.render_gherkin(), Err(MrError::InvalidMr(_))));
        let mut mr = red_light_mr();
        mr.road_type = "Intersection".into();
        assert!(matches!(mr.render_gherkin(), Err(MrError::InvalidMr(_))));
        assert!(matches!(red_light_mr().render_with("two words"), Err(MrError::InvalidMr(_))));
    }

    #[test]
    fn placement_suffixes() {
        assert_eq!(PlacementSuffix::of_phrase("a red light on the roadside"), PlacementSuffix::Roadside);
        assert_eq!(PlacementSuffix::of_phrase("a vehicle on the road"), PlacementSuffix::OnRoad);
        assert_eq!(PlacementSuffix::of_phrase("a cyclist"), PlacementSuffix::None);
    }

    #[test]
    fn record_round_trip() {
        let rec = MrRecord::from_mr(&red_light_mr()).unwrap();
        assert_eq!(rec.gherkin, RED_LIGHT);
        assert_eq!(rec.into_mr(), red_light_mr());
    }
}
