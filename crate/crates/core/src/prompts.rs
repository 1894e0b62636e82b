//! Prompt templates sent to the chat and vision backends.
//!
//! Each template starts with a fixed header line; mock backends dispatch on
//! those headers, so they are part of the wire behavior.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::ontology::{Taxonomy, Verb};
use crate::scene::TestCaseRepresentation;

/// Template id of the chain-of-thought rule parser prompt.
pub const RULE_PARSER_TEMPLATE: &str = "cot-rule-parser-v1";

pub const RULE_PARSER_HEADER: &str = "# ROLE # You are an expert in traffic rules and scene analysis.";
pub const VALIDATION_HEADER: &str =
    "# CONTEXT # Based on the list of close-ended yes or no questions, generate a JSON answer.";
pub const SCENE_HEADER: &str = "# Analyze this driving scenario.";
pub const MATCH_HEADER: &str =
    "# ROLE # You are an assistant for question-answering tasks. Use the following pieces of retrieved context to answer the question.";
pub const SCENARIO_ALIGNMENT_HEADER: &str = "# JUDGE: SCENARIO ALIGNMENT #";
pub const MANIPULATION_HEADER: &str = "# JUDGE: MANIPULATION VERIFICATION #";

/// Line prefix carrying the rule in parser and validation prompts.
pub const RULE_LINE: &str = "User: Traffic rule: ";
/// Line prefix carrying the MR in the validation prompt.
pub const MR_LINE: &str = "MR: ";
/// Line prefix carrying the manipulation in the verification prompt.
pub const MANIPULATION_LINE: &str = "Manipulation: ";

pub const ONTOLOGY_ROAD_TYPES: &str = "Road Type: ";
pub const ONTOLOGY_ADDS: &str = "Manipulation (adds): ";
pub const ONTOLOGY_REPLACES: &str = "Manipulation (replaces): ";
pub const ONTOLOGY_BEHAVIORS: &str = "Ego-Vehicle Expected Behavior: ";

const KEY_CONCEPTS: &str = "# Key Concepts #
1. traffic rule: Define how the ego-vehicle should behave in the specific driving scenario.
2. Road Type: Road elements are specified in the traffic rule, such as crosswalk.
3. Manipulation: \"adds\" objects specified in the traffic rule, such as red light (those items can be added \"on the road\" or \"on the roadside\" based on prior knowledge), or \"replaces\" environmental conditions, such as a rainy day.
4. Ego-Vehicle Expected Behavior: The expected ego-vehicle behavior in the traffic rule, such as slow down, turn right.";

const EXAMPLE_RULE: &str = "Steady Red Light (Stop) Stop before entering the crosswalk or intersection";

/// Worked example shown in the parser and validation prompts.
pub fn example_mr(system_name: &str) -> String {
    format!(
        "Given the ego-vehicle approaches to an intersection\nWhen {system_name} adds a red light on the roadside\nThen ego-vehicle should slow down"
    )
}

fn join<'a>(items: impl Iterator<Item = &'a str>) -> String {
    items.collect::<Vec<_>>().join("; ")
}

/// The chain-of-thought rule parser prompt for one traffic rule.
pub fn rule_parser_prompt(rule: &str, taxonomy: &Taxonomy, system_name: &str) -> String {
    let adds = join(taxonomy.targets().iter().filter(|t| t.verb() == Verb::Adds).map(|t| t.name.as_str()));
    let replaces =
        join(taxonomy.targets().iter().filter(|t| t.verb() == Verb::Replaces).map(|t| t.name.as_str()));
    format!(
        "{RULE_PARSER_HEADER} Metamorphic Testing (MT) is a method used in autonomous vehicle testing. Your task is to convert traffic rules into structured \"Given-When-Then\" metamorphic relations (MRs) for vehicle testing.
{KEY_CONCEPTS}
# EXAMPLE #
User: Traffic rule: \"{EXAMPLE_RULE}\"
Assistant: {example}
# ONTOLOGY #
{ONTOLOGY_ROAD_TYPES}any roads; {roads}
{ONTOLOGY_ADDS}{adds}
{ONTOLOGY_REPLACES}{replaces}
{ONTOLOGY_BEHAVIORS}{behaviors}
# PROMPT #
You are given:
1. Details of the MRs: ontology elements of Road Type, Manipulation and Ego-Vehicle Expected Behavior.
2. To ensure consistency, follow a step-by-step process to extract the MR from traffic rule.
Step 1, Determine one appropriate Road Type ontology element based on the rule.
Step 2, Determine one appropriate Manipulation ontology element based on the rule.
Step 3, Determine the verb for Manipulation, use \"adds\" for objects with optional presence (e.g., pedestrians, vehicles), and \"replaces\" for objects with mandatory presence (e.g., weather, lighting conditions).
Step 4, Determine one appropriate Ego-Vehicle Expected Behavior ontology element based on the rule.
Finally, compose the MR using the selected elements in the following format:
Given the ego-vehicle approaches to <Road Type>
When {system_name} <Manipulation>
Then ego-vehicle should <Ego-Vehicle Expected Behavior>
{RULE_LINE}\"{rule}\"",
        example = example_mr(system_name),
        roads = join(taxonomy.road_types()),
        behaviors = join(taxonomy.behaviors()),
    )
}

/// The three yes/no validation questions, in order.
pub const VALIDATION_QUESTIONS: [&str; 3] = [
    "Are Road Type, Manipulation, and Ego-Vehicle Expected Behavior all mentioned in the traffic rule?",
    "Is the traffic rule supported by MR?",
    "Are all parts of the MR consistent with each other?",
];

/// The self-check validation prompt for one candidate MR.
pub fn validation_prompt(rule: &str, gherkin: &str, system_name: &str) -> String {
    format!(
        "{VALIDATION_HEADER}
{KEY_CONCEPTS}
Questions:
1. {q1}
2. {q2}
3. {q3}
# EXAMPLE #
User: Traffic rule: \"{EXAMPLE_RULE}\",
MR: \"{example}\"
Assistant: [\"yes\", \"yes\", \"yes\"]
# PROMPT #
{RULE_LINE}\"{rule}\",
{MR_LINE}\"{gherkin}\"",
        q1 = VALIDATION_QUESTIONS[0],
        q2 = VALIDATION_QUESTIONS[1],
        q3 = VALIDATION_QUESTIONS[2],
        example = example_mr(system_name),
    )
}

/// The scene-analysis prompt; images travel alongside it.
pub fn scene_prompt() -> String {
    format!(
        "{SCENE_HEADER} Describe the time of day, weather conditions, road type (such as intersection, crosswalk, etc.), and any objects around the ego-vehicle. Reply format: time: , weather: , road type: , objects: "
    )
}

/// One retrieved MR as shown to the match prompt.
#[derive(Debug, Clone)]
pub struct MatchCandidate<'a> {
    pub index: u32,
    pub gherkin: &'a str,
    pub road_type: &'a str,
    pub manipulation: &'a str,
    pub expected_behavior: &'a str,
    pub execution_count: u64,
}

/// Candidate line format: `Index: 3 | Road Type: .. | Manipulation: .. | Expected Behavior: .. | Execution Count: 0 | MR: ..`
pub fn match_prompt(rep: &TestCaseRepresentation, candidates: &[MatchCandidate<'_>]) -> String {
    let mut context = String::new();
    for c in candidates {
        context.push_str(&format!(
            "Index: {} | Road Type: {} | Manipulation: {} | Expected Behavior: {} | Execution Count: {} | MR: {}\n",
            c.index,
            c.road_type,
            c.manipulation,
            c.expected_behavior,
            c.execution_count,
            c.gherkin.replace('\n', " / ")
        ));
    }
    format!(
        "{MATCH_HEADER}
# RETRIEVED CONTEXT #
{context}# PROMPT #
Given the test case description below, select one MR from the retrieved context where:
1. The Time, Weather, Road type, and Objects in the test case description should best match those in the MR.
2. Ego-vehicle's speed and steering angle should match in this MR.
3. Among all matched MRs, prefer the one with the lowest Execution Count value.
Reply with the chosen MR as \"Index: <number>\".
User: {description}",
        description = rep.describe().replace('\n', "; "),
    )
}

/// Judge prompt comparing the road type of a source and a follow-up frame.
pub fn scenario_alignment_prompt() -> String {
    format!(
        "{SCENARIO_ALIGNMENT_HEADER}
The first image is from the source driving video and the second from the follow-up video.
Is the road type (for example intersection, crosswalk, field path) the same in both images?
Answer with a single word: yes or no."
    )
}

/// Judge prompt for whether the visual change realizes the manipulation.
pub fn manipulation_verification_prompt(manipulation: &str, verb: Verb) -> String {
    format!(
        "{MANIPULATION_HEADER}
The first image is the original frame and the second is the edited frame.
Does the visual change between them align with the requested edit?
Verb: {verb}
{MANIPULATION_LINE}\"{manipulation}\"
Answer with a single word: yes or no."
    )
}

/// Extracts the quoted value after a line prefix, e.g. the rule text.
pub fn quoted_after<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    let line = prompt.lines().rev().find(|l| l.starts_with(prefix))?;
    let rest = line[prefix.len()..].trim().trim_end_matches(',');
    Some(rest.strip_prefix('"').and_then(|r| r.strip_suffix('"')).unwrap_or(rest))
}

/// Extracts the quoted (possibly multi-line) MR from a validation prompt.
pub fn quoted_block_after<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    let at = prompt.rfind(&format!("\n{prefix}\""))? + 1 + prefix.len() + 1;
    let rest = &prompt[at..];
    let end = rest.rfind('"')?;
    Some(&rest[..end])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_prompt_carries_rule_and_ontology() {
        let t = Taxonomy::builtin("DE").unwrap();
        let p = rule_parser_prompt("Stop at the red light.", &t, "AutoMT");
        assert!(p.starts_with(RULE_PARSER_HEADER));
        assert_eq!(quoted_after(&p, RULE_LINE), Some("Stop at the red light."));
        let roads = p.lines().find(|l| l.starts_with(ONTOLOGY_ROAD_TYPES)).unwrap();
        assert!(roads.contains("field path"));
        assert!(p.lines().any(|l| l.starts_with(ONTOLOGY_REPLACES) && l.contains("rain")));
    }

    #[test]
    fn validation_prompt_round_trips_mr() {
        let mr = example_mr("AutoMT");
        let p = validation_prompt("Yield to pedestrians.", &mr, "AutoMT");
        assert!(p.starts_with(VALIDATION_HEADER));
        assert_eq!(quoted_after(&p, RULE_LINE), Some("Yield to pedestrians."));
        assert_eq!(quoted_block_after(&p, MR_LINE), Some(mr.as_str()));
        for q in VALIDATION_QUESTIONS {
            assert!(p.contains(q));
        }
    }

    #[test]
    fn verification_prompt_carries_manipulation() {
        let p = manipulation_verification_prompt("a red light on the roadside", Verb::Adds);
        assert_eq!(quoted_after(&p, MANIPULATION_LINE), Some("a red light on the roadside"));
    }
}
