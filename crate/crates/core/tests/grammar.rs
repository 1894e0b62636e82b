use automt_core::canon::indefinite_article;
use automt_core::mr::{parse_gherkin, parse_gherkin_detailed, ParseWarning, SUFFIX_ON_ROAD, SUFFIX_ROADSIDE};
use automt_core::ontology::ANY_ROADS;
use automt_core::{MetamorphicRelation, MrError, Slot, Taxonomy, Verb};
use proptest::prelude::*;

fn taxonomies() -> [Taxonomy; 2] {
    [Taxonomy::builtin("DE").unwrap(), Taxonomy::builtin("CA").unwrap()]
}

fn manipulation_phrase(verb: Verb, name: &str, style: u8) -> String {
    match (verb, style % 3) {
        (Verb::Adds, 0) => format!("{} {name}", indefinite_article(name)),
        (Verb::Adds, 1) => format!("{} {name} {SUFFIX_ON_ROAD}", indefinite_article(name)),
        (Verb::Adds, _) => format!("{} {name} {SUFFIX_ROADSIDE}", indefinite_article(name)),
        (Verb::Replaces, 0) => format!("the weather with {name}"),
        (Verb::Replaces, 1) => format!("the road surface with {name}"),
        (Verb::Replaces, _) => format!("the {name}"),
    }
}

fn arb_mr() -> impl Strategy<Value = (usize, MetamorphicRelation)> {
    (0usize..2, any::<prop::sample::Index>(), any::<prop::sample::Index>(), any::<prop::sample::Index>(), any::<u8>())
        .prop_map(|(t, road, target, behavior, style)| {
            let tax = &taxonomies()[t];
            let mut roads: Vec<&str> = tax.road_types().collect();
            roads.push(ANY_ROADS);
            let behaviors: Vec<&str> = tax.behaviors().collect();
            let target = target.get(tax.targets());
            let verb = target.verb();
            let mr = MetamorphicRelation {
                road_type: road.get(&roads).to_string(),
                verb,
                manipulation: manipulation_phrase(verb, &target.name, style),
                expected_behavior: behavior.get(&behaviors).to_string(),
                source_rule: String::new(),
                region: tax.region().to_string(),
                hallucination_score: 0.0,
            };
            (t, mr)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn render_then_parse_is_identity((t, mr) in arb_mr()) {
        let tax = &taxonomies()[t];
        mr.validate(tax).unwrap();
        let text = mr.render_gherkin().unwrap();
        let (back, warnings) = parse_gherkin_detailed(&text, tax).unwrap();
        prop_assert_eq!(&back, &mr);
        prop_assert!(warnings.is_empty());
    }

    #[test]
    fn parse_tolerates_markup_and_case((t, mr) in arb_mr(), bullets in any::<bool>()) {
        let tax = &taxonomies()[t];
        let text = mr.render_with("Tester").unwrap();
        let decorated: String = text
            .lines()
            .map(|l| if bullets { format!("- **{}**  ", l.to_uppercase()) } else { format!("  {l}.") })
            .collect::<Vec<_>>()
            .join("\n");
        let wrapped = format!("Here is the MR:\n\n{decorated}\n\nDone.");
        prop_assert_eq!(parse_gherkin(&wrapped, tax).unwrap(), mr);
    }

    #[test]
    fn arbitrary_text_never_panics(s in "\\PC{0,200}") {
        let tax = Taxonomy::builtin("DE").unwrap();
        let _ = parse_gherkin(&s, &tax);
    }
}

#[test]
fn rendered_shape() {
    let mr = MetamorphicRelation {
        road_type: "intersection".into(),
        verb: Verb::Adds,
        manipulation: "a red light on the roadside".into(),
        expected_behavior: "slow down".into(),
        source_rule: String::new(),
        region: "DE".into(),
        hallucination_score: 0.0,
    };
    assert_eq!(
        mr.render_gherkin().unwrap(),
        "Given the ego-vehicle approaches to an intersection\nWhen AutoMT adds a red light on the roadside\nThen ego-vehicle should slow down"
    );
}

#[test]
fn rejections() {
    let tax = Taxonomy::builtin("DE").unwrap();
    let ok = "Given the ego-vehicle approaches to a tunnel\nWhen AutoMT adds a vehicle on the road\nThen ego-vehicle should slow down";
    parse_gherkin(ok, &tax).unwrap();

    let road = ok.replace("a tunnel", "a highway");
    assert_eq!(
        parse_gherkin(&road, &tax),
        Err(MrError::OntologyViolation { slot: Slot::RoadType, value: "highway".into() })
    );
    let verb = ok.replace("adds a vehicle", "replaces a vehicle");
    assert!(matches!(parse_gherkin(&verb, &tax), Err(MrError::VerbMismatch { expected: Verb::Adds, .. })));
    let behavior = ok.replace("slow down", "honk");
    assert!(matches!(parse_gherkin(&behavior, &tax), Err(MrError::OntologyViolation { slot: Slot::Behavior, .. })));
    let missing = ok.replace("\nThen ego-vehicle should slow down", "");
    assert!(matches!(parse_gherkin(&missing, &tax), Err(MrError::Grammar(_))));
    assert!(matches!(parse_gherkin("The car should stop.", &tax), Err(MrError::Grammar(_))));
}

#[test]
fn unknown_placement_is_a_warning() {
    let tax = Taxonomy::builtin("DE").unwrap();
    let text = "Given the ego-vehicle approaches to any roads\nWhen AutoMT adds a pedestrian near the kerb\nThen ego-vehicle should slow down";
    let (mr, warnings) = parse_gherkin_detailed(text, &tax).unwrap();
    assert_eq!(mr.manipulation, "a pedestrian near the kerb");
    assert_eq!(warnings, [ParseWarning::UnknownPlacement("near the kerb".into())]);
}
