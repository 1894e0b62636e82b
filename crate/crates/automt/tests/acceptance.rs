//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//!     cargo test -p automt --test acceptance -- --nocapture

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use automt::backends::mock::{MockSpec, PredictRule};
use automt::backends::{Backend, EndpointSettings, Kind, MockRegistry};
use automt::config::{EmbedText, RunConfig};
use automt::evaluate::{evaluate_batch, EvaluateOptions};
use automt::followup::{match_mr, FollowupStatus, Lineage, ManifestEntry, MatchOptions, CASES_DIR, LINEAGE_FILE};
use automt::image::Image;
use automt::pipeline::Pipeline;
use automt::report::{render_markdown, GenerationCounts, Report, ReportInputs, StatsSection};
use automt::scene::{frame_name, load_corpus, TELEMETRY_FILE};
use automt::store::MrStore;
use automt::synth::{write_corpus, write_rules};
use automt::validation::{diversity, ValidationReport};
use automt_core::canon::indefinite_article;
use automt_core::hashing::Stream;
use automt_core::mr::{parse_gherkin_detailed, SUFFIX_ON_ROAD, SUFFIX_ROADSIDE};
use automt_core::ontology::ANY_ROADS;
use automt_core::oracle::{bands_from_source, judge, Behavior, SignConvention, Summary};
use automt_core::retrieval::{cosine, rank, StoredMr};
use automt_core::scene::{Telemetry, TestCaseRepresentation};
use automt_core::selfcheck::{answers_to_score, select_winner, Answer};
use automt_core::stats::{weighted_fleiss_kappa, welch_t_test, KappaWeights, RatingTable};
use automt_core::validation::{summarize, validation_rate, ValidityVerdict};
use automt_core::{MetamorphicRelation, Taxonomy, Verb};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(name: &str, elapsed: Duration, budget_s: u64) -> Result<(), String> {
    if elapsed.as_secs_f64() >= budget_s as f64 {
        return Err(format!("{name} took {elapsed:.2?}, budget {budget_s} s"));
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("grammar round-trip", grammar_round_trip),
        ("selfcheck lattice", selfcheck_lattice),
        ("retrieval order", retrieval_order),
        ("execution-count preference", execution_count_preference),
        ("oracle truth table", oracle_truth_table),
        ("end-to-end determinism", end_to_end_determinism),
        ("scripted-violation reproduction", scripted_violations),
        ("validation-rate conjunction", validation_conjunction),
        ("diversity counter", diversity_counter),
        ("statistics", statistics),
    ];
    // `cargo test -- --list` and filters from the default harness.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (name, _) in &criteria {
            println!("{name}: test");
        }
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2} s): {why}");
            }
        }
    }
    println!("\n{} of {ran} acceptance criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

// ---- grammar ---------------------------------------------------------------

fn random_mr(rng: &mut Stream, tax: &Taxonomy) -> MetamorphicRelation {
    let mut roads: Vec<&str> = tax.road_types().collect();
    roads.push(ANY_ROADS);
    let behaviors: Vec<&str> = tax.behaviors().collect();
    let target = &tax.targets()[rng.next_index(tax.targets().len())];
    let verb = target.verb();
    let name = &target.name;
    let manipulation = match (verb, rng.next_index(3)) {
        (Verb::Adds, 0) => format!("{} {name}", indefinite_article(name)),
        (Verb::Adds, 1) => format!("{} {name} {SUFFIX_ON_ROAD}", indefinite_article(name)),
        (Verb::Adds, _) => format!("{} {name} {SUFFIX_ROADSIDE}", indefinite_article(name)),
        (Verb::Replaces, 0) => format!("the weather with {name}"),
        (Verb::Replaces, 1) => format!("the road surface with {name}"),
        (Verb::Replaces, _) => format!("the {name}"),
    };
    MetamorphicRelation {
        road_type: roads[rng.next_index(roads.len())].to_string(),
        verb,
        manipulation,
        expected_behavior: behaviors[rng.next_index(behaviors.len())].to_string(),
        source_rule: String::new(),
        region: tax.region().to_string(),
        hallucination_score: 0.0,
    }
}

fn grammar_round_trip() -> Outcome {
    let taxonomies = [Taxonomy::builtin("DE").unwrap(), Taxonomy::builtin("CA").unwrap()];
    let mut rng = Stream::new(1, 1);
    let start = Instant::now();
    for i in 0..1000 {
        let tax = &taxonomies[i % 2];
        let mr = random_mr(&mut rng, tax);
        mr.validate(tax).map_err(|e| format!("generator produced an invalid MR: {e}"))?;
        let text = mr.render_gherkin().map_err(|e| e.to_string())?;
        let (back, warnings) = parse_gherkin_detailed(&text, tax).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(back == mr, "round trip changed {text:?}");
        ensure!(warnings.is_empty(), "{text:?} warned {warnings:?}");
    }
    within("1000 round trips", start.elapsed(), 5)?;
    Ok("1000/1000 MRs satisfy parse(render(mr)) = mr".into())
}

// ---- selfcheck -------------------------------------------------------------

fn brute_winner(scores: &[Option<f64>], threshold: f64) -> Option<usize> {
    let valid: Vec<(usize, f64)> = scores.iter().enumerate().filter_map(|(i, s)| s.map(|s| (i, s))).collect();
    let min = valid.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
    valid.iter().find(|&&(_, s)| s == min).map(|&(i, _)| i).filter(|_| min <= threshold)
}

fn selfcheck_lattice() -> Outcome {
    let start = Instant::now();
    let mut multiplicity: BTreeMap<u32, usize> = BTreeMap::new();
    for bits in 0u32..8 {
        let answers: Vec<Answer> = (0..3).map(|i| if bits >> i & 1 == 1 { Answer::No } else { Answer::Yes }).collect();
        let score = answers_to_score(&answers).map_err(|e| e.to_string())?;
        let k = (0u32..=3).find(|&k| score == f64::from(k) / 3.0).ok_or(format!("score {score} is off the lattice"))?;
        ensure!(k == bits.count_ones(), "{answers:?} scored {score}");
        *multiplicity.entry(k).or_default() += 1;
    }
    let counts: Vec<usize> = multiplicity.values().copied().collect();
    ensure!(counts == [1, 3, 3, 1], "multiplicities {counts:?}");

    let mut rng = Stream::new(2, 2);
    for _ in 0..10_000 {
        let len = rng.next_index(9);
        let scores: Vec<Option<f64>> = (0..len)
            .map(|_| match rng.next_index(5) {
                4 => None,
                k => Some(k as f64 / 3.0),
            })
            .collect();
        let threshold = [0.0, 1.0 / 3.0, 0.5, 2.0 / 3.0, 1.0][rng.next_index(5)];
        let got = select_winner(&scores, threshold);
        ensure!(got == brute_winner(&scores, threshold), "{scores:?} at {threshold}: got {got:?}");
    }
    within("lattice and 10k lists", start.elapsed(), 5)?;
    Ok("8 triples give {0:1, 1/3:3, 2/3:3, 1:1}; 10000/10000 winners agree".into())
}

// ---- retrieval -------------------------------------------------------------

fn plain_mr() -> MetamorphicRelation {
    MetamorphicRelation {
        road_type: ANY_ROADS.into(),
        verb: Verb::Adds,
        manipulation: "a vehicle on the road".into(),
        expected_behavior: "slow down".into(),
        source_rule: String::new(),
        region: "DE".into(),
        hallucination_score: 0.0,
    }
}

fn small_vector(rng: &mut Stream, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.next_index(7) as f32 - 3.0).collect()
}

fn textbook_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn retrieval_order() -> Outcome {
    let mut rng = Stream::new(3, 3);
    let start = Instant::now();
    let mut queries = 0;
    for _ in 0..200 {
        let n = 1 + rng.next_index(100);
        let mut store: Vec<StoredMr> = Vec::with_capacity(n);
        for i in 0..n {
            // A third of the entries repeat an earlier direction, giving exact ties.
            let embedding = if i > 0 && rng.next_index(3) == 0 {
                store[rng.next_index(i)].embedding.clone()
            } else {
                small_vector(&mut rng, 4)
            };
            store.push(StoredMr { index: i as u32, mr: plain_mr(), embedding, execution_count: rng.next_index(4) as u64 });
        }
        for _ in 0..50 {
            queries += 1;
            let q = small_vector(&mut rng, 4);
            let top_k = 1 + rng.next_index(120);
            let got: Vec<u32> = rank(&store, &q, top_k).map_err(|e| e.to_string())?.iter().map(|(e, _)| e.index).collect();
            let mut all: Vec<(f64, u64, u32)> =
                store.iter().map(|e| (cosine(&e.embedding, &q), e.execution_count, e.index)).collect();
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let want: Vec<u32> = all.iter().take(top_k).map(|t| t.2).collect();
            ensure!(got == want, "store of {n}, top_k {top_k}: {got:?} vs {want:?}");
            for e in &store {
                let (x, y) = (cosine(&e.embedding, &q), textbook_cosine(&e.embedding, &q));
                ensure!((x - y).abs() < 1e-12, "cosine {x} vs {y}");
            }
        }
    }
    within("retrieval", start.elapsed(), 30)?;
    Ok(format!("{queries}/{queries} queries over 200 stores match the brute-force order"))
}

// ---- execution-count preference --------------------------------------------

fn rep(road: &str) -> TestCaseRepresentation {
    TestCaseRepresentation {
        time: "Afternoon".into(),
        weather: "Clear".into(),
        road_type: road.into(),
        objects: "cars".into(),
        ego_speed_mps: 8.0,
        ego_steering_rad: 0.0,
    }
}

fn execution_count_preference() -> Outcome {
    let tax = Taxonomy::builtin("DE").unwrap();
    let roads: Vec<&str> = tax.road_types().collect();
    let mut reg = MockRegistry::new(4);
    let mut missing = MockSpec::default();
    missing.params.match_miss_rate = 1.0;
    reg.specs.insert("chat-miss".into(), missing);
    let embed = Backend::open(Kind::Embed, "mock:embed", &reg, EndpointSettings::default()).unwrap();
    let chats = [
        Backend::open(Kind::Chat, "mock:chat", &reg, EndpointSettings::default()).unwrap(),
        Backend::open(Kind::Chat, "mock:chat-miss", &reg, EndpointSettings::default()).unwrap(),
    ];
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Stream::new(4, 4);
    let mut fallbacks = 0;
    for f in 0..1000 {
        // A group of identical MRs (equal similarity to any query) with
        // random counts, mixed with MRs for other road types.
        let road = roads[rng.next_index(roads.len())];
        let other = roads.iter().copied().find(|r| *r != road).unwrap();
        let tied = MetamorphicRelation { road_type: road.into(), ..plain_mr() };
        let decoy = MetamorphicRelation { road_type: other.into(), ..plain_mr() };
        let group = 2 + rng.next_index(6);
        let decoys = rng.next_index(4);
        let mut mrs = vec![tied; group];
        for _ in 0..decoys {
            let at = rng.next_index(mrs.len() + 1);
            mrs.insert(at, decoy.clone());
        }
        let store = MrStore::build(&dir.path().join(format!("s{f}")), &mrs, &embed, EmbedText::Gherkin, "AutoMT")
            .map_err(|e| e.to_string())?;
        let counts: BTreeMap<u32, u64> = (0..mrs.len() as u32).map(|i| (i, rng.next_index(5) as u64)).collect();
        store.restore_counts(&counts).map_err(|e| e.to_string())?;

        let tied_idx: Vec<u32> = (0..mrs.len() as u32).filter(|&i| mrs[i as usize].road_type == road).collect();
        let min = tied_idx.iter().map(|i| counts[i]).min().unwrap();
        let want = *tied_idx.iter().find(|i| counts[i] == min).unwrap();

        let opts = MatchOptions { top_k: mrs.len(), ..MatchOptions::default() };
        let chat = &chats[f % 2];
        let (chosen, record) = match_mr(&format!("c{f}"), &rep(road), &store, chat, &embed, &opts).map_err(|e| e.to_string())?;
        fallbacks += usize::from(record.fallback);
        ensure!(
            chosen.index == want,
            "fixture {f}: picked {} (count {}), want {want} (count {min}) among {tied_idx:?}",
            chosen.index,
            counts[&chosen.index]
        );
        ensure!(record.execution_count == min + 1, "fixture {f}: count not incremented");
    }
    ensure!(fallbacks == 500, "{fallbacks} fallbacks, want 500");
    Ok("1000/1000 fixtures pick the least-executed of equal-similarity MRs (500 by model reply, 500 by fallback)".into())
}

// ---- oracle ----------------------------------------------------------------

/// Violation rules evaluated directly on band numbers. Turn rules read the
/// steering value in the direction of the turn, so one rule covers both
/// turns under both sign conventions.
fn expected_violation(behavior: Behavior, sign: SignConvention, obs: Summary, speed: (f64, f64), steer: (f64, f64)) -> bool {
    let in_band = |x: f64, (lo, hi): (f64, f64)| lo <= x && x <= hi;
    let ok = match behavior {
        Behavior::SlowDown => obs.speed_mps < speed.0,
        Behavior::KeepCurrent => in_band(obs.speed_mps, speed) && in_band(obs.steering_rad, steer),
        Behavior::TurnLeft | Behavior::TurnRight => {
            let left_is_positive = sign == SignConvention::LeftPositive;
            let toward_positive = (behavior == Behavior::TurnLeft) == left_is_positive;
            let (x, edge) = if toward_positive { (obs.steering_rad, steer.1) } else { (-obs.steering_rad, -steer.0) };
            x > edge.max(0.0)
        }
    };
    !ok
}

fn population_band(values: &[f64], k: f64) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean - k * var.sqrt(), mean + k * var.sqrt())
}

fn oracle_truth_table() -> Outcome {
    let mut rng = Stream::new(5, 5);
    let mut disagreements = 0;
    let mut boundary = 0;
    let mut equivariant = 0;
    for i in 0..100_000 {
        let behavior = Behavior::ALL[rng.next_index(4)];
        let sign = if rng.next_index(2) == 0 { SignConvention::LeftPositive } else { SignConvention::RightPositive };
        let ads = 2 + rng.next_index(5);
        let k = [0.0, 0.5, 1.0, 2.0][rng.next_index(4)];
        let degenerate = rng.next_index(10) == 0;
        let sources: Vec<Summary> = (0..ads)
            .map(|_| Summary {
                speed_mps: if degenerate { 10.0 } else { 20.0 * rng.next_f64() },
                steering_rad: if degenerate { 0.0 } else { rng.next_f64() - 0.5 },
            })
            .collect();
        let (sb, tb) = bands_from_source(&sources, k).map_err(|e| e.to_string())?;
        let speeds: Vec<f64> = sources.iter().map(|s| s.speed_mps).collect();
        let steers: Vec<f64> = sources.iter().map(|s| s.steering_rad).collect();
        let (slo, shi) = population_band(&speeds, k);
        let (tlo, thi) = population_band(&steers, k);
        ensure!(
            (sb.lower - slo).abs() < 1e-9 && (sb.upper - shi).abs() < 1e-9 && (tb.lower - tlo).abs() < 1e-9 && (tb.upper - thi).abs() < 1e-9,
            "tuple {i}: bands differ from the population-std oracle"
        );
        // Observations hit band edges and zero often enough to pin the strictness.
        let mut pick = |lo: f64, hi: f64, spread: f64| match rng.next_index(6) {
            0 => lo,
            1 => hi,
            2 => 0.0,
            _ => (lo + hi) / 2.0 + spread * (2.0 * rng.next_f64() - 1.0),
        };
        let obs = Summary { speed_mps: pick(sb.lower, sb.upper, 12.0), steering_rad: pick(tb.lower, tb.upper, 0.8) };
        if [sb.lower, sb.upper].contains(&obs.speed_mps) || [tb.lower, tb.upper, 0.0].contains(&obs.steering_rad) {
            boundary += 1;
        }
        let got = judge("ads", "case", behavior, obs, (sb, tb), sign).violated;
        if got != expected_violation(behavior, sign, obs, (sb.lower, sb.upper), (tb.lower, tb.upper)) {
            disagreements += 1;
        }

        // Shift every speed by c: bands move by c and speed verdicts hold.
        let c = 200.0 * rng.next_f64() - 100.0;
        let moved: Vec<Summary> = sources.iter().map(|s| Summary { speed_mps: s.speed_mps + c, ..*s }).collect();
        let (mb, mt) = bands_from_source(&moved, k).map_err(|e| e.to_string())?;
        ensure!(
            (mb.lower - (sb.lower + c)).abs() < 1e-9 && (mb.upper - (sb.upper + c)).abs() < 1e-9 && mt == tb,
            "tuple {i}: shifted bands [{}, {}] vs [{}, {}] + {c}",
            mb.lower,
            mb.upper,
            sb.lower,
            sb.upper
        );
        let clear = (obs.speed_mps - sb.lower).abs() > 1e-6 && (obs.speed_mps - sb.upper).abs() > 1e-6;
        if clear && matches!(behavior, Behavior::SlowDown | Behavior::KeepCurrent) {
            let shifted = Summary { speed_mps: obs.speed_mps + c, ..obs };
            ensure!(
                judge("ads", "case", behavior, shifted, (mb, mt), sign).violated == got,
                "tuple {i}: verdict changed under a shift of {c}"
            );
            equivariant += 1;
        }
    }
    ensure!(disagreements == 0, "{disagreements} of 100000 tuples disagree");
    Ok(format!("100000/100000 agree ({boundary} on a boundary); {equivariant} shifted verdicts unchanged"))
}

// ---- end to end ------------------------------------------------------------

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn full_run(base: &Path) -> Result<(BTreeMap<String, Vec<u8>>, Report), String> {
    write_rules(&base.join("rules.txt")).map_err(|e| e.to_string())?;
    write_corpus(&base.join("corpus"), 12).map_err(|e| e.to_string())?;
    let config = RunConfig { output_root: base.join("run"), ..RunConfig::default() };
    let p = Pipeline::new(config, false).map_err(|e| e.to_string())?;
    let report = p
        .run_all(&base.join("rules.txt"), &base.join("corpus"), &ReportInputs { method: "AutoMT".into(), ..Default::default() })
        .map_err(|e| e.to_string())?;
    let mut files = tree(&base.join("run"));
    // The effective config names its own output directory; nothing else may differ.
    let effective = files.get_mut("config.effective.toml").ok_or("no effective config")?;
    let root = base.join("run").display().to_string();
    *effective = String::from_utf8_lossy(effective).replace(&root, "<root>").into_bytes();
    Ok((files, report))
}

fn end_to_end_determinism() -> Outcome {
    let start = Instant::now();
    let (a_dir, b_dir) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a, report) = full_run(a_dir.path())?;
    let (b, _) = full_run(b_dir.path())?;
    let elapsed = start.elapsed();
    ensure!(a.keys().eq(b.keys()), "file sets differ");
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure!(differing.is_empty(), "files differ: {differing:?}");
    ensure!(report.generation.cases == 12, "{} cases", report.generation.cases);
    ensure!(report.violations.is_some(), "no evaluation in the report");
    within("two full runs", elapsed, 60)?;
    Ok(format!(
        "{} files byte-identical across two runs; {} follow-ups, validation rate {:.2}",
        a.len(),
        report.generation.generated,
        report.validation.summary.validation_rate
    ))
}

// ---- scripted violations ---------------------------------------------------

struct Scenario {
    behavior: Behavior,
    cases: usize,
    /// Ground-truth violations of the two scripted predictors.
    violations: [usize; 2],
}

fn scripted_modes(behavior: Behavior) -> (&'static str, &'static str) {
    // (complies, violates) under the left-positive convention
    match behavior {
        Behavior::SlowDown => ("stop", "ignore"),
        Behavior::KeepCurrent => ("ignore", "slow:0.5"),
        Behavior::TurnLeft => ("steer:0.3", "ignore"),
        Behavior::TurnRight => ("steer:-0.3", "ignore"),
    }
}

fn write_scenario(root: &Path, tag: &str, s: &Scenario, rng: &mut Stream) -> Result<(Vec<ManifestEntry>, MockRegistry), String> {
    let io = |e: &dyn std::fmt::Display| e.to_string();
    let (comply, violate) = scripted_modes(s.behavior);
    let mut reg = MockRegistry::new(9);
    let mut manifest = Vec::with_capacity(s.cases);
    let ids: Vec<String> = (0..s.cases).map(|i| format!("{tag}-{i:03}")).collect();
    for (a, &n) in s.violations.iter().enumerate() {
        // Choose which cases this predictor gets wrong.
        let mut order: Vec<usize> = (0..s.cases).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.next_index(i + 1));
        }
        let wrong: Vec<bool> = (0..s.cases).map(|i| order[..n].contains(&i)).collect();
        let mut spec = MockSpec::default();
        spec.params.ads_bias = 0.0;
        spec.params.frame_noise = 0.0;
        spec.predict = ids
            .iter()
            .zip(&wrong)
            .map(|(id, &w)| PredictRule { case: id.clone(), mode: (if w { violate } else { comply }).into() })
            .collect();
        reg.specs.insert(format!("ads-{a}"), spec);
    }
    for (i, id) in ids.iter().enumerate() {
        let speed = 4.0 + (i % 9) as f64;
        let frames: Vec<Image> = (0..2)
            .map(|f| {
                Image::filled(8, 6, [40 + f as u8, 60, 80])
                    .with_tag("case", id.as_str())
                    .with_tag("speed", format!("{speed:?}"))
                    .with_tag("steering", "0.0")
            })
            .collect();
        let src = root.join("corpus").join(id);
        let art = root.join("gen").join(CASES_DIR).join(id);
        for (f, frame) in frames.iter().enumerate() {
            frame.save(&src.join(frame_name(f))).map_err(|e| io(&e))?;
            frame.clone().with_tag("edit", "scripted").save(&art.join(frame_name(f))).map_err(|e| io(&e))?;
        }
        let telemetry = Telemetry { speed_mps: vec![speed; 2], steering_rad: vec![0.0; 2] };
        std::fs::write(src.join(TELEMETRY_FILE), serde_json::to_vec(&telemetry).unwrap()).map_err(|e| io(&e))?;
        let lineage = Lineage {
            case_id: id.clone(),
            mr_index: 0,
            gherkin: String::new(),
            similarity: 1.0,
            backends: BTreeMap::new(),
            config_hash: String::new(),
            started_ms: 0,
            finished_ms: 0,
            frame_count: 2,
        };
        std::fs::write(art.join(LINEAGE_FILE), serde_json::to_vec(&lineage).unwrap()).map_err(|e| io(&e))?;
        manifest.push(ManifestEntry {
            case_id: id.clone(),
            status: FollowupStatus::Generated,
            mr_index: Some(0),
            verb: Some(Verb::Adds),
            manipulation: Some("a scripted object".into()),
            expected_behavior: Some(s.behavior.as_str().into()),
            artifact: Some(format!("{CASES_DIR}/{id}")),
            detail: None,
        });
    }
    Ok((manifest, reg))
}

fn scripted_violations() -> Outcome {
    let mut scenarios = Vec::new();
    for behavior in Behavior::ALL {
        for (cases, violations) in [(100, [19, 50]), (40, [0, 13]), (25, [25, 1])] {
            scenarios.push(Scenario { behavior, cases, violations });
        }
    }
    let mut rng = Stream::new(7, 7);
    let mut lines = Vec::new();
    for (n, s) in scenarios.iter().enumerate() {
        let dir = tempfile::tempdir().unwrap();
        let (manifest, reg) = write_scenario(dir.path(), &format!("s{n}"), s, &mut rng)?;
        let cases = load_corpus(&dir.path().join("corpus"), "DE").map_err(|e| e.to_string())?;
        let ads: Vec<(String, Arc<Backend>)> = (0..2)
            .map(|a| {
                let id = format!("ads-{a}");
                let b = Backend::open(Kind::Predict, &format!("mock:{id}"), &reg, EndpointSettings::default()).unwrap();
                (id, b)
            })
            .collect();
        let opts = EvaluateOptions {
            band_k: 1.0,
            sign: SignConvention::LeftPositive,
            region: "DE".into(),
            parallel: 4,
            force: true,
            valid_only: false,
        };
        let out = dir.path().join("eval");
        std::fs::create_dir_all(&out).unwrap();
        let summary = evaluate_batch(&cases, &manifest, None, &dir.path().join("gen"), &ads, &out, &opts)
            .map_err(|e| e.to_string())?;
        ensure!(summary.cases == s.cases, "scenario {n}: {} cases judged", summary.cases);
        for (row, &want) in summary.ads.iter().zip(&s.violations) {
            let rate = want as f64 / s.cases as f64;
            ensure!(
                row.overall.violated == want && row.overall.total == s.cases && row.overall.rate == rate,
                "scenario {n} ({}), {}: {}/{} reported, script says {want}/{}",
                s.behavior,
                row.ads_id,
                row.overall.violated,
                row.overall.total,
                s.cases
            );
            ensure!(row.by_behavior[s.behavior.as_str()].rate == rate, "scenario {n}: per-behavior rate");
        }
        lines.push(format!("{}/{}", s.violations[0], s.cases));
    }
    Ok(format!("12 scenarios (3 per behavior) reproduce their scripts exactly, e.g. {}", lines[..3].join(", ")))
}

// ---- validation ------------------------------------------------------------

fn validation_conjunction() -> Outcome {
    let mut rng = Stream::new(8, 8);
    let mut flips = 0;
    for batch in 0..200 {
        let n = 1 + rng.next_index(60);
        let bits: Vec<[bool; 3]> = (0..n).map(|_| [0; 3].map(|_| rng.next_index(2) == 1)).collect();
        let verdicts: Vec<ValidityVerdict> =
            bits.iter().enumerate().map(|(i, b)| ValidityVerdict::new(format!("c{i}"), 0, b[0], b[1], b[2])).collect();
        for (v, b) in verdicts.iter().zip(&bits) {
            for m in 0..3 {
                let mut flipped = *b;
                flipped[m] = !flipped[m];
                let w = ValidityVerdict::new(v.case_id.clone(), 0, flipped[0], flipped[1], flipped[2]);
                let others = (0..3).filter(|&j| j != m).all(|j| b[j]);
                ensure!(w.valid == (flipped[0] && flipped[1] && flipped[2]), "batch {batch}: {flipped:?}");
                ensure!((w.valid != v.valid) == others, "batch {batch}: flipping metric {m} of {b:?}");
                flips += 1;
            }
        }
        let mean = bits.iter().filter(|b| b.iter().all(|x| *x)).count() as f64 / n as f64;
        let rate = validation_rate(&verdicts).map_err(|e| e.to_string())?;
        ensure!((rate - mean).abs() < 1e-12, "batch {batch}: rate {rate} vs mean {mean}");
    }

    // Report table shape for a fixed batch: 10 cases, 6 valid.
    let fixed: Vec<ValidityVerdict> = (0..10).map(|i| ValidityVerdict::new(format!("c{i}"), 0, true, i < 7, i != 3)).collect();
    let summary = summarize(&fixed).map_err(|e| e.to_string())?;
    let report = Report {
        method: "AutoMT".into(),
        generation: GenerationCounts { cases: 10, generated: 10, ..Default::default() },
        validation: ValidationReport { summary, diversity: Default::default() },
        violations: None,
        stats: StatsSection::default(),
    };
    let md = render_markdown(&report);
    let header = "| Method | Scenario Alignment | Logical Alignment | Manipulation Verification | Validation Rate |";
    let row = "| AutoMT | 100.00% | 70.00% | 90.00% | 60.00% (6/10) |";
    ensure!(md.contains(header) && md.contains(row), "validation table missing from:\n{md}");
    Ok(format!("{flips} single-bit flips behave as a conjunction; rates equal the mean; report table has the expected shape"))
}

// ---- diversity -------------------------------------------------------------

const MANUAL_MANIPULATIONS: [&str; 9] = [
    "a vehicle on the road",
    "a pedestrian on the road",
    "a cyclist on the road",
    "a red light on the roadside",
    "a green light on the roadside",
    "a stop sign on the roadside",
    "the weather with rain",
    "the weather with snowy",
    "the weather with night",
];

fn diversity_counter() -> Outcome {
    let variants = |s: &str| [s.to_string(), s.to_uppercase(), format!("  {}  ", s.replace(' ', "   ")), s.replace(' ', "\t")];
    let mut manifest = Vec::new();
    for (i, name) in MANUAL_MANIPULATIONS.iter().enumerate() {
        for (j, phrase) in variants(name).into_iter().enumerate() {
            manifest.push(ManifestEntry {
                case_id: format!("c{i}-{j}"),
                status: FollowupStatus::Generated,
                mr_index: Some(i as u32),
                verb: None,
                manipulation: Some(phrase),
                expected_behavior: None,
                artifact: None,
                detail: None,
            });
        }
    }
    let all_valid: Vec<ValidityVerdict> = manifest.iter().map(|e| ValidityVerdict::new(e.case_id.clone(), 0, true, true, true)).collect();
    let d = diversity(&manifest, &all_valid);
    ensure!(d.distinct == 9, "{} distinct: {:?}", d.distinct, d.histogram.keys().collect::<Vec<_>>());
    ensure!(d.histogram.values().all(|&c| c == 4), "histogram {:?}", d.histogram);

    // Only valid follow-ups count.
    let mut some_invalid = all_valid.clone();
    for v in some_invalid.iter_mut().filter(|v| v.case_id.starts_with("c8-")) {
        *v = ValidityVerdict::new(v.case_id.clone(), 0, true, false, true);
    }
    ensure!(diversity(&manifest, &some_invalid).distinct == 8, "invalid follow-ups were counted");
    Ok(format!("{} phrasings of the 9 manual manipulations count as 9", manifest.len()))
}

// ---- statistics ------------------------------------------------------------

fn kappa_by_pairs(rows: &[Vec<u32>], c: u32, weights: KappaWeights) -> f64 {
    let w = |i: u32, j: u32| {
        let d = f64::from(i.abs_diff(j)) / f64::from(c - 1);
        match weights {
            KappaWeights::Linear => d,
            KappaWeights::Quadratic => d * d,
        }
    };
    let mut observed = 0.0;
    for row in rows {
        let (mut sum, mut pairs) = (0.0, 0.0);
        for (r, &x) in row.iter().enumerate() {
            for (s, &y) in row.iter().enumerate() {
                if r != s {
                    sum += w(x, y);
                    pairs += 1.0;
                }
            }
        }
        observed += sum / pairs;
    }
    observed /= rows.len() as f64;
    let pooled: Vec<u32> = rows.iter().flatten().copied().collect();
    let expected = pooled.iter().flat_map(|&x| pooled.iter().map(move |&y| w(x, y))).sum::<f64>() / (pooled.len() as f64).powi(2);
    if expected == 0.0 {
        1.0
    } else {
        1.0 - observed / expected
    }
}

#[derive(serde::Deserialize)]
struct WelchFixture {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    df: f64,
    p: f64,
}

fn fixtures_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/welch_fixtures.json")
}

fn statistics() -> Outcome {
    let mut rng = Stream::new(10, 10);
    let mut worst: f64 = 0.0;
    for table in 0..100 {
        let c = 2 + rng.next_index(4) as u32;
        let raters = 2 + rng.next_index(5);
        let items = 1 + rng.next_index(20);
        let rows: Vec<Vec<u32>> = (0..items).map(|_| (0..raters).map(|_| 1 + rng.next_index(c as usize) as u32).collect()).collect();
        let weights = if table % 2 == 0 { KappaWeights::Linear } else { KappaWeights::Quadratic };
        let t = RatingTable::new(rows.clone(), c).map_err(|e| e.to_string())?;
        let err = (weighted_fleiss_kappa(&t, weights) - kappa_by_pairs(&rows, c, weights)).abs();
        ensure!(err < 1e-10, "table {table}: kappa off by {err}");
        worst = worst.max(err);

        let unanimous: Vec<Vec<u32>> = rows.iter().map(|r| vec![r[0]; raters]).collect();
        let u = RatingTable::new(unanimous, c).map_err(|e| e.to_string())?;
        ensure!(weighted_fleiss_kappa(&u, weights) == 1.0, "table {table}: unanimous kappa is not 1");
    }

    let text = std::fs::read_to_string(fixtures_path()).map_err(|e| e.to_string())?;
    let fixtures: Vec<WelchFixture> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure!(fixtures.len() == 20, "{} Welch fixtures", fixtures.len());
    for (i, f) in fixtures.iter().enumerate() {
        let r = welch_t_test(&f.a, &f.b).map_err(|e| e.to_string())?;
        let rel = |x: f64, want: f64| (x - want).abs() <= 1e-8 * want.abs().max(1.0);
        ensure!(rel(r.t, f.t) && rel(r.df, f.df) && (r.p - f.p).abs() <= 1e-8, "fixture {i}: ({}, {}, {}) vs ({}, {}, {})", r.t, r.df, r.p, f.t, f.df, f.p);
        let back = welch_t_test(&f.b, &f.a).map_err(|e| e.to_string())?;
        ensure!(back.t == -r.t && back.df == r.df && back.p == r.p, "fixture {i}: not antisymmetric");
    }
    Ok(format!("100 kappa tables within {worst:.1e} of the pairwise oracle; unanimous give 1; 20 Welch fixtures within 1e-8 and antisymmetric"))
}
