//! MR matching and follow-up generation.
//!
//! A batch runs in two phases. Matching is sequential in corpus order,
//! because every match bumps an execution count that later matches read.
//! Generation then runs in parallel, one artifact directory per case.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use automt_core::followup::{
    applicability_filter, choose_survivor, parse_match_reply, plan_manipulation, ApplicabilityThresholds,
    ManipulationPlan,
};
use automt_core::prompts::{match_prompt, MatchCandidate};
use automt_core::retrieval::StoredMr;
use automt_core::scene::TestCaseRepresentation;
use automt_core::Verb;

use crate::backends::wire::EditMode;
use crate::backends::{Backend, BackendError};
use crate::fsutil::{read_json, read_jsonl_or_empty, write_json, write_jsonl};
use crate::image::Image;
use crate::scene::{frame_name, AnalyzeError, SourceTestCase};
use crate::store::{MrStore, StoreError};

pub const PLAN_FILE: &str = "plan.json";
pub const KEYFRAME_FILE: &str = "keyframe_edited.png";
pub const LINEAGE_FILE: &str = "lineage.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MATCHES_FILE: &str = "matches.jsonl";
pub const BASE_COUNTS_FILE: &str = "base_counts.json";
pub const CASES_DIR: &str = "cases";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FollowupError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Case(#[from] AnalyzeError),
    #[error("case {0}: no retrieved MR applies")]
    NoApplicableMr(String),
    #[error("case {0} has no representation")]
    MissingRepresentation(String),
    #[error("{0}")]
    Io(String),
}

fn io(path: &Path, e: impl std::fmt::Display) -> FollowupError {
    FollowupError::Io(format!("{}: {e}", path.display()))
}

/// The MR picked for one case and how it was picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub case_id: String,
    pub mr_index: u32,
    pub similarity: f64,
    /// Survivors of the applicability filter, in rank order.
    pub survivors: Vec<u32>,
    pub model_reply: String,
    pub model_choice: Option<u32>,
    /// True when the model's answer was not a survivor.
    pub fallback: bool,
    /// Execution count after this match.
    pub execution_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    pub top_k: usize,
    pub thresholds: ApplicabilityThresholds,
}

impl Default for MatchOptions {
    fn default() -> Self {
        MatchOptions { top_k: 5, thresholds: ApplicabilityThresholds::default() }
    }
}

/// Retrieves, filters and asks the chat model; increments the chosen MR's
/// execution count.
pub fn match_mr(
    case_id: &str,
    rep: &TestCaseRepresentation,
    store: &MrStore,
    chat: &Backend,
    embed: &Backend,
    opts: &MatchOptions,
) -> Result<(StoredMr, MatchRecord), FollowupError> {
    let ranked = store.retrieve(&rep.describe(), opts.top_k, embed)?;
    let survivors: Vec<&(StoredMr, f64)> =
        ranked.iter().filter(|(e, _)| applicability_filter(rep, &e.mr, &opts.thresholds)).collect();
    if survivors.is_empty() {
        return Err(FollowupError::NoApplicableMr(case_id.to_string()));
    }
    let gherkins: Vec<String> = survivors
        .iter()
        .map(|(e, _)| e.mr.render_gherkin().map_err(|err| StoreError::InvalidMr { index: e.index, detail: err.to_string() }))
        .collect::<Result<_, _>>()?;
    let candidates: Vec<MatchCandidate<'_>> = survivors
        .iter()
        .zip(&gherkins)
        .map(|((e, _), g)| MatchCandidate {
            index: e.index,
            gherkin: g,
            road_type: &e.mr.road_type,
            manipulation: &e.mr.manipulation,
            expected_behavior: &e.mr.expected_behavior,
            execution_count: e.execution_count,
        })
        .collect();
    let reply = chat.chat(&match_prompt(rep, &candidates), &[])?;
    let model_choice = parse_match_reply(&reply);
    let refs: Vec<&StoredMr> = survivors.iter().map(|(e, _)| e).collect();
    let pick = choose_survivor(&refs, model_choice).expect("survivors are non-empty");
    let (chosen, similarity) = survivors[pick].clone();
    let count = store.record_execution(chosen.index)?;
    let record = MatchRecord {
        case_id: case_id.to_string(),
        mr_index: chosen.index,
        similarity,
        survivors: refs.iter().map(|e| e.index).collect(),
        model_reply: reply,
        model_choice,
        fallback: model_choice != Some(chosen.index),
        execution_count: count,
    };
    Ok((chosen, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub case_id: String,
    pub mr_index: u32,
    pub gherkin: String,
    pub similarity: f64,
    pub backends: BTreeMap<String, String>,
    pub config_hash: String,
    pub started_ms: u64,
    pub finished_ms: u64,
    pub frame_count: usize,
}

/// Everything generation needs besides the case and plan.
pub struct GenerateContext<'a> {
    pub edit: &'a Backend,
    pub video: &'a Backend,
    pub config_hash: &'a str,
    pub backend_ids: BTreeMap<String, String>,
    pub clock: &'a (dyn Fn() -> u64 + Sync),
}

/// Paths of a generated artifact, relative to its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowUpArtifact {
    pub source_case_id: String,
    pub mr_index: u32,
    pub plan: ManipulationPlan,
    pub edited_keyframe: String,
    pub frames: Vec<String>,
    pub lineage: Lineage,
}

/// Edits the first frame, synthesizes the video and writes the artifact
/// directory. The directory is assembled under a temporary name and renamed
/// into place, so a crash never leaves a half-written artifact.
pub fn generate_followup(
    case: &SourceTestCase,
    stored: &StoredMr,
    similarity: f64,
    plan: &ManipulationPlan,
    ctx: &GenerateContext<'_>,
    out_dir: &Path,
) -> Result<FollowUpArtifact, FollowupError> {
    let started_ms = (ctx.clock)();
    let keyframe = case.keyframe()?;
    let edited = match plan.verb {
        Verb::Adds => ctx.edit.edit(
            &keyframe,
            Some(&plan.mask_classes),
            Some(plan.placement.as_str()),
            &plan.instruction,
            EditMode::Add,
        )?,
        Verb::Replaces => ctx.edit.edit(&keyframe, None, None, &plan.instruction, EditMode::Replace)?,
    };
    let n = case.telemetry.len();
    let frames = ctx.video.video(&edited, &case.telemetry.speed_mps, &case.telemetry.steering_rad, n)?;

    let lineage = Lineage {
        case_id: case.id.clone(),
        mr_index: stored.index,
        gherkin: stored.mr.render_gherkin().unwrap_or_default(),
        similarity,
        backends: ctx.backend_ids.clone(),
        config_hash: ctx.config_hash.to_string(),
        started_ms,
        finished_ms: (ctx.clock)(),
        frame_count: n,
    };
    let artifact = FollowUpArtifact {
        source_case_id: case.id.clone(),
        mr_index: stored.index,
        plan: plan.clone(),
        edited_keyframe: KEYFRAME_FILE.to_string(),
        frames: (0..n).map(frame_name).collect(),
        lineage,
    };

    let name = out_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = out_dir.with_file_name(format!(".{name}.partial"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| io(&tmp, e))?;
    write_json(&tmp.join(PLAN_FILE), plan).map_err(|e| io(&tmp, e))?;
    edited.save(&tmp.join(KEYFRAME_FILE)).map_err(|e| io(&tmp, e))?;
    for (i, frame) in frames.iter().enumerate() {
        frame.save(&tmp.join(frame_name(i))).map_err(|e| io(&tmp, e))?;
    }
    write_json(&tmp.join(LINEAGE_FILE), &artifact.lineage).map_err(|e| io(&tmp, e))?;
    if out_dir.exists() {
        fs::remove_dir_all(out_dir).map_err(|e| io(out_dir, e))?;
    }
    fs::rename(&tmp, out_dir).map_err(|e| io(out_dir, e))?;
    Ok(artifact)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowupStatus {
    Generated,
    NoApplicableMr,
    EditRejected,
    VideoRejected,
}

/// One line of the batch manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub case_id: String,
    pub status: FollowupStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mr_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<Verb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_behavior: Option<String>,
    /// Artifact directory relative to the generate output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ManifestEntry {
    pub fn artifact_dir(&self, generate_dir: &Path) -> Option<PathBuf> {
        self.artifact.as_ref().map(|a| generate_dir.join(a))
    }
}

/// Loads a generated artifact's frames, in order.
pub fn load_artifact_frames(dir: &Path) -> Result<Vec<Image>, FollowupError> {
    let lineage: Lineage = read_json(&dir.join(LINEAGE_FILE)).map_err(|e| io(dir, e))?;
    (0..lineage.frame_count)
        .map(|i| {
            let p = dir.join(frame_name(i));
            Image::load(&p).map_err(|e| io(&p, e))
        })
        .collect()
}

pub fn load_artifact_keyframe(dir: &Path) -> Result<Image, FollowupError> {
    let p = dir.join(KEYFRAME_FILE);
    Image::load(&p).map_err(|e| io(&p, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub parallel: usize,
    /// Redo every case, restoring the execution counts the first run saw.
    pub force: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BatchReport {
    pub generated: usize,
    pub skipped_existing: usize,
    pub no_applicable_mr: usize,
    pub failed: usize,
}

/// Runs the two-phase batch into `out` (manifest, matches and one directory
/// per case under `cases/`). Cases with a finished artifact are skipped
/// unless `force` is set; rejected edits and videos are recorded in the
/// manifest rather than aborting the batch.
#[allow(clippy::too_many_arguments)]
pub fn generate_batch(
    cases: &[SourceTestCase],
    reps: &[(String, TestCaseRepresentation)],
    store: &MrStore,
    chat: &Backend,
    embed: &Backend,
    match_opts: &MatchOptions,
    ctx: &GenerateContext<'_>,
    out: &Path,
    opts: BatchOptions,
) -> Result<BatchReport, FollowupError> {
    let reps: BTreeMap<&str, &TestCaseRepresentation> = reps.iter().map(|(id, r)| (id.as_str(), r)).collect();
    let base_path = out.join(BASE_COUNTS_FILE);
    let matches_path = out.join(MATCHES_FILE);
    let manifest_path = out.join(MANIFEST_FILE);

    if opts.force && base_path.is_file() {
        let base: BTreeMap<u32, u64> = read_json(&base_path).map_err(|e| io(&base_path, e))?;
        store.restore_counts(&base)?;
    }
    if opts.force || !base_path.is_file() {
        let counts: BTreeMap<u32, u64> = store.snapshot().iter().map(|e| (e.index, e.execution_count)).collect();
        write_json(&base_path, &counts).map_err(|e| io(&base_path, e))?;
    }
    let (old_matches, old_manifest): (Vec<MatchRecord>, Vec<ManifestEntry>) = if opts.force {
        (Vec::new(), Vec::new())
    } else {
        (
            read_jsonl_or_empty(&matches_path).map_err(|e| io(&matches_path, e))?,
            read_jsonl_or_empty(&manifest_path).map_err(|e| io(&manifest_path, e))?,
        )
    };
    let old_matches: BTreeMap<String, MatchRecord> =
        old_matches.into_iter().map(|m| (m.case_id.clone(), m)).collect();
    let old_manifest: BTreeMap<String, ManifestEntry> =
        old_manifest.into_iter().map(|m| (m.case_id.clone(), m)).collect();

    // Phase 1: sequential matching.
    let mut matches: Vec<Result<MatchRecord, String>> = Vec::with_capacity(cases.len());
    for case in cases {
        if let Some(m) = old_matches.get(&case.id) {
            matches.push(Ok(m.clone()));
            continue;
        }
        if let Some(entry) = old_manifest.get(&case.id).filter(|e| e.status == FollowupStatus::NoApplicableMr) {
            matches.push(Err(entry.detail.clone().unwrap_or_default()));
            continue;
        }
        let rep = reps.get(case.id.as_str()).ok_or_else(|| FollowupError::MissingRepresentation(case.id.clone()))?;
        match match_mr(&case.id, rep, store, chat, embed, match_opts) {
            Ok((_, record)) => matches.push(Ok(record)),
            Err(e @ FollowupError::NoApplicableMr(_)) => matches.push(Err(e.to_string())),
            Err(e) => return Err(e),
        }
        let done: Vec<MatchRecord> = matches.iter().filter_map(|m| m.as_ref().ok().cloned()).collect();
        write_jsonl(&matches_path, &done).map_err(|e| io(&matches_path, e))?;
    }
    let done: Vec<MatchRecord> = matches.iter().filter_map(|m| m.as_ref().ok().cloned()).collect();
    write_jsonl(&matches_path, &done).map_err(|e| io(&matches_path, e))?;

    // Phase 2: parallel generation.
    let snapshot: BTreeMap<u32, StoredMr> = store.snapshot().into_iter().map(|e| (e.index, e)).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel.max(1))
        .build()
        .map_err(|e| FollowupError::Io(e.to_string()))?;
    let results: Vec<Result<(ManifestEntry, bool), FollowupError>> = pool.install(|| {
        cases
            .par_iter()
            .zip(matches.par_iter())
            .map(|(case, m)| {
                let record = match m {
                    Err(detail) => {
                        return Ok((
                            ManifestEntry {
                                case_id: case.id.clone(),
                                status: FollowupStatus::NoApplicableMr,
                                mr_index: None,
                                verb: None,
                                manipulation: None,
                                expected_behavior: None,
                                artifact: None,
                                detail: Some(detail.clone()),
                            },
                            false,
                        ))
                    }
                    Ok(r) => r,
                };
                let stored = snapshot.get(&record.mr_index).ok_or(StoreError::UnknownIndex(record.mr_index))?;
                let plan = plan_manipulation(&stored.mr);
                let rel = format!("{CASES_DIR}/{}", case.id);
                let dir = out.join(&rel);
                let mut entry = ManifestEntry {
                    case_id: case.id.clone(),
                    status: FollowupStatus::Generated,
                    mr_index: Some(stored.index),
                    verb: Some(stored.mr.verb),
                    manipulation: Some(stored.mr.manipulation.clone()),
                    expected_behavior: Some(stored.mr.expected_behavior.clone()),
                    artifact: Some(rel),
                    detail: None,
                };
                if let Some(old) = old_manifest.get(&case.id) {
                    let finished = old.status == FollowupStatus::Generated && dir.join(LINEAGE_FILE).is_file();
                    if finished || old.status != FollowupStatus::Generated {
                        return Ok((old.clone(), false));
                    }
                }
                match generate_followup(case, stored, record.similarity, &plan, ctx, &dir) {
                    Ok(_) => Ok((entry, true)),
                    Err(FollowupError::Backend(e @ (BackendError::EditRejected(_) | BackendError::VideoRejected(_)))) => {
                        entry.status = if matches!(e, BackendError::EditRejected(_)) {
                            FollowupStatus::EditRejected
                        } else {
                            FollowupStatus::VideoRejected
                        };
                        entry.artifact = None;
                        entry.detail = Some(e.to_string());
                        Ok((entry, true))
                    }
                    Err(e) => Err(e),
                }
            })
            .collect()
    });

    let mut report = BatchReport::default();
    let mut manifest = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok((entry, fresh)) => {
                match (entry.status, fresh) {
                    (FollowupStatus::NoApplicableMr, _) => report.no_applicable_mr += 1,
                    (_, false) => report.skipped_existing += 1,
                    (FollowupStatus::Generated, true) => report.generated += 1,
                    _ => report.failed += 1,
                }
                manifest.push(entry);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    write_jsonl(&manifest_path, &manifest).map_err(|e| io(&manifest_path, e))?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{read_watermark, MockRule, MockSpec};
    use crate::backends::{EndpointSettings, Kind, MockRegistry};
    use crate::config::EmbedText;
    use automt_core::scene::Telemetry;
    use automt_core::MetamorphicRelation;
    use std::sync::Arc;

    fn mr(road: &str, verb: Verb, manipulation: &str, behavior: &str) -> MetamorphicRelation {
        MetamorphicRelation {
            road_type: road.into(),
            verb,
            manipulation: manipulation.into(),
            expected_behavior: behavior.into(),
            source_rule: String::new(),
            region: "DE".into(),
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

    fn registry() -> MockRegistry {
        let mut reg = MockRegistry::new(5);
        reg.specs.insert(
            "vid-short".into(),
            MockSpec { rules: vec![MockRule { pattern: "pedestrian".into(), response: "short".into() }], ..Default::default() },
        );
        reg.specs.insert(
            "keyed".into(),
            MockSpec {
                rules: vec![
                    MockRule { pattern: "intersection".into(), response: "1,0".into() },
                    MockRule { pattern: "field path".into(), response: "0,1".into() },
                ],
                ..Default::default()
            },
        );
        reg.specs.insert(
            "miss".into(),
            MockSpec { params: crate::backends::mock::MockParams { match_miss_rate: 1.0, ..Default::default() }, ..Default::default() },
        );
        reg
    }

    fn open(kind: Kind, id: &str) -> Arc<Backend> {
        Backend::open(kind, &format!("mock:{id}"), &registry(), EndpointSettings::default()).unwrap()
    }

    fn case(root: &Path, id: &str, n: usize) -> SourceTestCase {
        let dir = root.join("corpus").join(id);
        for i in 0..n {
            Image::filled(32, 24, [60, 60 + i as u8, 70]).with_tag("case", id).save(&dir.join(frame_name(i))).unwrap();
        }
        let t = Telemetry { speed_mps: vec![5.0; n], steering_rad: vec![0.0; n] };
        fs::write(dir.join(crate::scene::TELEMETRY_FILE), serde_json::to_string(&t).unwrap()).unwrap();
        SourceTestCase::load(&dir, "DE").unwrap()
    }

    fn ctx<'a>(edit: &'a Backend, video: &'a Backend) -> GenerateContext<'a> {
        GenerateContext { edit, video, config_hash: "h", backend_ids: BTreeMap::new(), clock: &|| 0 }
    }

    #[test]
    fn equal_similarity_falls_back_to_lower_count() {
        let dir = tempfile::tempdir().unwrap();
        let embed = open(Kind::Embed, "keyed");
        let mrs = vec![
            mr("intersection", Verb::Adds, "a stop sign on the roadside", "slow down"),
            mr("intersection", Verb::Adds, "a red light on the roadside", "slow down"),
        ];
        // Scripted embeddings: both MR texts contain "intersection".
        let store = MrStore::build(dir.path(), &mrs, &embed, EmbedText::Gherkin, "AutoMT").unwrap();
        for _ in 0..3 {
            store.record_execution(0).unwrap();
        }
        store.record_execution(1).unwrap();
        let (chosen, rec) =
            match_mr("c", &rep("intersection", 5.0), &store, &open(Kind::Chat, "miss"), &embed, &MatchOptions::default())
                .unwrap();
        assert_eq!(chosen.index, 1);
        assert!(rec.fallback);
        assert_eq!(rec.execution_count, 2);
    }

    #[test]
    fn road_keyed_embeddings_pick_the_matching_mr() {
        let dir = tempfile::tempdir().unwrap();
        let embed = open(Kind::Embed, "keyed");
        let mrs = vec![
            mr("field path", Verb::Adds, "a tractor on the road", "slow down"),
            mr("intersection", Verb::Adds, "a red light on the roadside", "slow down"),
        ];
        let store = MrStore::build(dir.path(), &mrs, &embed, EmbedText::Gherkin, "AutoMT").unwrap();
        let opts = MatchOptions { top_k: 5, ..Default::default() };
        let (chosen, _) =
            match_mr("c", &rep("intersection", 5.0), &store, &open(Kind::Chat, "chat"), &embed, &opts).unwrap();
        assert_eq!(chosen.index, 1);
        let err = match_mr("c", &rep("field path", 0.0), &store, &open(Kind::Chat, "chat"), &embed, &opts).unwrap_err();
        assert_eq!(err, FollowupError::NoApplicableMr("c".into()));
    }

    #[test]
    fn artifact_has_watermarked_frames_and_lineage() {
        let root = tempfile::tempdir().unwrap();
        let c = case(root.path(), "c1", 10);
        let stored = StoredMr {
            index: 0,
            mr: mr("any roads", Verb::Adds, "a pedestrian on the road", "slow down"),
            embedding: vec![1.0],
            execution_count: 0,
        };
        let plan = plan_manipulation(&stored.mr);
        let (edit, video) = (open(Kind::Edit, "edit"), open(Kind::Video, "video"));
        let out = root.path().join("out/c1");
        let art = generate_followup(&c, &stored, 1.0, &plan, &ctx(&edit, &video), &out).unwrap();
        assert_eq!(art.frames.len(), 10);
        let frames = load_artifact_frames(&out).unwrap();
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(read_watermark(f), Some(i as u32));
        }
        assert!(out.join(PLAN_FILE).is_file() && out.join(KEYFRAME_FILE).is_file());
        let edited = load_artifact_keyframe(&out).unwrap();
        assert!(!edited.same_pixels(&c.keyframe().unwrap()));

        let short = open(Kind::Video, "vid-short");
        let err = generate_followup(&c, &stored, 1.0, &plan, &ctx(&edit, &short), &root.path().join("out/c2"));
        assert!(matches!(err, Err(FollowupError::Backend(BackendError::VideoRejected(_)))));
        assert!(!root.path().join("out/c2").exists());
    }

    #[test]
    fn batch_is_restartable_and_force_reproduces_bytes() {
        let root = tempfile::tempdir().unwrap();
        let cases: Vec<SourceTestCase> = (0..4).map(|i| case(root.path(), &format!("c{i}"), 3)).collect();
        let reps: Vec<(String, TestCaseRepresentation)> =
            cases.iter().map(|c| (c.id.clone(), rep("intersection", 5.0))).collect();
        let embed = open(Kind::Embed, "embed");
        let mrs = vec![
            mr("any roads", Verb::Adds, "a pedestrian on the road", "slow down"),
            mr("any roads", Verb::Replaces, "the weather with heavy rain", "slow down"),
            mr("intersection", Verb::Adds, "a red light on the roadside", "slow down"),
        ];
        let store = MrStore::build(&root.path().join("store"), &mrs, &embed, EmbedText::Gherkin, "AutoMT").unwrap();
        let (chat, edit, video) = (open(Kind::Chat, "chat"), open(Kind::Edit, "edit"), open(Kind::Video, "video"));
        let out = root.path().join("gen");
        let run = |force: bool| {
            generate_batch(
                &cases,
                &reps,
                &store,
                &chat,
                &embed,
                &MatchOptions::default(),
                &ctx(&edit, &video),
                &out,
                BatchOptions { parallel: 3, force },
            )
            .unwrap()
        };
        let first = run(false);
        assert_eq!(first.generated, 4);
        let total: u64 = store.snapshot().iter().map(|e| e.execution_count).sum();
        assert_eq!(total, 4);
        let manifest = fs::read(out.join(MANIFEST_FILE)).unwrap();
        let calls = chat.call_count() + edit.call_count() + video.call_count() + embed.call_count();

        let again = run(false);
        assert_eq!(again.skipped_existing, 4);
        assert_eq!(chat.call_count() + edit.call_count() + video.call_count() + embed.call_count(), calls);
        assert_eq!(fs::read(out.join(MANIFEST_FILE)).unwrap(), manifest);

        let frame = fs::read(out.join("cases/c2/frame_001.png")).unwrap();
        let forced = run(true);
        assert_eq!(forced.generated, 4);
        assert_eq!(fs::read(out.join(MANIFEST_FILE)).unwrap(), manifest);
        assert_eq!(fs::read(out.join("cases/c2/frame_001.png")).unwrap(), frame);
        assert_eq!(store.snapshot().iter().map(|e| e.execution_count).sum::<u64>(), 4);
    }
}
