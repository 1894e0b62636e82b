//! Follow-up validity judging: scenario alignment, logical alignment and
//! manipulation verification, plus batch files and summary.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use automt_core::prompts::{manipulation_verification_prompt, scenario_alignment_prompt, validation_prompt};
use automt_core::selfcheck::{parse_binary, score_reply, Answer, JudgementError};
use automt_core::validation::{
    distinct_manipulations, logical_alignment_from_score, summarize, Diversity, ValidationSummary, ValidityVerdict,
};
use automt_core::{MetamorphicRelation, Verb};

use crate::backends::{Backend, BackendError};
use crate::followup::{load_artifact_frames, load_artifact_keyframe, FollowupError, FollowupStatus, ManifestEntry};
use crate::fsutil::{read_jsonl_or_empty, write_json, write_jsonl};
use crate::image::Image;
use crate::scene::{AnalyzeError, SourceTestCase};
use crate::store::MrStore;

pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidateError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed judgement: {0}")]
    MalformedJudgement(#[from] JudgementError),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Artifact(#[from] FollowupError),
    #[error(transparent)]
    Case(#[from] AnalyzeError),
    #[error("no generated follow-ups to validate")]
    EmptyBatch,
    #[error("{0}")]
    Io(String),
}

/// A judge's raw reply, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub case_id: String,
    pub metric: String,
    /// `None` when the metric was decided without asking a judge.
    pub reply: Option<String>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed: Option<String>,
}

/// A metric outcome with the reply that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Judged {
    pub passed: bool,
    pub reply: Option<String>,
}

/// Asks whether the road type of the middle frames agrees.
pub fn scenario_alignment(source: &[Image], followup: &[Image], vision: &Backend) -> Result<Judged, ValidateError> {
    if source.is_empty() || followup.is_empty() {
        return Err(ValidateError::Precondition("scenario alignment needs frames from both cases".into()));
    }
    let pair = [source[source.len() / 2].clone(), followup[followup.len() / 2].clone()];
    let reply = vision.chat(&scenario_alignment_prompt(), &pair)?;
    let passed = parse_binary(&reply)? == Answer::Yes;
    Ok(Judged { passed, reply: Some(reply) })
}

/// Runs the three-question self-check on the MR; passes when the score is
/// at most `max_score`.
pub fn logical_alignment(
    mr: &MetamorphicRelation,
    judge: &Backend,
    system_name: &str,
    max_score: f64,
) -> Result<Judged, ValidateError> {
    let gherkin = mr.render_with(system_name).map_err(|e| ValidateError::Precondition(e.to_string()))?;
    let reply = judge.chat(&validation_prompt(&mr.source_rule, &gherkin, system_name), &[])?;
    let (_, score) = score_reply(&reply)?;
    Ok(Judged { passed: logical_alignment_from_score(score, max_score), reply: Some(reply) })
}

/// Whether the visible change between the keyframes realizes `manipulation`.
/// Identical images fail without a judge call: no change can align.
pub fn manipulation_verification(
    original: &Image,
    edited: &Image,
    manipulation: &str,
    verb: Verb,
    vision: &Backend,
) -> Result<Judged, ValidateError> {
    if original.same_pixels(edited) {
        return Ok(Judged { passed: false, reply: None });
    }
    let pair = [original.clone(), edited.clone()];
    let reply = vision.chat(&manipulation_verification_prompt(manipulation, verb), &pair)?;
    let passed = parse_binary(&reply)? == Answer::Yes;
    Ok(Judged { passed, reply: Some(reply) })
}

#[derive(Clone, Copy)]
pub struct Judges<'a> {
    pub vision: &'a Backend,
    pub logic: &'a Backend,
    pub system_name: &'a str,
    pub logical_max_score: f64,
}

/// Judges one follow-up. A malformed judgement fails its metric and is
/// noted in the transcript; backend failures abort.
pub fn validate_followup(
    case: &SourceTestCase,
    entry: &ManifestEntry,
    artifact_dir: &Path,
    mr: &MetamorphicRelation,
    judges: Judges<'_>,
) -> Result<(ValidityVerdict, Vec<Transcript>), ValidateError> {
    let source = case.load_frames()?;
    let followup = load_artifact_frames(artifact_dir)?;
    let edited = load_artifact_keyframe(artifact_dir)?;
    let keyframe = source.first().ok_or_else(|| ValidateError::Precondition("source case has no frames".into()))?;

    let mut transcripts = Vec::with_capacity(3);
    let mut record = |metric: &str, r: Result<Judged, ValidateError>| -> Result<bool, ValidateError> {
        let (passed, reply, malformed) = match r {
            Ok(j) => (j.passed, j.reply, None),
            Err(ValidateError::MalformedJudgement(e)) => {
                let reply = match &e {
                    JudgementError::Malformed(text) => Some(text.clone()),
                    _ => None,
                };
                (false, reply, Some(e.to_string()))
            }
            Err(e) => return Err(e),
        };
        transcripts.push(Transcript { case_id: entry.case_id.clone(), metric: metric.into(), reply, passed, malformed });
        Ok(passed)
    };
    let s = record("scenario_alignment", scenario_alignment(&source, &followup, judges.vision))?;
    let l = record("logical_alignment", logical_alignment(mr, judges.logic, judges.system_name, judges.logical_max_score))?;
    let m = record(
        "manipulation_verification",
        manipulation_verification(keyframe, &edited, &mr.manipulation, mr.verb, judges.vision),
    )?;
    let index = entry.mr_index.unwrap_or_default();
    Ok((ValidityVerdict::new(entry.case_id.clone(), index, s, l, m), transcripts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    #[serde(flatten)]
    pub summary: ValidationSummary,
    pub diversity: Diversity,
}

/// Diversity over the valid follow-ups of a manifest.
pub fn diversity(manifest: &[ManifestEntry], verdicts: &[ValidityVerdict]) -> Diversity {
    let valid: BTreeMap<&str, bool> = verdicts.iter().map(|v| (v.case_id.as_str(), v.valid)).collect();
    distinct_manipulations(
        manifest
            .iter()
            .filter(|e| valid.get(e.case_id.as_str()).copied().unwrap_or(false))
            .filter_map(|e| e.manipulation.as_deref()),
    )
}

/// Validates every generated follow-up into `out`. Cases already in the
/// verdicts file are kept unless `force` is set.
#[allow(clippy::too_many_arguments)]
pub fn validate_batch(
    cases: &[SourceTestCase],
    manifest: &[ManifestEntry],
    generate_dir: &Path,
    store: &MrStore,
    judges: Judges<'_>,
    out: &Path,
    parallel: usize,
    force: bool,
) -> Result<ValidationReport, ValidateError> {
    let io = |p: &Path, e: std::io::Error| ValidateError::Io(format!("{}: {e}", p.display()));
    let verdicts_path = out.join(VERDICTS_FILE);
    let transcripts_path = out.join(TRANSCRIPTS_FILE);
    let (old_v, old_t): (Vec<ValidityVerdict>, Vec<Transcript>) = if force {
        (Vec::new(), Vec::new())
    } else {
        (
            read_jsonl_or_empty(&verdicts_path).map_err(|e| io(&verdicts_path, e))?,
            read_jsonl_or_empty(&transcripts_path).map_err(|e| io(&transcripts_path, e))?,
        )
    };
    let old_v: BTreeMap<String, ValidityVerdict> = old_v.into_iter().map(|v| (v.case_id.clone(), v)).collect();
    let mut old_t_by_case: BTreeMap<String, Vec<Transcript>> = BTreeMap::new();
    for t in old_t {
        old_t_by_case.entry(t.case_id.clone()).or_default().push(t);
    }

    let by_id: BTreeMap<&str, &SourceTestCase> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
    let generated: Vec<&ManifestEntry> = manifest.iter().filter(|e| e.status == FollowupStatus::Generated).collect();
    if generated.is_empty() {
        return Err(ValidateError::EmptyBatch);
    }
    let mrs: BTreeMap<u32, MetamorphicRelation> = store.snapshot().into_iter().map(|e| (e.index, e.mr)).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| ValidateError::Io(e.to_string()))?;
    let results: Vec<Result<(ValidityVerdict, Vec<Transcript>), ValidateError>> = pool.install(|| {
        generated
            .par_iter()
            .map(|entry| {
                if let Some(v) = old_v.get(&entry.case_id) {
                    return Ok((v.clone(), old_t_by_case.get(&entry.case_id).cloned().unwrap_or_default()));
                }
                let case = by_id
                    .get(entry.case_id.as_str())
                    .ok_or_else(|| ValidateError::Precondition(format!("case {} is not in the corpus", entry.case_id)))?;
                let index = entry.mr_index.ok_or_else(|| ValidateError::Precondition("manifest entry has no MR".into()))?;
                let mr = mrs.get(&index).ok_or_else(|| ValidateError::Precondition(format!("MR {index} is not in the store")))?;
                let dir = entry.artifact_dir(generate_dir).ok_or_else(|| ValidateError::Precondition("manifest entry has no artifact".into()))?;
                validate_followup(case, entry, &dir, mr, judges)
            })
            .collect()
    });
    let mut verdicts = Vec::with_capacity(results.len());
    let mut transcripts = Vec::new();
    for r in results {
        let (v, t) = r?;
        verdicts.push(v);
        transcripts.extend(t);
    }
    write_jsonl(&verdicts_path, &verdicts).map_err(|e| io(&verdicts_path, e))?;
    write_jsonl(&transcripts_path, &transcripts).map_err(|e| io(&transcripts_path, e))?;
    let summary = summarize(&verdicts).map_err(|_| ValidateError::EmptyBatch)?;
    let report = ValidationReport { summary, diversity: diversity(manifest, &verdicts) };
    let summary_path = out.join(SUMMARY_FILE);
    write_json(&summary_path, &report).map_err(|e| io(&summary_path, e))?;
    Ok(report)
}
