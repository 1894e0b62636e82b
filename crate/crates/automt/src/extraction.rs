//! Rule-to-MR extraction: candidates from several parser profiles, one
//! self-check score per candidate, and the winner.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use automt_core::mr::{parse_gherkin, MrError, MrRecord};
use automt_core::prompts::{rule_parser_prompt, validation_prompt};
use automt_core::selfcheck::{score_reply, select_winner, Answer, JudgementError};
use automt_core::{MetamorphicRelation, Taxonomy};

use crate::backends::{Backend, BackendError};

/// A named rule parser: one chat endpoint plus its prompt template.
#[derive(Debug, Clone)]
pub struct ParserProfile {
    pub name: String,
    pub backend: Arc<Backend>,
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractionError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed judgement: {0}")]
    Judgement(#[from] JudgementError),
    #[error("at least one parser profile is required")]
    NoProfiles,
    #[error("no rules to extract")]
    NoRules,
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Why a candidate did not yield a scored MR.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub kind: String,
    pub message: String,
}

impl CandidateFailure {
    fn from_mr_error(e: &MrError) -> Self {
        let kind = match e {
            MrError::Grammar(_) => "grammar",
            MrError::OntologyViolation { .. } => "ontology_violation",
            MrError::VerbMismatch { .. } => "verb_mismatch",
            MrError::InvalidMr(_) => "invalid_mr",
        };
        CandidateFailure { kind: kind.into(), message: e.to_string() }
    }

    fn from_judgement(e: &JudgementError) -> Self {
        CandidateFailure { kind: "malformed_judgement".into(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub profile: String,
    /// Raw parser reply.
    pub reply: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mr: Option<MrRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<CandidateFailure>,
    /// Raw validator replies, one per sample.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub judgements: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<Vec<Answer>>,
    pub score: Option<f64>,
}

/// One line of the extraction JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub rule_text: String,
    pub region: String,
    pub candidates: Vec<CandidateRecord>,
    pub winner: Option<usize>,
}

impl ExtractionRecord {
    pub fn winner_mr(&self) -> Option<MetamorphicRelation> {
        let c = &self.candidates[self.winner?];
        c.mr.clone().map(MrRecord::into_mr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractOptions {
    pub system_name: String,
    pub accept_score: f64,
    /// Validator judgements averaged per score.
    pub samples: u32,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            system_name: automt_core::DEFAULT_SYSTEM_NAME.into(),
            accept_score: automt_core::selfcheck::DEFAULT_ACCEPT_THRESHOLD,
            samples: 1,
        }
    }
}

/// Rules file: one rule per line; blank lines and `#` comments are skipped.
pub fn read_rules(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Raw reply of one parser profile and what it parsed to.
pub type Candidate = (String, Result<MetamorphicRelation, MrError>);

/// Raw reply and parse result of every profile, in profile order.
pub fn extract_candidates(
    rule: &str,
    profiles: &[ParserProfile],
    taxonomy: &Taxonomy,
    system_name: &str,
) -> Result<Vec<Candidate>, ExtractionError> {
    if profiles.is_empty() {
        return Err(ExtractionError::NoProfiles);
    }
    let mut out = Vec::with_capacity(profiles.len());
    for profile in profiles {
        if profile.template != automt_core::prompts::RULE_PARSER_TEMPLATE {
            return Err(ExtractionError::UnknownTemplate(profile.template.clone()));
        }
        let reply = profile.backend.chat(&rule_parser_prompt(rule, taxonomy, system_name), &[])?;
        let parsed = parse_gherkin(&reply, taxonomy).map(|mut mr| {
            mr.source_rule = rule.to_string();
            mr
        });
        out.push((reply, parsed));
    }
    Ok(out)
}

/// Self-check outcome of one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub replies: Vec<String>,
    pub answers: Vec<Answer>,
    pub score: f64,
}

/// Scores one candidate with the three validation questions, averaging
/// `samples` judgements. A reply that is not exactly three yes/no answers is
/// [`ExtractionError::Judgement`].
pub fn score_candidate(
    rule: &str,
    mr: &MetamorphicRelation,
    validator: &Backend,
    system_name: &str,
    samples: u32,
) -> Result<Scored, ExtractionError> {
    let gherkin = mr.render_with(system_name).map_err(|e| JudgementError::Malformed(e.to_string()))?;
    let prompt = validation_prompt(rule, &gherkin, system_name);
    let mut replies = Vec::new();
    let mut total = 0.0;
    let mut answers = Vec::new();
    for _ in 0..samples.max(1) {
        let reply = validator.chat(&prompt, &[])?;
        let (a, s) = score_reply(&reply)?;
        replies.push(reply);
        total += s;
        answers = a;
    }
    Ok(Scored { replies, answers, score: total / f64::from(samples.max(1)) })
}

/// Extracts, scores and selects for one rule. Parse and judgement failures
/// are recorded per candidate; only backend failures abort.
pub fn extract_rule(
    rule: &str,
    profiles: &[ParserProfile],
    taxonomy: &Taxonomy,
    validator: &Backend,
    opts: &ExtractOptions,
) -> Result<ExtractionRecord, ExtractionError> {
    let raw = extract_candidates(rule, profiles, taxonomy, &opts.system_name)?;
    let mut candidates = Vec::with_capacity(raw.len());
    for (profile, (reply, parsed)) in profiles.iter().zip(raw) {
        let mut rec = CandidateRecord {
            profile: profile.name.clone(),
            reply,
            mr: None,
            failure: None,
            judgements: Vec::new(),
            answers: None,
            score: None,
        };
        match parsed {
            Err(e) => rec.failure = Some(CandidateFailure::from_mr_error(&e)),
            Ok(mut mr) => match score_candidate(rule, &mr, validator, &opts.system_name, opts.samples) {
                Ok(scored) => {
                    mr.hallucination_score = scored.score;
                    rec.mr = Some(MrRecord::from_mr(&mr).map_err(|e| JudgementError::Malformed(e.to_string()))?);
                    rec.judgements = scored.replies;
                    rec.answers = Some(scored.answers);
                    rec.score = Some(scored.score);
                }
                Err(ExtractionError::Judgement(e)) => {
                    rec.mr = MrRecord::from_mr(&mr).ok();
                    rec.failure = Some(CandidateFailure::from_judgement(&e));
                }
                Err(other) => return Err(other),
            },
        }
        candidates.push(rec);
    }
    let scores: Vec<Option<f64>> = candidates.iter().map(|c| c.score).collect();
    Ok(ExtractionRecord {
        rule_text: rule.to_string(),
        region: taxonomy.region().to_string(),
        candidates,
        winner: select_winner(&scores, opts.accept_score),
    })
}

/// Runs [`extract_rule`] over every rule with at most `parallel` workers.
/// Records come back in input order.
pub fn extract_corpus(
    rules: &[String],
    profiles: &[ParserProfile],
    taxonomy: &Taxonomy,
    validator: &Backend,
    opts: &ExtractOptions,
    parallel: usize,
) -> Result<Vec<ExtractionRecord>, ExtractionError> {
    if rules.is_empty() {
        return Err(ExtractionError::NoRules);
    }
    if profiles.is_empty() {
        return Err(ExtractionError::NoProfiles);
    }
    let done = AtomicUsize::new(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| ExtractionError::Pool(e.to_string()))?;
    pool.install(|| {
        rules
            .par_iter()
            .map(|rule| {
                let rec = extract_rule(rule, profiles, taxonomy, validator, opts);
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                log::debug!("extracted {n}/{}", rules.len());
                rec
            })
            .collect()
    })
}

/// Winning MRs in rule order.
pub fn winners(records: &[ExtractionRecord]) -> Vec<MetamorphicRelation> {
    records.iter().filter_map(ExtractionRecord::winner_mr).collect()
}
