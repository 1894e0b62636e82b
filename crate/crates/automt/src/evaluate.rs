//! ADS predictions on source and follow-up cases, judged against the
//! cross-ADS variance bands of each source case.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use automt_core::oracle::{
    bands_from_source, judge, summarize, violation_rate, Behavior, OracleError, PredictionSeries, SignConvention,
    Summary, ViolationVerdict,
};
use automt_core::validation::ValidityVerdict;

use crate::backends::{Backend, BackendError};
use crate::followup::{load_artifact_frames, FollowupError, FollowupStatus, ManifestEntry};
use crate::fsutil::{read_jsonl_or_empty, write_json, write_jsonl};
use crate::scene::{AnalyzeError, SourceTestCase};

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const VIOLATIONS_FILE: &str = "violations.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaluateError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Artifact(#[from] FollowupError),
    #[error(transparent)]
    Case(#[from] AnalyzeError),
    #[error("{0}")]
    Precondition(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Followup,
}

/// One line of the predictions JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub role: Role,
    #[serde(flatten)]
    pub series: PredictionSeries,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub total: usize,
    pub violated: usize,
    pub rate: f64,
}

impl RateCell {
    fn add(&mut self, violated: bool) {
        self.total += 1;
        self.violated += usize::from(violated);
        self.rate = self.violated as f64 / self.total as f64;
    }
}

/// Per-ADS violation rates, overall and by behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdsRow {
    pub ads_id: String,
    pub region: String,
    #[serde(flatten)]
    pub overall: RateCell,
    pub by_behavior: BTreeMap<String, RateCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub cases: usize,
    pub band_k: f64,
    pub sign_convention: SignConvention,
    pub ads: Vec<AdsRow>,
}

/// A follow-up to judge: the source case, its artifact and the behavior.
pub struct Job<'a> {
    pub case: &'a SourceTestCase,
    pub artifact_dir: std::path::PathBuf,
    pub behavior: Behavior,
}

/// Verdicts for one case: bands from every ADS's source medians, then one
/// verdict per ADS for its follow-up median.
pub fn judge_case(
    case_id: &str,
    behavior: Behavior,
    source: &[(String, Summary)],
    followup: &[(String, Summary)],
    band_k: f64,
    sign: SignConvention,
) -> Result<Vec<ViolationVerdict>, OracleError> {
    let summaries: Vec<Summary> = source.iter().map(|(_, s)| *s).collect();
    let bands = bands_from_source(&summaries, band_k)?;
    Ok(followup.iter().map(|(ads, s)| judge(ads, case_id, behavior, *s, bands, sign)).collect())
}

/// Rolls verdicts up into one row per ADS, in `ads_order`.
pub fn summarize_violations(
    verdicts: &[ViolationVerdict],
    ads_order: &[String],
    region: &str,
) -> Result<Vec<AdsRow>, OracleError> {
    let mut rows = Vec::with_capacity(ads_order.len());
    for ads in ads_order {
        let mine: Vec<ViolationVerdict> = verdicts.iter().filter(|v| &v.ads_id == ads).cloned().collect();
        let mut overall = RateCell::default();
        let mut by_behavior: BTreeMap<String, RateCell> = BTreeMap::new();
        for v in &mine {
            overall.add(v.violated);
            by_behavior.entry(v.behavior.as_str().to_string()).or_default().add(v.violated);
        }
        overall.rate = violation_rate(&mine)?;
        rows.push(AdsRow { ads_id: ads.clone(), region: region.to_string(), overall, by_behavior });
    }
    Ok(rows)
}

pub struct EvaluateOptions {
    pub band_k: f64,
    pub sign: SignConvention,
    pub region: String,
    pub parallel: usize,
    pub force: bool,
    /// Only follow-ups judged valid, when verdicts are given.
    pub valid_only: bool,
}

/// Runs every ADS on every selected source and follow-up case and writes
/// predictions, violations and the summary into `out`.
pub fn evaluate_batch(
    cases: &[SourceTestCase],
    manifest: &[ManifestEntry],
    verdicts: Option<&[ValidityVerdict]>,
    generate_dir: &Path,
    ads: &[(String, Arc<Backend>)],
    out: &Path,
    opts: &EvaluateOptions,
) -> Result<EvaluationSummary, EvaluateError> {
    if ads.len() < 2 {
        return Err(OracleError::TooFewPredictors(ads.len()).into());
    }
    let io = |p: &Path, e: std::io::Error| EvaluateError::Io(format!("{}: {e}", p.display()));
    let by_id: BTreeMap<&str, &SourceTestCase> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
    let valid: Option<BTreeMap<&str, bool>> =
        verdicts.map(|vs| vs.iter().map(|v| (v.case_id.as_str(), v.valid)).collect());

    let mut jobs = Vec::new();
    for entry in manifest.iter().filter(|e| e.status == FollowupStatus::Generated) {
        if opts.valid_only {
            if let Some(valid) = &valid {
                if !valid.get(entry.case_id.as_str()).copied().unwrap_or(false) {
                    continue;
                }
            }
        }
        let case = by_id
            .get(entry.case_id.as_str())
            .ok_or_else(|| EvaluateError::Precondition(format!("case {} is not in the corpus", entry.case_id)))?;
        let behavior = Behavior::parse(entry.expected_behavior.as_deref().unwrap_or(""))?;
        let artifact_dir = entry
            .artifact_dir(generate_dir)
            .ok_or_else(|| EvaluateError::Precondition(format!("case {} has no artifact", entry.case_id)))?;
        jobs.push(Job { case, artifact_dir, behavior });
    }

    let pred_path = out.join(PREDICTIONS_FILE);
    let cached: Vec<PredictionRecord> =
        if opts.force { Vec::new() } else { read_jsonl_or_empty(&pred_path).map_err(|e| io(&pred_path, e))? };
    let cached: BTreeMap<(Role, String, String), PredictionSeries> = cached
        .into_iter()
        .map(|r| ((r.role, r.series.case_id.clone(), r.series.ads_id.clone()), r.series))
        .collect();

    let tasks: Vec<(Role, usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..ads.len()).flat_map(move |a| [(Role::Source, j, a), (Role::Followup, j, a)]))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.parallel.max(1))
        .build()
        .map_err(|e| EvaluateError::Io(e.to_string()))?;
    let predictions: Vec<Result<PredictionRecord, EvaluateError>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(role, j, a)| {
                let job = &jobs[j];
                let (ads_id, backend) = &ads[a];
                let key = (role, job.case.id.clone(), ads_id.clone());
                if let Some(series) = cached.get(&key) {
                    return Ok(PredictionRecord { role, series: series.clone() });
                }
                let frames = match role {
                    Role::Source => job.case.load_frames()?,
                    Role::Followup => load_artifact_frames(&job.artifact_dir)?,
                };
                let (speed_mps, steering_rad) = backend.predict(&frames)?;
                Ok(PredictionRecord {
                    role,
                    series: PredictionSeries { ads_id: ads_id.clone(), case_id: job.case.id.clone(), speed_mps, steering_rad },
                })
            })
            .collect()
    });
    let predictions: Vec<PredictionRecord> = predictions.into_iter().collect::<Result<_, _>>()?;
    write_jsonl(&pred_path, &predictions).map_err(|e| io(&pred_path, e))?;

    let mut verdicts_out = Vec::with_capacity(jobs.len() * ads.len());
    for (j, job) in jobs.iter().enumerate() {
        let mut source = Vec::with_capacity(ads.len());
        let mut followup = Vec::with_capacity(ads.len());
        for a in 0..ads.len() {
            let base = (j * ads.len() + a) * 2;
            source.push((ads[a].0.clone(), summarize(&predictions[base].series)?));
            followup.push((ads[a].0.clone(), summarize(&predictions[base + 1].series)?));
        }
        verdicts_out.extend(judge_case(&job.case.id, job.behavior, &source, &followup, opts.band_k, opts.sign)?);
    }
    let viol_path = out.join(VIOLATIONS_FILE);
    write_jsonl(&viol_path, &verdicts_out).map_err(|e| io(&viol_path, e))?;

    let order: Vec<String> = ads.iter().map(|(id, _)| id.clone()).collect();
    let rows = if jobs.is_empty() { Vec::new() } else { summarize_violations(&verdicts_out, &order, &opts.region)? };
    let summary = EvaluationSummary { cases: jobs.len(), band_k: opts.band_k, sign_convention: opts.sign, ads: rows };
    let summary_path = out.join(SUMMARY_FILE);
    write_json(&summary_path, &summary).map_err(|e| io(&summary_path, e))?;
    Ok(summary)
}
