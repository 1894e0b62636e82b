//! Run reports (JSON and Markdown) and the statistics file readers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use automt_core::stats::{weighted_fleiss_kappa, welch_t_test, KappaWeights, RatingTable, StatsError, WelchResult};

use crate::evaluate::EvaluationSummary;
use crate::followup::{FollowupStatus, ManifestEntry, MANIFEST_FILE};
use crate::fsutil::{read_json, read_jsonl, write_atomic, write_json};
use crate::layout::RunLayout;
use crate::validation::{ValidationReport, SUMMARY_FILE as VALIDATION_SUMMARY};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReportError {
    #[error("stage {stage} has no output at {path}")]
    MissingStage { stage: &'static str, path: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
}

fn io(path: &Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io(format!("{}: {e}", path.display()))
}

/// Items × raters CSV of integer ratings, no header; `#` starts a comment.
pub fn read_rating_table(path: &Path, categories: u32) -> Result<RatingTable, ReportError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| io(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| io(path, e))?;
        let row: Result<Vec<u32>, _> = rec.iter().filter(|f| !f.is_empty()).map(str::parse::<u32>).collect();
        let row = row.map_err(|e| ReportError::Input(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if !row.is_empty() {
            rows.push(row);
        }
    }
    Ok(RatingTable::new(rows, categories)?)
}

/// Numbers separated by commas, whitespace or newlines.
pub fn parse_samples(text: &str) -> Result<Vec<f64>, ReportError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| ReportError::Input(format!("sample {t:?}: {e}"))))
        .collect()
}

pub fn read_samples(path: &Path) -> Result<Vec<f64>, ReportError> {
    parse_samples(&std::fs::read_to_string(path).map_err(|e| io(path, e))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaOutput {
    pub kappa: f64,
    pub weights: KappaWeights,
    pub items: usize,
    pub raters: usize,
}

pub fn kappa_output(table: &RatingTable, weights: KappaWeights) -> KappaOutput {
    KappaOutput { kappa: weighted_fleiss_kappa(table, weights), weights, items: table.rows().len(), raters: table.raters() }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<KappaOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttest: Option<WelchResult>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationCounts {
    pub cases: usize,
    pub generated: usize,
    pub no_applicable_mr: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub method: String,
    pub generation: GenerationCounts,
    pub validation: ValidationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<EvaluationSummary>,
    #[serde(default, skip_serializing_if = "StatsSection::is_empty")]
    pub stats: StatsSection,
}

impl StatsSection {
    pub fn is_empty(&self) -> bool {
        self.kappa.is_none() && self.ttest.is_none()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportInputs {
    pub method: String,
    pub ratings: Option<(std::path::PathBuf, u32, KappaWeights)>,
    pub samples: Option<(std::path::PathBuf, std::path::PathBuf)>,
}

/// Reads the stage outputs of a run. The validation summary is required;
/// violations are included when the evaluate stage ran.
pub fn build_report(layout: &RunLayout, inputs: &ReportInputs) -> Result<Report, ReportError> {
    let manifest_path = layout.generate_dir().join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(ReportError::MissingStage { stage: "generate", path: manifest_path.display().to_string() });
    }
    let validation_path = layout.validate_dir().join(VALIDATION_SUMMARY);
    if !validation_path.is_file() {
        return Err(ReportError::MissingStage { stage: "validate", path: validation_path.display().to_string() });
    }
    let manifest: Vec<ManifestEntry> = read_jsonl(&manifest_path).map_err(|e| io(&manifest_path, e))?;
    let mut generation = GenerationCounts { cases: manifest.len(), ..Default::default() };
    for e in &manifest {
        match e.status {
            FollowupStatus::Generated => generation.generated += 1,
            FollowupStatus::NoApplicableMr => generation.no_applicable_mr += 1,
            FollowupStatus::EditRejected | FollowupStatus::VideoRejected => generation.rejected += 1,
        }
    }
    let validation: ValidationReport = read_json(&validation_path).map_err(|e| io(&validation_path, e))?;
    let eval_path = layout.evaluate_dir().join(crate::evaluate::SUMMARY_FILE);
    let violations =
        if eval_path.is_file() { Some(read_json(&eval_path).map_err(|e| io(&eval_path, e))?) } else { None };
    let mut stats = StatsSection::default();
    if let Some((path, categories, weights)) = &inputs.ratings {
        stats.kappa = Some(kappa_output(&read_rating_table(path, *categories)?, *weights));
    }
    if let Some((a, b)) = &inputs.samples {
        stats.ttest = Some(welch_t_test(&read_samples(a)?, &read_samples(b)?)?);
    }
    Ok(Report { method: inputs.method.clone(), generation, validation, violations, stats })
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

pub fn render_markdown(r: &Report) -> String {
    let mut md = String::new();
    let v = &r.validation.summary;
    let _ = writeln!(md, "# Run report\n");
    let _ = writeln!(
        md,
        "Source cases: {}. Follow-ups generated: {}. No applicable MR: {}. Rejected by a backend: {}.\n",
        r.generation.cases, r.generation.generated, r.generation.no_applicable_mr, r.generation.rejected
    );
    let _ = writeln!(md, "## Validation rates\n");
    let _ = writeln!(md, "| Method | Scenario Alignment | Logical Alignment | Manipulation Verification | Validation Rate |");
    let _ = writeln!(md, "|---|---|---|---|---|");
    let _ = writeln!(
        md,
        "| {} | {} | {} | {} | {} ({}/{}) |\n",
        r.method,
        pct(v.scenario_alignment),
        pct(v.logical_alignment),
        pct(v.manipulation_verification),
        pct(v.validation_rate),
        v.valid,
        v.total
    );
    let d = &r.validation.diversity;
    let _ = writeln!(md, "## Manipulation diversity\n");
    let _ = writeln!(md, "Distinct manipulations among valid follow-ups: {}\n", d.distinct);
    if !d.histogram.is_empty() {
        let _ = writeln!(md, "| Manipulation | Count |\n|---|---|");
        for (m, n) in &d.histogram {
            let _ = writeln!(md, "| {m} | {n} |");
        }
        md.push('\n');
    }
    if let Some(ev) = &r.violations {
        let behaviors: std::collections::BTreeSet<&String> =
            ev.ads.iter().flat_map(|row| row.by_behavior.keys()).collect();
        let _ = writeln!(md, "## Violation rates\n");
        let _ = writeln!(md, "Follow-ups judged: {}. Band factor k = {}.\n", ev.cases, ev.band_k);
        let mut header = String::from("| ADS | Region | Violations | Rate |");
        let mut rule = String::from("|---|---|---|---|");
        for b in &behaviors {
            let _ = write!(header, " {b} |");
            rule.push_str("---|");
        }
        let _ = writeln!(md, "{header}\n{rule}");
        for row in &ev.ads {
            let _ = write!(md, "| {} | {} | {}/{} | {} |", row.ads_id, row.region, row.overall.violated, row.overall.total, pct(row.overall.rate));
            for b in &behaviors {
                match row.by_behavior.get(*b) {
                    Some(c) => {
                        let _ = write!(md, " {} ({}/{}) |", pct(c.rate), c.violated, c.total);
                    }
                    None => md.push_str(" - |"),
                }
            }
            md.push('\n');
        }
        md.push('\n');
    }
    if let Some(k) = &r.stats.kappa {
        let _ = writeln!(md, "## Rater agreement\n\nWeighted Fleiss' kappa ({:?}): {:.4} over {} items and {} raters.\n", k.weights, k.kappa, k.items, k.raters);
    }
    if let Some(t) = &r.stats.ttest {
        let _ = writeln!(md, "## Welch t-test\n\nt = {:.6}, df = {:.4}, p = {:.6}{}\n", t.t, t.df, t.p, if t.degenerate { " (degenerate samples)" } else { "" });
    }
    md
}

pub fn write_report(layout: &RunLayout, report: &Report) -> Result<(), ReportError> {
    write_json(&layout.report_json(), report).map_err(|e| io(&layout.report_json(), e))?;
    write_atomic(&layout.report_md(), render_markdown(report).as_bytes()).map_err(|e| io(&layout.report_md(), e))
}
