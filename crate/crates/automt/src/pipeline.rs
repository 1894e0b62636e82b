//! Stage drivers shared by the CLI and tests: each reads the previous
//! stage's files from the run directory and writes its own.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use automt_core::followup::ApplicabilityThresholds;
use automt_core::mr::MrRecord;
use automt_core::scene::TestCaseRepresentation;
use automt_core::validation::ValidityVerdict;
use automt_core::{MetamorphicRelation, Taxonomy};

use crate::backends::BackendError;
use crate::config::{Backends, ConfigError, RunConfig};
use crate::evaluate::{evaluate_batch, EvaluateError, EvaluateOptions, EvaluationSummary};
use crate::extraction::{extract_corpus, read_rules, ExtractOptions, ExtractionError, ExtractionRecord};
use crate::followup::{
    generate_batch, BatchOptions, BatchReport, FollowupError, GenerateContext, ManifestEntry, MatchOptions,
    MANIFEST_FILE,
};
use crate::fsutil::{read_jsonl, read_jsonl_or_empty, write_atomic, write_jsonl};
use crate::layout::RunLayout;
use crate::report::{build_report, write_report, Report, ReportError, ReportInputs};
use crate::scene::{
    analyze_corpus, load_corpus, read_representations, write_representations, AnalyzeError, AnalyzeOptions,
    SourceTestCase,
};
use crate::store::{MrStore, StoreError};
use crate::validation::{validate_batch, Judges, ValidateError, ValidationReport, VERDICTS_FILE};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    /// A stage ran before the stage producing its inputs.
    #[error("{path} not found; run `{stage}` first")]
    MissingStage { stage: String, path: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Analyze(#[from] AnalyzeError),
    #[error(transparent)]
    Followup(#[from] FollowupError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
    #[error(transparent)]
    Evaluate(#[from] EvaluateError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl PipelineError {
    /// 2 for usage and file problems, 1 for pipeline failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Io(_) => 2,
            PipelineError::Config(ConfigError::Read { .. } | ConfigError::Parse { .. } | ConfigError::Invalid(_)) => 2,
            _ => 1,
        }
    }

    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Usage(_) => "usage",
            PipelineError::Io(_) => "io",
            PipelineError::MissingStage { .. } => "missing_stage",
            PipelineError::Config(ConfigError::Backend(b)) => b.code(),
            PipelineError::Config(_) => "config",
            PipelineError::Extraction(ExtractionError::Backend(b)) => b.code(),
            PipelineError::Extraction(_) => "extraction",
            PipelineError::Store(StoreError::Backend(b)) => b.code(),
            PipelineError::Store(StoreError::UnknownIndex(_)) => "unknown_index",
            PipelineError::Store(_) => "store",
            PipelineError::Analyze(AnalyzeError::Backend(b)) => b.code(),
            PipelineError::Analyze(AnalyzeError::Scene { .. }) => "malformed_scene_reply",
            PipelineError::Analyze(_) => "analyze",
            PipelineError::Followup(FollowupError::Backend(b)) => b.code(),
            PipelineError::Followup(_) => "generate",
            PipelineError::Validate(ValidateError::Backend(b)) => b.code(),
            PipelineError::Validate(ValidateError::MalformedJudgement(_)) => "malformed_judgement",
            PipelineError::Validate(_) => "validate",
            PipelineError::Evaluate(EvaluateError::Backend(b)) => b.code(),
            PipelineError::Evaluate(_) => "evaluate",
            PipelineError::Report(ReportError::MissingStage { .. }) => "missing_stage",
            PipelineError::Report(_) => "report",
        }
    }

    pub fn backend(&self) -> Option<&BackendError> {
        match self {
            PipelineError::Config(ConfigError::Backend(b))
            | PipelineError::Extraction(ExtractionError::Backend(b))
            | PipelineError::Store(StoreError::Backend(b))
            | PipelineError::Analyze(AnalyzeError::Backend(b))
            | PipelineError::Followup(FollowupError::Backend(b))
            | PipelineError::Validate(ValidateError::Backend(b))
            | PipelineError::Evaluate(EvaluateError::Backend(b)) => Some(b),
            _ => None,
        }
    }
}

fn io(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io(format!("{}: {e}", path.display()))
}

/// Counts printed by each stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: &'static str,
    pub items: usize,
    pub produced: usize,
    pub reused: usize,
    pub backend_calls: u64,
}

pub struct Pipeline {
    pub config: RunConfig,
    pub backends: Backends,
    pub layout: RunLayout,
    pub taxonomy: Taxonomy,
    pub force: bool,
}

impl Pipeline {
    pub fn new(config: RunConfig, force: bool) -> Result<Pipeline, PipelineError> {
        config.validate()?;
        let taxonomy = config.taxonomy()?;
        let backends = Backends::open(&config)?;
        let layout = RunLayout::new(config.output_root.clone());
        Ok(Pipeline { config, backends, layout, taxonomy, force })
    }

    /// Writes the effective configuration next to the stage outputs.
    pub fn write_effective_config(&self) -> Result<(), PipelineError> {
        let path = self.layout.effective_config();
        write_atomic(&path, self.config.to_toml().as_bytes()).map_err(|e| io(&path, e))
    }

    fn load_cases(&self, corpus: &Path) -> Result<Vec<SourceTestCase>, PipelineError> {
        if !corpus.is_dir() {
            return Err(PipelineError::Io(format!("{}: corpus directory not found", corpus.display())));
        }
        Ok(load_corpus(corpus, &self.config.region)?)
    }

    fn require(&self, path: &Path, stage: &str) -> Result<(), PipelineError> {
        if path.exists() {
            Ok(())
        } else {
            Err(PipelineError::MissingStage { stage: stage.to_string(), path: path.display().to_string() })
        }
    }

    pub fn extract(&self, rules_path: &Path) -> Result<StageSummary, PipelineError> {
        let text = std::fs::read_to_string(rules_path).map_err(|e| io(rules_path, e))?;
        let rules = read_rules(&text);
        let records_path = self.layout.extraction_records();
        let previous: Vec<ExtractionRecord> = if self.force {
            Vec::new()
        } else {
            read_jsonl_or_empty(&records_path).map_err(|e| io(&records_path, e))?
        };
        let profiles: Vec<String> = self.backends.parsers.iter().map(|p| p.name.clone()).collect();
        let reusable = |r: &ExtractionRecord| {
            r.region == self.taxonomy.region()
                && r.candidates.iter().map(|c| c.profile.as_str()).eq(profiles.iter().map(String::as_str))
        };
        let cache: BTreeMap<&str, &ExtractionRecord> =
            previous.iter().filter(|r| reusable(r)).map(|r| (r.rule_text.as_str(), r)).collect();
        let todo: Vec<String> = rules.iter().filter(|r| !cache.contains_key(r.as_str())).cloned().collect();
        let opts = ExtractOptions {
            system_name: self.config.system_name.clone(),
            accept_score: self.config.thresholds.accept_score,
            samples: self.config.selfcheck_samples,
        };
        let fresh = if todo.is_empty() {
            Vec::new()
        } else {
            extract_corpus(&todo, &self.backends.parsers, &self.taxonomy, &self.backends.validator, &opts, self.config.parallel)?
        };
        let fresh: BTreeMap<&str, &ExtractionRecord> = fresh.iter().map(|r| (r.rule_text.as_str(), r)).collect();
        let records: Vec<ExtractionRecord> = rules
            .iter()
            .map(|r| (*cache.get(r.as_str()).or_else(|| fresh.get(r.as_str())).expect("every rule extracted")).clone())
            .collect();
        write_jsonl(&records_path, &records).map_err(|e| io(&records_path, e))?;
        let winners: Vec<MrRecord> = records
            .iter()
            .filter_map(|r| r.winner.and_then(|w| r.candidates[w].mr.clone()))
            .collect();
        write_jsonl(&self.layout.mrs(), &winners).map_err(|e| io(&self.layout.mrs(), e))?;
        Ok(StageSummary {
            stage: "extract",
            items: records.len(),
            produced: winners.len(),
            reused: records.len() - todo.len().min(records.len()),
            backend_calls: self.backends.total_calls(),
        })
    }

    pub fn build_store(&self) -> Result<StageSummary, PipelineError> {
        let dir = self.layout.store_dir();
        if !self.force && MrStore::exists(&dir) {
            let store = MrStore::load(&dir)?;
            return Ok(StageSummary { stage: "build-store", items: store.len(), produced: 0, reused: store.len(), backend_calls: 0 });
        }
        self.require(&self.layout.mrs(), "extract")?;
        let records: Vec<MrRecord> = read_jsonl(&self.layout.mrs()).map_err(|e| io(&self.layout.mrs(), e))?;
        let mrs: Vec<MetamorphicRelation> = records.into_iter().map(MrRecord::into_mr).collect();
        let store = MrStore::build(&dir, &mrs, &self.backends.embed, self.config.embed_text, &self.config.system_name)?;
        Ok(StageSummary {
            stage: "build-store",
            items: store.len(),
            produced: store.len(),
            reused: 0,
            backend_calls: self.backends.total_calls(),
        })
    }

    pub fn analyze(&self, corpus: &Path) -> Result<StageSummary, PipelineError> {
        let cases = self.load_cases(corpus)?;
        let path = self.layout.representations();
        let previous: Vec<(String, TestCaseRepresentation)> =
            if !self.force && path.is_file() { read_representations(&path)? } else { Vec::new() };
        let cache: BTreeMap<&str, &TestCaseRepresentation> = previous.iter().map(|(id, r)| (id.as_str(), r)).collect();
        let todo: Vec<SourceTestCase> = cases.iter().filter(|c| !cache.contains_key(c.id.as_str())).cloned().collect();
        let opts = AnalyzeOptions { frame_cap: self.config.frame_cap, single_image: self.config.vision_single_image };
        let fresh = analyze_corpus(&todo, &self.backends.vision, opts, self.config.parallel)?;
        let fresh: BTreeMap<&str, &TestCaseRepresentation> = fresh.iter().map(|(id, r)| (id.as_str(), r)).collect();
        let reps: Vec<(String, TestCaseRepresentation)> = cases
            .iter()
            .map(|c| {
                let r = cache.get(c.id.as_str()).or_else(|| fresh.get(c.id.as_str())).expect("every case analyzed");
                (c.id.clone(), (*r).clone())
            })
            .collect();
        write_representations(&path, &reps)?;
        Ok(StageSummary {
            stage: "analyze",
            items: reps.len(),
            produced: todo.len(),
            reused: reps.len() - todo.len(),
            backend_calls: self.backends.total_calls(),
        })
    }

    pub fn generate(&self, corpus: &Path) -> Result<BatchReport, PipelineError> {
        let cases = self.load_cases(corpus)?;
        self.require(&self.layout.representations(), "analyze")?;
        self.require(&self.layout.store_dir(), "build-store")?;
        let reps = read_representations(&self.layout.representations())?;
        let store = MrStore::load(&self.layout.store_dir())?;
        let t = &self.config.thresholds;
        let match_opts = MatchOptions {
            top_k: t.top_k,
            thresholds: ApplicabilityThresholds { v_min: t.v_min, epsilon: t.epsilon },
        };
        let b = &self.backends;
        let backend_ids: BTreeMap<String, String> = [
            ("chat", b.chat.url()),
            ("embed", b.embed.url()),
            ("edit", b.edit.url()),
            ("video", b.video.url()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let hash = self.config.hash();
        let config = &self.config;
        let clock = move || config.now_ms();
        let ctx = GenerateContext { edit: &b.edit, video: &b.video, config_hash: &hash, backend_ids, clock: &clock };
        Ok(generate_batch(
            &cases,
            &reps,
            &store,
            &b.chat,
            &b.embed,
            &match_opts,
            &ctx,
            &self.layout.generate_dir(),
            BatchOptions { parallel: self.config.parallel, force: self.force },
        )?)
    }

    fn manifest(&self) -> Result<Vec<ManifestEntry>, PipelineError> {
        let path = self.layout.generate_dir().join(MANIFEST_FILE);
        self.require(&path, "generate")?;
        read_jsonl(&path).map_err(|e| io(&path, e))
    }

    pub fn validate(&self, corpus: &Path) -> Result<ValidationReport, PipelineError> {
        let cases = self.load_cases(corpus)?;
        let manifest = self.manifest()?;
        let store = MrStore::load(&self.layout.store_dir())?;
        let judges = Judges {
            vision: &self.backends.vision,
            logic: &self.backends.validator,
            system_name: &self.config.system_name,
            logical_max_score: self.config.thresholds.logical_max_score,
        };
        Ok(validate_batch(
            &cases,
            &manifest,
            &self.layout.generate_dir(),
            &store,
            judges,
            &self.layout.validate_dir(),
            self.config.parallel,
            self.force,
        )?)
    }

    pub fn evaluate(&self, corpus: &Path) -> Result<EvaluationSummary, PipelineError> {
        let cases = self.load_cases(corpus)?;
        let manifest = self.manifest()?;
        let verdicts_path = self.layout.validate_dir().join(VERDICTS_FILE);
        let verdicts: Option<Vec<ValidityVerdict>> = if verdicts_path.is_file() {
            Some(read_jsonl(&verdicts_path).map_err(|e| io(&verdicts_path, e))?)
        } else if self.config.evaluate_valid_only {
            return Err(PipelineError::MissingStage {
                stage: "validate".into(),
                path: format!("{} (or set evaluate_valid_only = false)", verdicts_path.display()),
            });
        } else {
            None
        };
        let opts = EvaluateOptions {
            band_k: self.config.thresholds.band_k,
            sign: self.config.thresholds.sign_convention,
            region: self.config.region.clone(),
            parallel: self.config.parallel,
            force: self.force,
            valid_only: self.config.evaluate_valid_only,
        };
        Ok(evaluate_batch(
            &cases,
            &manifest,
            verdicts.as_deref(),
            &self.layout.generate_dir(),
            &self.backends.ads,
            &self.layout.evaluate_dir(),
            &opts,
        )?)
    }

    pub fn report(&self, inputs: &ReportInputs) -> Result<Report, PipelineError> {
        let report = build_report(&self.layout, inputs)?;
        write_report(&self.layout, &report)?;
        Ok(report)
    }

    /// Every stage in order, with the synthetic corpus layout.
    pub fn run_all(&self, rules: &Path, corpus: &Path, inputs: &ReportInputs) -> Result<Report, PipelineError> {
        self.write_effective_config()?;
        self.extract(rules)?;
        self.build_store()?;
        self.analyze(corpus)?;
        self.generate(corpus)?;
        self.validate(corpus)?;
        self.evaluate(corpus)?;
        self.report(inputs)
    }
}
