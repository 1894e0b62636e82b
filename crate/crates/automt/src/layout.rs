//! Where each stage reads and writes inside a run directory.

use std::path::{Path, PathBuf};

pub const EFFECTIVE_CONFIG: &str = "config.effective.toml";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> RunLayout {
        RunLayout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn effective_config(&self) -> PathBuf {
        self.root.join(EFFECTIVE_CONFIG)
    }

    pub fn extract_dir(&self) -> PathBuf {
        self.root.join("extract")
    }

    /// Winning MRs, one `MrRecord` per line.
    pub fn mrs(&self) -> PathBuf {
        self.extract_dir().join("mrs.jsonl")
    }

    /// Full extraction records with every candidate.
    pub fn extraction_records(&self) -> PathBuf {
        self.extract_dir().join("records.jsonl")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.root.join("store")
    }

    pub fn representations(&self) -> PathBuf {
        self.root.join("analyze").join("representations.jsonl")
    }

    pub fn generate_dir(&self) -> PathBuf {
        self.root.join("generate")
    }

    pub fn validate_dir(&self) -> PathBuf {
        self.root.join("validate")
    }

    pub fn evaluate_dir(&self) -> PathBuf {
        self.root.join("evaluate")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn report_md(&self) -> PathBuf {
        self.root.join("report.md")
    }
}
