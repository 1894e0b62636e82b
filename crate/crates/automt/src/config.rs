//! Run configuration: TOML file, environment overrides, CLI overrides, and
//! the opened backend set.
//!
//! Precedence, lowest first: built-in defaults, the config file,
//! `AUTOMT_*` environment variables, command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use automt_core::oracle::SignConvention;
use automt_core::prompts::RULE_PARSER_TEMPLATE;
use automt_core::selfcheck::DEFAULT_ACCEPT_THRESHOLD;
use automt_core::Taxonomy;

use crate::backends::mock::{EmbedMode, MockSpec};
use crate::backends::{Backend, BackendError, EndpointSettings, Kind, MockRegistry};
use crate::extraction::ParserProfile;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("taxonomy: {0}")]
    Taxonomy(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    /// Highest self-check score a winning MR may have, in [0, 1].
    pub accept_score: f64,
    /// Highest self-check score that still counts as logically aligned.
    pub logical_max_score: f64,
    /// Minimum ego speed for slow-down MRs, m/s.
    pub v_min: f64,
    /// Speeds within this of zero are stationary, m/s.
    pub epsilon: f64,
    /// Variance band half-width in standard deviations.
    pub band_k: f64,
    /// Candidates retrieved before the model picks one.
    pub top_k: usize,
    pub sign_convention: SignConvention,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            accept_score: DEFAULT_ACCEPT_THRESHOLD,
            logical_max_score: 0.0,
            v_min: 1.0,
            epsilon: 0.05,
            band_k: automt_core::oracle::DEFAULT_BAND_K,
            top_k: 5,
            sign_convention: SignConvention::LeftPositive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendTable {
    pub chat: String,
    pub vision: String,
    pub embed: String,
    pub edit: String,
    pub video: String,
    /// Scores extraction candidates; a chat-kind endpoint.
    pub validator: String,
    #[serde(flatten)]
    pub settings: EndpointSettings,
}

impl Default for BackendTable {
    fn default() -> Self {
        BackendTable {
            chat: "mock:chat".into(),
            vision: "mock:vision".into(),
            embed: "mock:embed".into(),
            edit: "mock:edit".into(),
            video: "mock:video".into(),
            validator: "mock:validator".into(),
            settings: EndpointSettings::default(),
        }
    }
}

impl BackendTable {
    fn slot(&mut self, key: &str) -> Option<&mut String> {
        match key {
            "chat" => Some(&mut self.chat),
            "vision" => Some(&mut self.vision),
            "embed" => Some(&mut self.embed),
            "edit" => Some(&mut self.edit),
            "video" => Some(&mut self.video),
            "validator" => Some(&mut self.validator),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParserConfig {
    pub name: String,
    pub backend: String,
    #[serde(default = "default_template")]
    pub template: String,
}

fn default_template() -> String {
    RULE_PARSER_TEMPLATE.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdsConfig {
    pub id: String,
    pub backend: String,
}

/// Text embedded for each stored MR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedText {
    /// The rendered Gherkin string.
    #[default]
    Gherkin,
    /// Gherkin plus the structured fields.
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Timestamps {
    /// Fixed (zero) when every endpoint is a mock, wall clock otherwise.
    #[default]
    Auto,
    Fixed,
    Wall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub region: String,
    /// Taxonomy JSON; the built-in one for `region` when absent.
    pub taxonomy: Option<PathBuf>,
    pub seed: u64,
    /// Seed for mock scenarios; `seed` when absent.
    pub mock_seed: Option<u64>,
    pub parallel: usize,
    pub output_root: PathBuf,
    pub system_name: String,
    /// Most frames sent to the vision backend per case.
    pub frame_cap: usize,
    /// Send only the middle frame to the vision backend.
    pub vision_single_image: bool,
    /// Judgements averaged per self-check score.
    pub selfcheck_samples: u32,
    pub embed_text: EmbedText,
    /// Evaluate only follow-ups judged valid, when verdicts exist.
    pub evaluate_valid_only: bool,
    pub timestamps: Timestamps,
    pub thresholds: Thresholds,
    pub backends: BackendTable,
    pub parsers: Vec<ParserConfig>,
    pub ads: Vec<AdsConfig>,
    pub mock: BTreeMap<String, MockSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            region: "DE".into(),
            taxonomy: None,
            seed: 42,
            mock_seed: None,
            parallel: 4,
            output_root: PathBuf::from("run"),
            system_name: automt_core::DEFAULT_SYSTEM_NAME.into(),
            frame_cap: 10,
            vision_single_image: false,
            selfcheck_samples: 1,
            embed_text: EmbedText::Gherkin,
            evaluate_valid_only: true,
            timestamps: Timestamps::Auto,
            thresholds: Thresholds::default(),
            backends: BackendTable::default(),
            parsers: (1..=3)
                .map(|i| ParserConfig {
                    name: format!("parser-{i}"),
                    backend: format!("mock:parser-{i}"),
                    template: default_template(),
                })
                .collect(),
            ads: (1..=6).map(|i| AdsConfig { id: format!("ads-{i}"), backend: format!("mock:ads-{i}") }).collect(),
            mock: default_mocks(),
        }
    }
}

/// Mock behavior of the default configuration: imperfect parsers, judges and
/// editors so that every pipeline metric has something to measure.
fn default_mocks() -> BTreeMap<String, MockSpec> {
    let mut m = BTreeMap::new();
    let mut spec = |id: &str, f: &dyn Fn(&mut MockSpec)| {
        let mut s = MockSpec::default();
        f(&mut s);
        m.insert(id.to_string(), s);
    };
    spec("parser-1", &|s| s.params.parser_drift = 0.1);
    spec("parser-2", &|s| {
        s.params.parser_drift = 0.3;
        s.params.parser_noise = 0.1;
    });
    spec("parser-3", &|s| {
        s.params.parser_drift = 0.5;
        s.params.parser_noise = 0.2;
    });
    spec("validator", &|s| s.params.judge_noise = 0.05);
    spec("chat", &|s| {
        s.params.judge_noise = 0.1;
        s.params.match_miss_rate = 0.1;
    });
    spec("vision", &|s| s.params.judge_noise = 0.05);
    spec("embed", &|s| s.params.embed_mode = EmbedMode::Tokens);
    spec("edit", &|s| s.params.edit_miss_rate = 0.15);
    spec("video", &|s| s.params.video_drift_rate = 0.05);
    m
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        RunConfig::from_toml(&text).map_err(|message| ConfigError::Parse { path: path.to_path_buf(), message })
    }

    pub fn from_toml(text: &str) -> Result<RunConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Applies `AUTOMT_BACKEND_<KIND>_URL` and `AUTOMT_MOCK_SEED` from `env`.
    ///
    /// `CHAT` sets both the chat and validator endpoints. `PREDICT` sets every
    /// ADS endpoint; a `{id}` in the value is replaced by the ADS id.
    pub fn apply_env(&mut self, env: &BTreeMap<String, String>) -> Result<(), ConfigError> {
        for kind in Kind::ALL {
            let Some(url) = env.get(&kind.env_var()) else { continue };
            match kind {
                Kind::Chat => {
                    self.backends.chat = url.clone();
                    self.backends.validator = url.clone();
                }
                Kind::Vision => self.backends.vision = url.clone(),
                Kind::Embed => self.backends.embed = url.clone(),
                Kind::Edit => self.backends.edit = url.clone(),
                Kind::Video => self.backends.video = url.clone(),
                Kind::Predict => {
                    for ads in &mut self.ads {
                        ads.backend = url.replace("{id}", &ads.id);
                    }
                }
            }
        }
        if let Some(seed) = env.get("AUTOMT_MOCK_SEED") {
            let seed = seed
                .trim()
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("AUTOMT_MOCK_SEED={seed:?} is not an unsigned integer")))?;
            self.mock_seed = Some(seed);
        }
        Ok(())
    }

    /// Applies a `--backends` table: either a TOML file with backend keys, or
    /// inline `key=url` pairs separated by commas.
    pub fn apply_backend_table(&mut self, table: &str) -> Result<(), ConfigError> {
        let path = Path::new(table);
        let pairs: Vec<(String, String)> = if path.is_file() {
            let text = std::fs::read_to_string(path)
                .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
            let value: toml::Table = toml::from_str(&text)
                .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
            let value = match value.get("backends") {
                Some(toml::Value::Table(inner)) => inner.clone(),
                _ => value,
            };
            value
                .into_iter()
                .map(|(k, v)| match v {
                    toml::Value::String(s) => Ok((k, s)),
                    other => Err(ConfigError::Invalid(format!("backend {k} must be a string, got {other}"))),
                })
                .collect::<Result<_, _>>()?
        } else {
            table
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(|pair| {
                    pair.split_once('=')
                        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                        .ok_or_else(|| ConfigError::Invalid(format!("backend entry {pair:?} is not key=url")))
                })
                .collect::<Result<_, _>>()?
        };
        for (key, url) in pairs {
            if let Some(slot) = self.backends.slot(&key) {
                *slot = url;
            } else if let Some(id) = key.strip_prefix("ads.") {
                let ads = self.ads.iter_mut().find(|a| a.id == id);
                ads.ok_or_else(|| ConfigError::Invalid(format!("no ADS named {id}")))?.backend = url;
            } else if let Some(name) = key.strip_prefix("parser.") {
                let p = self.parsers.iter_mut().find(|p| p.name == name);
                p.ok_or_else(|| ConfigError::Invalid(format!("no parser named {name}")))?.backend = url;
            } else {
                return Err(ConfigError::Invalid(format!("unknown backend key {key:?}")));
            }
        }
        Ok(())
    }

    /// Keeps only the named parser profiles, in the given order.
    pub fn select_parsers(&mut self, names: &[String]) -> Result<(), ConfigError> {
        let mut picked = Vec::with_capacity(names.len());
        for name in names {
            let p = self.parsers.iter().find(|p| &p.name == name);
            picked.push(p.ok_or_else(|| ConfigError::Invalid(format!("no parser profile named {name}")))?.clone());
        }
        self.parsers = picked;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        for (name, v) in [("accept_score", t.accept_score), ("logical_max_score", t.logical_max_score)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("thresholds.{name} = {v} is outside [0, 1]"));
            }
        }
        for (name, v) in [("v_min", t.v_min), ("epsilon", t.epsilon), ("band_k", t.band_k)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("thresholds.{name} = {v} must be a finite non-negative number"));
            }
        }
        if t.top_k == 0 {
            return bad("thresholds.top_k must be at least 1".into());
        }
        if self.parallel == 0 {
            return bad("parallel must be at least 1".into());
        }
        if self.frame_cap == 0 {
            return bad("frame_cap must be at least 1".into());
        }
        if self.selfcheck_samples == 0 {
            return bad("selfcheck_samples must be at least 1".into());
        }
        if self.region.trim().is_empty() {
            return bad("region must not be empty".into());
        }
        if self.parsers.is_empty() {
            return bad("at least one parser profile is required".into());
        }
        let names: BTreeSet<_> = self.parsers.iter().map(|p| &p.name).collect();
        if names.len() != self.parsers.len() {
            return bad("parser profile names must be unique".into());
        }
        let ids: BTreeSet<_> = self.ads.iter().map(|a| &a.id).collect();
        if ids.len() != self.ads.len() {
            return bad("ADS ids must be unique".into());
        }
        if self.ads.len() < 2 {
            return bad("at least two ADS endpoints are needed for variance bands".into());
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<Taxonomy, ConfigError> {
        match &self.taxonomy {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|source| ConfigError::Read { path: path.clone(), source })?;
                Taxonomy::from_json(&text).map_err(|e| ConfigError::Taxonomy(e.to_string()))
            }
            None => Taxonomy::builtin(&self.region).map_err(|e| ConfigError::Taxonomy(e.to_string())),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output root and
    /// the worker count are left out: neither changes any output byte.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_root = PathBuf::new();
        c.parallel = 1;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn all_urls(&self) -> impl Iterator<Item = &str> {
        let b = &self.backends;
        [&b.chat, &b.vision, &b.embed, &b.edit, &b.video, &b.validator]
            .into_iter()
            .map(String::as_str)
            .chain(self.parsers.iter().map(|p| p.backend.as_str()))
            .chain(self.ads.iter().map(|a| a.backend.as_str()))
    }

    pub fn all_mock(&self) -> bool {
        self.all_urls().all(|u| u.starts_with("mock:"))
    }

    /// Milliseconds since the epoch, or 0 under fixed timestamps.
    pub fn now_ms(&self) -> u64 {
        let fixed = match self.timestamps {
            Timestamps::Fixed => true,
            Timestamps::Wall => false,
            Timestamps::Auto => self.all_mock(),
        };
        if fixed {
            0
        } else {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0)
        }
    }

    pub fn mock_registry(&self) -> MockRegistry {
        MockRegistry { run_seed: self.mock_seed.unwrap_or(self.seed), specs: self.mock.clone() }
    }
}

/// Every endpoint of a run, opened.
#[derive(Debug, Clone)]
pub struct Backends {
    pub chat: Arc<Backend>,
    pub vision: Arc<Backend>,
    pub embed: Arc<Backend>,
    pub edit: Arc<Backend>,
    pub video: Arc<Backend>,
    pub validator: Arc<Backend>,
    pub parsers: Vec<ParserProfile>,
    pub ads: Vec<(String, Arc<Backend>)>,
}

impl Backends {
    pub fn open(config: &RunConfig) -> Result<Backends, ConfigError> {
        let reg = config.mock_registry();
        let s = config.backends.settings;
        let b = &config.backends;
        let open = |kind, url: &str| Backend::open(kind, url, &reg, s);
        Ok(Backends {
            chat: open(Kind::Chat, &b.chat)?,
            vision: open(Kind::Vision, &b.vision)?,
            embed: open(Kind::Embed, &b.embed)?,
            edit: open(Kind::Edit, &b.edit)?,
            video: open(Kind::Video, &b.video)?,
            validator: open(Kind::Chat, &b.validator)?,
            parsers: config
                .parsers
                .iter()
                .map(|p| {
                    Ok(ParserProfile {
                        name: p.name.clone(),
                        backend: open(Kind::Chat, &p.backend)?,
                        template: p.template.clone(),
                    })
                })
                .collect::<Result<_, ConfigError>>()?,
            ads: config
                .ads
                .iter()
                .map(|a| Ok((a.id.clone(), open(Kind::Predict, &a.backend)?)))
                .collect::<Result<_, ConfigError>>()?,
        })
    }

    /// Transport attempts across every endpoint.
    pub fn total_calls(&self) -> u64 {
        [&self.chat, &self.vision, &self.embed, &self.edit, &self.video, &self.validator]
            .iter()
            .map(|b| b.call_count())
            .chain(self.parsers.iter().map(|p| p.backend.call_count()))
            .chain(self.ads.iter().map(|(_, b)| b.call_count()))
            .sum()
    }
}
