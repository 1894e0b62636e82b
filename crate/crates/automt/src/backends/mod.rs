//! Model backends behind one JSON protocol.
//!
//! A [`Backend`] is a shareable handle to one endpoint. The URL is either
//! `http(s)://host[:port][/prefix]` or `mock:<scenario-id>`; mock endpoints
//! answer in-process through the same JSON bodies as the HTTP ones.

pub mod http;
pub mod mock;
pub mod wire;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::image::Image;
use mock::{MockScenario, MockSpec};
use wire::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Chat,
    Vision,
    Embed,
    Edit,
    Video,
    Predict,
}

impl Kind {
    pub const ALL: [Kind; 6] = [Kind::Chat, Kind::Vision, Kind::Embed, Kind::Edit, Kind::Video, Kind::Predict];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Chat => "chat",
            Kind::Vision => "vision",
            Kind::Embed => "embed",
            Kind::Edit => "edit",
            Kind::Video => "video",
            Kind::Predict => "predict",
        }
    }

    /// `AUTOMT_BACKEND_<KIND>_URL`.
    pub fn env_var(self) -> String {
        format!("AUTOMT_BACKEND_{}_URL", self.as_str().to_ascii_uppercase())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("backend {endpoint} unavailable after {attempts} attempts: {last}")]
    Unavailable { endpoint: String, attempts: u32, last: String },
    #[error("backend {endpoint} timed out after {attempts} attempts")]
    Timeout { endpoint: String, attempts: u32 },
    #[error("edit rejected: {0}")]
    EditRejected(String),
    #[error("video rejected: {0}")]
    VideoRejected(String),
    #[error("backend {endpoint} rejected the request ({code}): {message}")]
    Rejected { endpoint: String, code: String, message: String },
    #[error("backend {endpoint} sent a malformed response: {detail}")]
    Protocol { endpoint: String, detail: String },
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("endpoint {endpoint} is a {kind} backend and cannot serve {operation}")]
    WrongKind { endpoint: String, kind: &'static str, operation: &'static str },
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl BackendError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::Unavailable { .. } => "backend_unavailable",
            BackendError::Timeout { .. } => "timeout",
            BackendError::EditRejected(_) => "edit_rejected",
            BackendError::VideoRejected(_) => "video_rejected",
            BackendError::Rejected { .. } => "backend_rejected",
            BackendError::Protocol { .. } => "protocol_error",
            BackendError::DimensionMismatch { .. } => "dimension_mismatch",
            BackendError::WrongKind { .. } => "wrong_backend_kind",
            BackendError::Config(_) => "config_error",
            BackendError::Precondition(_) => "precondition",
        }
    }
}

/// Failure of one transport attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum TransportError {
    Io(String),
    Timeout,
    Status { status: u16, body: ErrorBody },
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Io(_) | TransportError::Timeout => true,
            TransportError::Status { status, .. } => *status >= 500,
        }
    }
}

/// Moves one request body to an endpoint and returns the response body.
pub trait Transport: Send + Sync {
    fn post(&self, path: &str, body: &[u8], request_id: &str) -> Result<Vec<u8>, TransportError>;
}

impl Transport for MockScenario {
    fn post(&self, path: &str, body: &[u8], _request_id: &str) -> Result<Vec<u8>, TransportError> {
        self.handle(path, body).map_err(|body| TransportError::Status { status: 400, body })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    /// Extra attempts after the first.
    pub retries: u32,
    /// First backoff; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { retries: 2, backoff_ms: 200 }
    }
}

/// Endpoint settings shared by all kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointSettings {
    pub timeout_ms: u64,
    pub max_in_flight: usize,
    #[serde(flatten)]
    pub retry: RetryPolicy,
}

impl Default for EndpointSettings {
    fn default() -> Self {
        EndpointSettings { timeout_ms: 120_000, max_in_flight: 8, retry: RetryPolicy::default() }
    }
}

/// Content hash of a request: SHA-256 over the path, a newline, and the body.
pub fn request_id(path: &str, body: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(path.as_bytes());
    h.update(b"\n");
    h.update(body);
    hex::encode(h.finalize())
}

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Mock scenario specs plus the run seed they derive their seeds from.
#[derive(Debug, Clone, Default)]
pub struct MockRegistry {
    pub run_seed: u64,
    pub specs: BTreeMap<String, MockSpec>,
}

impl MockRegistry {
    pub fn new(run_seed: u64) -> MockRegistry {
        MockRegistry { run_seed, specs: BTreeMap::new() }
    }

    pub fn resolve(&self, id: &str) -> Result<MockScenario, BackendError> {
        let spec = self.specs.get(id).cloned().unwrap_or_default();
        MockScenario::from_spec(id, self.run_seed, &spec).map_err(BackendError::Config)
    }
}

pub struct Backend {
    kind: Kind,
    url: String,
    transport: Box<dyn Transport>,
    retry: RetryPolicy,
    limiter: Limiter,
    attempts: AtomicU64,
    dim: OnceLock<usize>,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend").field("kind", &self.kind).field("url", &self.url).finish_non_exhaustive()
    }
}

impl Backend {
    pub fn new(kind: Kind, url: &str, transport: Box<dyn Transport>, settings: EndpointSettings) -> Backend {
        Backend {
            kind,
            url: url.to_string(),
            transport,
            retry: settings.retry,
            limiter: Limiter { max: settings.max_in_flight.max(1), in_flight: Mutex::new(0), freed: Condvar::new() },
            attempts: AtomicU64::new(0),
            dim: OnceLock::new(),
        }
    }

    /// Opens `url`: `mock:<id>` resolves through `mocks`, anything else must
    /// be an http(s) base URL.
    pub fn open(
        kind: Kind,
        url: &str,
        mocks: &MockRegistry,
        settings: EndpointSettings,
    ) -> Result<Arc<Backend>, BackendError> {
        let transport: Box<dyn Transport> = if let Some(id) = url.strip_prefix("mock:") {
            if id.is_empty() {
                return Err(BackendError::Config("mock endpoint needs a scenario id".into()));
            }
            Box::new(mocks.resolve(id)?)
        } else if url.starts_with("http://") || url.starts_with("https://") {
            Box::new(http::HttpTransport::new(url, settings.timeout_ms, std::env::var("AUTOMT_BACKEND_TOKEN").ok()))
        } else {
            return Err(BackendError::Config(format!("endpoint {url:?} is neither mock:<id> nor http(s)://")));
        };
        Ok(Arc::new(Backend::new(kind, url, transport, settings)))
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Transport attempts made so far, retries included.
    pub fn call_count(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn require(&self, kinds: &[Kind], operation: &'static str) -> Result<(), BackendError> {
        if kinds.contains(&self.kind) {
            Ok(())
        } else {
            Err(BackendError::WrongKind { endpoint: self.url.clone(), kind: self.kind.as_str(), operation })
        }
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Resp, BackendError> {
        let body = serde_json::to_vec(req).expect("request serializes");
        let id = request_id(path, &body);
        let attempts = self.retry.retries + 1;
        let mut last = TransportError::Io("no attempt made".into());
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let result = {
                let _slot = self.limiter.acquire();
                self.transport.post(path, &body, &id)
            };
            match result {
                Ok(bytes) => {
                    return serde_json::from_slice(&bytes)
                        .map_err(|e| BackendError::Protocol { endpoint: self.url.clone(), detail: e.to_string() });
                }
                Err(e) if e.retryable() => {
                    log::warn!("{} {path} attempt {} failed: {e:?}", self.url, attempt + 1);
                    last = e;
                }
                Err(TransportError::Status { body, .. }) => return Err(self.rejected(body)),
                Err(e) => unreachable!("non-retryable transport error {e:?}"),
            }
        }
        Err(match last {
            TransportError::Timeout => BackendError::Timeout { endpoint: self.url.clone(), attempts },
            TransportError::Io(detail) => BackendError::Unavailable { endpoint: self.url.clone(), attempts, last: detail },
            TransportError::Status { status, body } => BackendError::Unavailable {
                endpoint: self.url.clone(),
                attempts,
                last: format!("HTTP {status} {}: {}", body.code, body.message),
            },
        })
    }

    fn rejected(&self, body: ErrorBody) -> BackendError {
        match body.code.as_str() {
            codes::EDIT_REJECTED => BackendError::EditRejected(body.message),
            codes::VIDEO_REJECTED => BackendError::VideoRejected(body.message),
            _ => BackendError::Rejected { endpoint: self.url.clone(), code: body.code, message: body.message },
        }
    }

    fn protocol(&self, detail: impl Into<String>) -> BackendError {
        BackendError::Protocol { endpoint: self.url.clone(), detail: detail.into() }
    }

    pub fn chat(&self, prompt: &str, images: &[Image]) -> Result<String, BackendError> {
        self.require(&[Kind::Chat, Kind::Vision], "chat")?;
        let images = if images.is_empty() {
            None
        } else {
            Some(images.iter().map(encode).collect::<Result<Vec<_>, _>>()?)
        };
        let resp: ChatResponse = self.call(PATH_CHAT, &ChatRequest { prompt: prompt.to_string(), images })?;
        Ok(resp.text)
    }

    /// One vector per text. The first successful call fixes the dimension.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, BackendError> {
        self.require(&[Kind::Embed], "embed")?;
        if texts.is_empty() {
            return Err(BackendError::Precondition("embed needs at least one text".into()));
        }
        let resp: EmbedResponse = self.call(PATH_EMBED, &EmbedRequest { texts: texts.to_vec() })?;
        if resp.vectors.len() != texts.len() {
            return Err(self.protocol(format!("{} vectors for {} texts", resp.vectors.len(), texts.len())));
        }
        let expected = *self.dim.get_or_init(|| resp.vectors[0].len());
        for v in &resp.vectors {
            if v.len() != expected || v.is_empty() {
                return Err(BackendError::DimensionMismatch { expected, found: v.len() });
            }
        }
        Ok(resp.vectors)
    }

    pub fn edit(
        &self,
        image: &Image,
        mask_classes: Option<&[String]>,
        placement: Option<&str>,
        instruction: &str,
        mode: EditMode,
    ) -> Result<Image, BackendError> {
        self.require(&[Kind::Edit], "edit")?;
        let req = EditRequest {
            image_b64: encode(image)?,
            mask_classes: mask_classes.map(<[String]>::to_vec),
            placement: placement.map(str::to_string),
            instruction: instruction.to_string(),
            mode,
        };
        let resp: EditResponse = self.call(PATH_EDIT, &req)?;
        Image::from_base64(&resp.image_b64).map_err(|e| self.protocol(format!("edited image: {e}")))
    }

    pub fn video(
        &self,
        keyframe: &Image,
        speed_mps: &[f64],
        steering_rad: &[f64],
        frame_count: usize,
    ) -> Result<Vec<Image>, BackendError> {
        self.require(&[Kind::Video], "video")?;
        if frame_count == 0 || speed_mps.len() != frame_count || steering_rad.len() != frame_count {
            return Err(BackendError::Precondition(format!(
                "video needs frame_count >= 1 and matching series (frame_count {frame_count}, speeds {}, steering {})",
                speed_mps.len(),
                steering_rad.len()
            )));
        }
        let req = VideoRequest {
            image_b64: encode(keyframe)?,
            speed_mps: speed_mps.to_vec(),
            steering_rad: steering_rad.to_vec(),
            frame_count,
        };
        let resp: VideoResponse = self.call(PATH_VIDEO, &req)?;
        if resp.frames.len() != frame_count {
            return Err(BackendError::VideoRejected(format!(
                "expected {frame_count} frames, backend returned {}",
                resp.frames.len()
            )));
        }
        resp.frames
            .iter()
            .map(|f| Image::from_base64(f).map_err(|e| self.protocol(format!("video frame: {e}"))))
            .collect()
    }

    /// Per-frame speed (m/s) and steering (rad).
    pub fn predict(&self, frames: &[Image]) -> Result<(Vec<f64>, Vec<f64>), BackendError> {
        self.require(&[Kind::Predict], "predict")?;
        if frames.is_empty() {
            return Err(BackendError::Precondition("predict needs at least one frame".into()));
        }
        let req = PredictRequest { frames: frames.iter().map(encode).collect::<Result<_, _>>()? };
        let resp: PredictResponse = self.call(PATH_PREDICT, &req)?;
        if resp.speed_mps.len() != frames.len() || resp.steering_rad.len() != frames.len() {
            return Err(self.protocol(format!(
                "{} frames but {} speeds and {} steering values",
                frames.len(),
                resp.speed_mps.len(),
                resp.steering_rad.len()
            )));
        }
        Ok((resp.speed_mps, resp.steering_rad))
    }
}

fn encode(image: &Image) -> Result<String, BackendError> {
    image.to_base64().map_err(|e| BackendError::Precondition(format!("image does not encode: {e}")))
}
