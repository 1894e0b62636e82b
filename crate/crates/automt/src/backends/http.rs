//! Blocking HTTP transport.

use std::time::Duration;

use super::wire::ErrorBody;
use super::{Transport, TransportError};

/// Largest response body accepted (videos of large frames are big).
const MAX_BODY_BYTES: u64 = 512 * 1024 * 1024;

pub struct HttpTransport {
    base: String,
    agent: ureq::Agent,
    token: Option<String>,
}

impl HttpTransport {
    pub fn new(base: &str, timeout_ms: u64, token: Option<String>) -> HttpTransport {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpTransport { base: base.trim_end_matches('/').to_string(), agent, token }
    }
}

impl Transport for HttpTransport {
    fn post(&self, path: &str, body: &[u8], request_id: &str) -> Result<Vec<u8>, TransportError> {
        let mut req = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("Content-Type", "application/json")
            .header("X-Request-Id", request_id);
        if let Some(token) = &self.token {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let bytes = resp.body_mut().with_config().limit(MAX_BODY_BYTES).read_to_vec().map_err(transport_error)?;
        if (200..300).contains(&status) {
            return Ok(bytes);
        }
        let body = serde_json::from_slice::<ErrorBody>(&bytes).unwrap_or_else(|_| ErrorBody {
            code: format!("http_{status}"),
            message: String::from_utf8_lossy(&bytes).chars().take(500).collect(),
        });
        Err(TransportError::Status { status, body })
    }
}

fn transport_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Io(other.to_string()),
    }
}
