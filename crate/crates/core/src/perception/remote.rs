//! HTTP adapter for remote caption/classification services.
//!
//! Wire format:
//! - `POST {base_url}/classify` with `{"prompt": .., "image_b64": ..?}`,
//!   answered by `{"text": .., "processing_ms": ..?}`.
//! - `POST {base_url}/caption` with `{"image_b64": ..}`, answered by `{"text": ..}`.
//!
//! The API key is read from the environment variable named in the config and
//! sent as a bearer token. Requests that time out or fail to connect are
//! retried `retries` times.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Caption, CaptionBackend, PerceptionError, PromptContext};
use crate::clock::Clock;

/// Response header consulted when the body carries no `processing_ms`.
pub const PROCESSING_HEADER: &str = "processing-ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEndpointConfig")]
pub struct RemoteEndpointConfig {
    pub base_url: String,
    pub api_key_env_var: String,
    timeout_s: f64,
    pub retries: u32,
}

#[derive(Deserialize)]
struct RawEndpointConfig {
    base_url: String,
    api_key_env_var: String,
    timeout_s: f64,
    #[serde(default)]
    retries: u32,
}

impl TryFrom<RawEndpointConfig> for RemoteEndpointConfig {
    type Error = PerceptionError;

    fn try_from(raw: RawEndpointConfig) -> Result<Self, Self::Error> {
        Self::new(raw.base_url, raw.api_key_env_var, raw.timeout_s, raw.retries)
    }
}

impl RemoteEndpointConfig {
    pub fn new(
        base_url: impl Into<String>,
        api_key_env_var: impl Into<String>,
        timeout_s: f64,
        retries: u32,
    ) -> Result<Self, PerceptionError> {
        if !(timeout_s > 0.0 && timeout_s.is_finite()) {
            return Err(PerceptionError::BadRemoteConfig(format!(
                "timeout_s must be positive, got {timeout_s}"
            )));
        }
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_owned(),
            api_key_env_var: api_key_env_var.into(),
            timeout_s,
            retries,
        })
    }

    pub fn timeout_s(&self) -> f64 {
        self.timeout_s
    }

    fn agent(&self) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(self.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into()
    }
}

/// Model text plus the two latency terms of the remote call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteReply {
    pub raw: String,
    /// Elapsed request time minus server-reported processing, floored at 0.
    pub t_network_s: f64,
    pub t_processing_s: f64,
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_b64: Option<&'a str>,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
    #[serde(default)]
    processing_ms: Option<f64>,
}

#[derive(Serialize)]
struct CaptionRequest<'a> {
    image_b64: &'a str,
}

enum Attempt {
    Retry(PerceptionError),
    Fail(PerceptionError),
}

fn post<B: Serialize>(
    cfg: &RemoteEndpointConfig,
    path: &str,
    body: &B,
    clock: &dyn Clock,
) -> Result<(TextReply, Option<f64>, f64), PerceptionError> {
    let agent = cfg.agent();
    let url = format!("{}/{path}", cfg.base_url);
    let key = std::env::var(&cfg.api_key_env_var).ok();
    let attempts = cfg.retries + 1;
    let mut last = None;

    for attempt in 1..=attempts {
        let started = clock.now_s();
        let mut request = agent.post(&url);
        if let Some(key) = &key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let outcome = match request.send_json(body) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                if !(200..300).contains(&status) {
                    return Err(PerceptionError::RemoteProtocolError(format!("HTTP status {status}")));
                }
                let header_ms = response
                    .headers()
                    .get(PROCESSING_HEADER)
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<f64>().ok());
                match response.body_mut().read_json::<TextReply>() {
                    Ok(reply) => return Ok((reply, header_ms, clock.now_s() - started)),
                    Err(e) => classify_error(e, attempt),
                }
            }
            Err(e) => classify_error(e, attempt),
        };
        match outcome {
            Attempt::Retry(e) => last = Some(e),
            Attempt::Fail(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn classify_error(error: ureq::Error, attempts: u32) -> Attempt {
    use std::io::ErrorKind;
    match error {
        ureq::Error::Timeout(_) => Attempt::Retry(PerceptionError::RemoteTimeout { attempts }),
        ureq::Error::Io(e) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
            Attempt::Retry(PerceptionError::RemoteTimeout { attempts })
        }
        ureq::Error::Io(e) => Attempt::Retry(PerceptionError::RemoteUnavailable {
            attempts,
            reason: e.to_string(),
        }),
        ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            Attempt::Retry(PerceptionError::RemoteUnavailable {
                attempts,
                reason: error.to_string(),
            })
        }
        other => Attempt::Fail(PerceptionError::RemoteProtocolError(other.to_string())),
    }
}

pub fn remote_classify(
    ctx: &PromptContext,
    image_b64: Option<&str>,
    cfg: &RemoteEndpointConfig,
    clock: &dyn Clock,
) -> Result<RemoteReply, PerceptionError> {
    let body = ClassifyRequest {
        prompt: &ctx.rendered,
        image_b64,
    };
    let (reply, header_ms, elapsed) = post(cfg, "classify", &body, clock)?;
    let processing_ms = reply.processing_ms.or(header_ms).unwrap_or(0.0);
    if !(processing_ms >= 0.0 && processing_ms.is_finite()) {
        return Err(PerceptionError::RemoteProtocolError(format!(
            "invalid processing_ms {processing_ms}"
        )));
    }
    let t_processing_s = processing_ms / 1000.0;
    Ok(RemoteReply {
        raw: reply.text,
        t_network_s: (elapsed - t_processing_s).max(0.0),
        t_processing_s,
    })
}

/// Returns the caption and the elapsed request time.
pub fn remote_caption(
    image_b64: &str,
    source_frame: u64,
    cfg: &RemoteEndpointConfig,
    clock: &dyn Clock,
) -> Result<(Caption, f64), PerceptionError> {
    let (reply, _, elapsed) = post(cfg, "caption", &CaptionRequest { image_b64 }, clock)?;
    if reply.text.trim().is_empty() {
        return Err(PerceptionError::RemoteProtocolError("empty caption".into()));
    }
    Ok((
        Caption {
            text: reply.text,
            source_frame,
            backend: CaptionBackend::Remote,
        },
        elapsed,
    ))
}
