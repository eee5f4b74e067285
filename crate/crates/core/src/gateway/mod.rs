//! Single entry point for every language-model call.
//!
//! A [`Gateway`] wraps one backend (remote chat-completion endpoint or the
//! deterministic scripted provider) with a content-addressed response cache,
//! retry with exponential backoff, and a request-rate limiter. Nothing outside
//! this module touches the network.

mod cache;
mod http;
pub mod scripted;

use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use http::HttpBackend;
pub use scripted::ScriptedBackend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Traveler decision.
    Decide,
    /// Analyst producing a per-point critique.
    Gradient,
    /// Synthesizes critiques into update directions.
    Integrate,
    /// Applies one direction to a persona.
    Edit,
    /// Writes a baseline persona from a long data window.
    Summarize,
    /// Merges the selected candidate with the baseline.
    Merge,
}

impl Role {
    pub const ALL: [Role; 6] = [Role::Decide, Role::Gradient, Role::Integrate, Role::Edit, Role::Summarize, Role::Merge];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Decide => "decide",
            Role::Gradient => "gradient",
            Role::Integrate => "integrate",
            Role::Edit => "edit",
            Role::Summarize => "summarize",
            Role::Merge => "merge",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::System, text: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { speaker: Speaker::User, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleRequest {
    pub role: Role,
    pub messages: Vec<Message>,
    pub params: ModelParams,
}

impl RoleRequest {
    /// Hex SHA-256 over role, messages and params.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn user_text(&self) -> String {
        self.messages.iter().filter(|m| m.speaker == Speaker::User).map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited by provider (HTTP 429)")]
    RateLimited,
    #[error("provider server error (HTTP {status}): {body}")]
    Server { status: u16, body: String },
    #[error("request rejected (HTTP {status}); check endpoint, model and key: {body}")]
    Client { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<GatewayError> },
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("scripted provider cannot answer: {0}")]
    Scripted(String),
    #[error("response cache: {0}")]
    Cache(String),
    #[error("invalid {role} reply: {message}")]
    InvalidReply { role: Role, message: String },
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport(_) | GatewayError::RateLimited | GatewayError::Server { .. })
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &RoleRequest) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self { max_attempts: 5, initial_backoff_ms: 500, max_backoff_ms: 30_000 }
    }
}

impl RetryConfig {
    /// Delay before retry number `retry` (0-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(32)).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub backend: BackendKind,
    pub endpoint_url: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Requests per minute; unlimited when absent.
    pub rate_limit: Option<u32>,
    pub retry: RetryConfig,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub timeout_secs: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self::scripted(0)
    }
}

impl ProviderConfig {
    pub fn scripted(seed: u64) -> Self {
        Self {
            backend: BackendKind::Scripted,
            endpoint_url: None,
            api_key_env: None,
            model_name: "scripted".into(),
            temperature: 0.0,
            max_tokens: 512,
            rate_limit: None,
            retry: RetryConfig::default(),
            cache_dir: None,
            seed: Some(seed),
            timeout_secs: 60,
        }
    }

    pub fn http(endpoint_url: impl Into<String>, api_key_env: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            backend: BackendKind::Http,
            endpoint_url: Some(endpoint_url.into()),
            api_key_env: Some(api_key_env.into()),
            model_name: model_name.into(),
            seed: None,
            ..Self::scripted(0)
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.backend {
            BackendKind::Http => {
                if self.endpoint_url.as_deref().is_none_or(str::is_empty) {
                    return Err(GatewayError::Config("http backend requires endpoint_url".into()));
                }
                if self.api_key_env.as_deref().is_none_or(str::is_empty) {
                    return Err(GatewayError::Config("http backend requires api_key_env".into()));
                }
            }
            BackendKind::Scripted => {
                if self.seed.is_none() {
                    return Err(GatewayError::Config("scripted backend requires a seed".into()));
                }
            }
        }
        if self.retry.max_attempts == 0 {
            return Err(GatewayError::Config("retry.max_attempts must be at least 1".into()));
        }
        if self.rate_limit == Some(0) {
            return Err(GatewayError::Config("rate_limit must be positive".into()));
        }
        Ok(())
    }
}

/// Spaces backend calls at least `60 / rate` seconds apart.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    fn new(per_minute: u32) -> Self {
        Self { interval: Duration::from_secs_f64(60.0 / f64::from(per_minute)), next_slot: Mutex::new(None) }
    }

    fn acquire(&self) {
        let wait = {
            let mut slot = self.next_slot.lock().expect("limiter lock");
            let now = Instant::now();
            let start = slot.map_or(now, |s| s.max(now));
            *slot = Some(start + self.interval);
            start - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    backend_calls: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct StatsSnapshot {
    /// Calls to [`Gateway::complete`].
    pub requests: u64,
    pub cache_hits: u64,
    /// Attempts that reached the backend, retries included.
    pub backend_calls: u64,
}

impl std::ops::Sub for StatsSnapshot {
    type Output = StatsSnapshot;

    fn sub(self, rhs: Self) -> Self {
        StatsSnapshot {
            requests: self.requests - rhs.requests,
            cache_hits: self.cache_hits - rhs.cache_hits,
            backend_calls: self.backend_calls - rhs.backend_calls,
        }
    }
}

pub struct Gateway {
    config: ProviderConfig,
    backend: Box<dyn Backend>,
    cache: Option<ResponseCache>,
    limiter: Option<RateLimiter>,
    stats: GatewayStats,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway").field("config", &self.config).field("stats", &self.stats).finish()
    }
}

impl Gateway {
    pub fn from_config(config: ProviderConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Box<dyn Backend> = match config.backend {
            BackendKind::Http => Box::new(HttpBackend::new(&config)?),
            BackendKind::Scripted => Box::new(ScriptedBackend::new(config.seed.unwrap_or_default())),
        };
        Self::with_backend(config, backend)
    }

    /// Uses a caller-supplied backend with the config's cache, retry and rate settings.
    pub fn with_backend(config: ProviderConfig, backend: Box<dyn Backend>) -> Result<Self, GatewayError> {
        let cache = config.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        let limiter = config.rate_limit.map(RateLimiter::new);
        Ok(Self { config, backend, cache, limiter, stats: GatewayStats::default() })
    }

    pub fn scripted(seed: u64) -> Self {
        Self::from_config(ProviderConfig::scripted(seed)).expect("scripted config is valid")
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            model_name: self.config.model_name.clone(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    pub fn request(&self, role: Role, messages: Vec<Message>) -> RoleRequest {
        RoleRequest { role, messages, params: self.params() }
    }

    pub fn stats(&self) -> StatsSnapshot {
        StatsSnapshot {
            requests: self.stats.requests.load(Ordering::SeqCst),
            cache_hits: self.stats.cache_hits.load(Ordering::SeqCst),
            backend_calls: self.stats.backend_calls.load(Ordering::SeqCst),
        }
    }

    pub fn complete(&self, request: &RoleRequest) -> Result<String, GatewayError> {
        if request.messages.is_empty() {
            return Err(GatewayError::Config("request has no messages".into()));
        }
        self.stats.requests.fetch_add(1, Ordering::SeqCst);
        let key = request.cache_key();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.lookup(&key)? {
                self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(hit);
            }
        }

        let max = self.config.retry.max_attempts;
        let mut attempt = 0;
        loop {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.stats.backend_calls.fetch_add(1, Ordering::SeqCst);
            attempt += 1;
            match self.backend.complete(request) {
                Ok(text) => {
                    if let Some(cache) = &self.cache {
                        cache.store(&key, request, &text)?;
                    }
                    return Ok(text);
                }
                Err(e) if e.is_retryable() && attempt < max => {
                    let delay = self.config.retry.backoff(attempt - 1);
                    log::warn!("{} request failed ({e}); retry {attempt}/{} in {delay:?}", request.role, max - 1);
                    std::thread::sleep(delay);
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::Exhausted { attempts: attempt, last: Box::new(e) });
                }
                Err(e) => return Err(e),
            }
        }
    }
}
