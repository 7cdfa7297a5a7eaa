//! Generation endpoints with a persistent response cache, retries with
//! exponential backoff and bounded, order-preserving concurrency.

mod cache;
mod endpoint;
mod pass;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;
use crate::error::{AttemptFailure, Error, Result};
use crate::promptgen::RenderedPrompt;

pub use cache::{CacheKey, GenerationCache};
pub use endpoint::{CallError, CorpusLookupEndpoint, Endpoint, FnEndpoint, HttpEndpoint};
pub use pass::{student_pass, teacher_pass, teacher_requests, CandidateStore, StudentResult, TeacherFailure};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay after the `attempt`-th failure: base × 2^(attempt-1).
    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.backoff_base_ms.saturating_mul(1u64 << (attempt - 1).min(20)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub name: String,
    #[serde(default)]
    pub url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_concurrency() -> usize {
    4
}

fn default_timeout() -> u64 {
    60_000
}

impl EndpointConfig {
    pub fn new(name: &str, url: &str) -> Self {
        Self {
            name: name.to_string(),
            url: url.to_string(),
            auth_env: None,
            max_concurrency: default_concurrency(),
            timeout_ms: default_timeout(),
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(Error::Validation(format!("{}: max_concurrency must be >= 1", self.name)));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::Validation(format!("{}: max_attempts must be >= 1", self.name)));
        }
        Ok(())
    }

    pub fn http_endpoint(&self) -> Result<HttpEndpoint> {
        self.validate()?;
        let token = self.auth_env.as_ref().and_then(|var| std::env::var(var).ok());
        HttpEndpoint::new(&self.name, &self.url, token, Duration::from_millis(self.timeout_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_new_tokens: usize,
    pub stop_sequences: Vec<String>,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_new_tokens: 256,
            stop_sequences: vec!["\n".to_string()],
        }
    }
}

impl DecodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Validation("temperature must be >= 0".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_vec(self).expect("decode params serialize"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub endpoint: String,
    pub prompt_digest: String,
    pub params_digest: String,
    pub output: String,
    pub latency_ms: u64,
    pub attempts: u32,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl GenerationRecord {
    pub fn key(&self) -> CacheKey {
        (self.endpoint.clone(), self.prompt_digest.clone(), self.params_digest.clone())
    }
}

/// An endpoint plus its configuration, cache and call counter.
pub struct LlmClient {
    endpoint: Arc<dyn Endpoint>,
    config: EndpointConfig,
    cache: Arc<GenerationCache>,
    calls: AtomicU64,
}

impl LlmClient {
    pub fn new(endpoint: Arc<dyn Endpoint>, config: EndpointConfig, cache: Arc<GenerationCache>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            endpoint,
            config,
            cache,
            calls: AtomicU64::new(0),
        })
    }

    pub fn name(&self) -> &str {
        self.endpoint.name()
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Endpoint invocations so far, retries included; cache hits excluded.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn generate(&self, prompt: &RenderedPrompt, params: &DecodeParams) -> Result<GenerationRecord> {
        params.validate()?;
        let key = (self.name().to_string(), prompt.digest.clone(), params.digest());
        if let Some(record) = self.cache.get(&key) {
            return Ok(record);
        }
        let started = Instant::now();
        let mut failures = Vec::new();
        for attempt in 1..=self.config.retry.max_attempts {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.endpoint.complete(&prompt.text, params) {
                Ok(output) => {
                    let record = GenerationRecord {
                        endpoint: key.0,
                        prompt_digest: key.1,
                        params_digest: key.2,
                        output,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts: attempt,
                        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                    };
                    self.cache.put(record.clone())?;
                    return Ok(record);
                }
                Err(CallError::Rejected { status, body }) => return Err(Error::Endpoint { status, body }),
                Err(CallError::Retryable(message)) => {
                    log::debug!("{}: attempt {attempt} failed: {message}", self.name());
                    failures.push(AttemptFailure { attempt, message });
                    if attempt < self.config.retry.max_attempts {
                        std::thread::sleep(self.config.retry.delay(attempt));
                    }
                }
            }
        }
        Err(Error::Transport { attempts: failures })
    }
}

/// Applies `f` to every item on up to `max_concurrency` threads and returns
/// the results in input order.
pub fn run_ordered<T, R, F>(items: &[T], max_concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_concurrency.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                slots.lock().expect("result slots lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots lock")
        .into_iter()
        .map(|r| r.expect("every item produced a result"))
        .collect()
}
