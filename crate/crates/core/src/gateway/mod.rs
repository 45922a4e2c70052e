//! Access to generator and follower models over an OpenAI-compatible
//! chat-completions protocol, with a content-addressed cache, retries with
//! exponential backoff, bounded batch concurrency and a usage ledger.

mod cache;
mod http;
mod ledger;
pub mod mock;
pub mod wire;

use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::DiskCache;
pub use http::{completions_url, HttpTransport};
pub use ledger::{LedgerEntry, LedgerKey, UsageCounters, UsageLedger};
pub use mock::ScriptedTransport;

use ledger::Event;
use wire::{ChatMessage, ChatRequest, ChatResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The instruction-producing policy.
    Generator,
    /// The frozen model that executes instructions.
    Follower,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Generator => "generator",
            Role::Follower => "follower",
        })
    }
}

/// A model behind an OpenAI-compatible server. `auth_env` names the
/// environment variable holding the bearer token; the secret itself is never stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LlmEndpoint {
    pub base_url: String,
    pub model: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
}

impl LlmEndpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, role: Role) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            role,
            auth_env: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Ingest,
    Induce,
    Evaluate,
    Rollout,
    #[default]
    Other,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Ingest => "ingest",
            Phase::Induce => "induce",
            Phase::Evaluate => "evaluate",
            Phase::Rollout => "rollout",
            Phase::Other => "other",
        }
    }
}

/// Ledger attribution for a request. Not part of the cache key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UsageTag {
    pub method: String,
    pub dataset: String,
    pub phase: Phase,
}

impl UsageTag {
    pub fn new(method: impl Into<String>, dataset: impl Into<String>, phase: Phase) -> Self {
        Self {
            method: method.into(),
            dataset: dataset.into(),
            phase,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub endpoint: LlmEndpoint,
    pub prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
    /// Ask the server for token logprobs (passed through, never used here).
    pub logprobs: bool,
    pub tag: UsageTag,
}

impl CompletionRequest {
    pub fn new(endpoint: LlmEndpoint, prompt: impl Into<String>) -> Self {
        Self {
            endpoint,
            prompt: prompt.into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
            seed: None,
            logprobs: false,
            tag: UsageTag::default(),
        }
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn top_p(mut self, p: f64) -> Self {
        self.top_p = p;
        self
    }

    pub fn max_tokens(mut self, n: u32) -> Self {
        self.max_tokens = n;
        self
    }

    pub fn seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn logprobs(mut self, on: bool) -> Self {
        self.logprobs = on;
        self
    }

    pub fn tag(mut self, tag: UsageTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::InvalidRequest(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be > 0".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 over every field that can change the response.
    pub fn cache_digest(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            base_url: &'a str,
            model: &'a str,
            prompt: &'a str,
            temperature: u64,
            top_p: u64,
            max_tokens: u32,
            seed: Option<u64>,
            logprobs: bool,
        }
        let key = Key {
            base_url: &self.endpoint.base_url,
            model: &self.endpoint.model,
            prompt: &self.prompt,
            temperature: self.temperature.to_bits(),
            top_p: self.top_p.to_bits(),
            max_tokens: self.max_tokens,
            seed: self.seed,
            logprobs: self.logprobs,
        };
        let bytes = serde_json::to_vec(&key).expect("key serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_wire(&self) -> ChatRequest {
        ChatRequest {
            model: self.endpoint.model.clone(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: self.prompt.clone(),
            }],
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            seed: self.seed,
            logprobs: self.logprobs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub finish_reason: String,
    #[serde(default)]
    pub cached: bool,
    /// Set when the server omitted usage and the byte heuristic filled it in.
    #[serde(default)]
    pub usage_approximate: bool,
    /// Sequence log-probability, when the server returned token logprobs.
    #[serde(default)]
    pub logprob: Option<f64>,
}

impl Completion {
    fn from_wire(req: &CompletionRequest, resp: ChatResponse) -> Result<Self, GatewayError> {
        let choice = resp.choices.into_iter().next().ok_or(GatewayError::EmptyResponse)?;
        let text = choice.message.content.unwrap_or_default();
        let usage = resp.usage.unwrap_or_default();
        let mut approximate = false;
        let prompt_tokens = usage.prompt_tokens.unwrap_or_else(|| {
            approximate = true;
            count_tokens_fallback(&req.prompt)
        });
        let completion_tokens = usage.completion_tokens.unwrap_or_else(|| {
            approximate = true;
            count_tokens_fallback(&text)
        });
        let logprob = choice
            .logprobs
            .and_then(|l| l.content)
            .map(|tokens| tokens.iter().map(|t| t.logprob).sum());
        Ok(Self {
            text,
            prompt_tokens,
            completion_tokens,
            finish_reason: choice.finish_reason.unwrap_or_else(|| "unknown".into()),
            cached: false,
            usage_approximate: approximate,
            logprob,
        })
    }
}

/// ⌈bytes / 4⌉, used only when a server omits usage.
pub fn count_tokens_fallback(text: &str) -> u64 {
    (text.len() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("authentication: {0}")]
    Auth(String),
}

impl TransportError {
    /// 5xx, timeouts and connection failures are retried. Other 4xx are
    /// terminal except 408 and 429.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code >= 500 || *code == 408 || *code == 429,
            TransportError::Timeout | TransportError::Connection(_) => true,
            TransportError::Decode(_) | TransportError::Auth(_) => false,
        }
    }
}

pub trait Transport: Send + Sync {
    fn send(&self, endpoint: &LlmEndpoint, body: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("{source} (after {attempts} attempts)")]
    Transport {
        attempts: u32,
        #[source]
        source: TransportError,
    },
    #[error("response has no choices")]
    EmptyResponse,
    #[error("batch aborted after an earlier failure")]
    Aborted,
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { source, .. } if source.is_retryable())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 1000,
            factor: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay_ms: 0,
            factor: 1.0,
            jitter: false,
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let nominal = self.base_delay_ms as f64 * self.factor.powi(retry as i32);
        let scaled = if self.jitter {
            nominal * (0.5 + 0.5 * rand::random::<f64>())
        } else {
            nominal
        };
        Duration::from_millis(scaled.round() as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchOptions {
    pub max_in_flight: usize,
    /// Stop issuing new requests after the first terminal error.
    pub fail_fast: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            max_in_flight: 128,
            fail_fast: false,
        }
    }
}

/// Shareable client over a transport. Cloning the `Arc` is how callers share it.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    cache: Option<DiskCache>,
    retry: RetryPolicy,
    batch: BatchOptions,
    ledger: UsageLedger,
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self {
            transport,
            cache: None,
            retry: RetryPolicy::default(),
            batch: BatchOptions::default(),
            ledger: UsageLedger::new(""),
        }
    }

    pub fn with_cache(mut self, cache: DiskCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_batch_options(mut self, batch: BatchOptions) -> Self {
        self.batch = batch;
        self
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.ledger = UsageLedger::new(run_id);
        self
    }

    pub fn ledger(&self) -> &UsageLedger {
        &self.ledger
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        self.retry
    }

    pub fn batch_options(&self) -> BatchOptions {
        self.batch
    }

    pub fn complete(&self, req: &CompletionRequest) -> Result<Completion, GatewayError> {
        req.validate()?;
        let role = req.endpoint.role;
        let digest = self.cache.as_ref().map(|_| req.cache_digest());
        if let (Some(cache), Some(digest)) = (&self.cache, &digest) {
            if let Some(hit) = cache.get(digest) {
                self.ledger.record(
                    &req.tag,
                    role,
                    Event::CacheHit {
                        prompt_tokens: hit.prompt_tokens,
                        completion_tokens: hit.completion_tokens,
                    },
                );
                return Ok(hit);
            }
        }

        let wire = req.to_wire();
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.ledger.record(&req.tag, role, Event::Attempt);
            match self.transport.send(&req.endpoint, &wire) {
                Ok(resp) => {
                    let completion = match Completion::from_wire(req, resp) {
                        Ok(c) => c,
                        Err(err) => {
                            self.ledger.record(&req.tag, role, Event::Failure);
                            return Err(err);
                        }
                    };
                    if let (Some(cache), Some(digest)) = (&self.cache, &digest) {
                        if let Err(err) = cache.put(digest, &completion) {
                            tracing::warn!(%err, "failed to write cache entry");
                        }
                    }
                    self.ledger.record(
                        &req.tag,
                        role,
                        Event::Request {
                            prompt_tokens: completion.prompt_tokens,
                            completion_tokens: completion.completion_tokens,
                        },
                    );
                    return Ok(completion);
                }
                Err(err) if err.is_retryable() && attempt <= self.retry.max_retries => {
                    let delay = self.retry.delay(attempt - 1);
                    tracing::debug!(%err, attempt, ?delay, "retrying completion");
                    std::thread::sleep(delay);
                }
                Err(err) => {
                    self.ledger.record(&req.tag, role, Event::Failure);
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        source: err,
                    });
                }
            }
        }
    }

    /// Complete with the gateway's configured batch options.
    pub fn complete_batch(&self, reqs: &[CompletionRequest]) -> Vec<Result<Completion, GatewayError>> {
        self.complete_batch_with(reqs, self.batch)
    }

    /// Results are index-aligned with `reqs`; at most `max_in_flight`
    /// requests are outstanding at any instant. With a cache configured,
    /// repeats of an earlier request in the batch are issued only after the
    /// first copy completes, so they are served from the cache.
    pub fn complete_batch_with(
        &self,
        reqs: &[CompletionRequest],
        opts: BatchOptions,
    ) -> Vec<Result<Completion, GatewayError>> {
        if self.cache.is_none() {
            let all: Vec<&CompletionRequest> = reqs.iter().collect();
            return self.run_batch(&all, opts);
        }
        let mut seen = HashSet::new();
        let (firsts, repeats): (Vec<usize>, Vec<usize>) =
            (0..reqs.len()).partition(|&i| seen.insert(reqs[i].cache_digest()));
        let mut slots: Vec<Option<Result<Completion, GatewayError>>> = reqs.iter().map(|_| None).collect();
        for wave in [firsts, repeats] {
            let batch: Vec<&CompletionRequest> = wave.iter().map(|&i| &reqs[i]).collect();
            for (i, res) in wave.into_iter().zip(self.run_batch(&batch, opts)) {
                slots[i] = Some(res);
            }
        }
        slots.into_iter().map(|s| s.expect("every slot is filled")).collect()
    }

    fn run_batch(&self, reqs: &[&CompletionRequest], opts: BatchOptions) -> Vec<Result<Completion, GatewayError>> {
        let workers = opts.max_in_flight.max(1).min(reqs.len());
        if workers <= 1 {
            let mut out = Vec::with_capacity(reqs.len());
            let mut aborted = false;
            for req in reqs {
                if aborted {
                    out.push(Err(GatewayError::Aborted));
                    continue;
                }
                let res = self.complete(req);
                aborted = opts.fail_fast && res.is_err();
                out.push(res);
            }
            return out;
        }

        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let slots: Vec<Mutex<Option<Result<Completion, GatewayError>>>> =
            reqs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = next.fetch_add(1, Ordering::SeqCst);
                    if idx >= reqs.len() {
                        break;
                    }
                    let res = if abort.load(Ordering::SeqCst) {
                        Err(GatewayError::Aborted)
                    } else {
                        self.complete(reqs[idx])
                    };
                    if opts.fail_fast && res.is_err() {
                        abort.store(true, Ordering::SeqCst);
                    }
                    *slots[idx].lock().unwrap_or_else(|e| e.into_inner()) = Some(res);
                });
            }
        });
        slots
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .unwrap_or_else(|e| e.into_inner())
                    .expect("every slot is filled")
            })
            .collect()
    }

    /// Gateway-reported prompt tokens for `text` (a one-token completion).
    pub fn measure_prompt(
        &self,
        endpoint: &LlmEndpoint,
        text: &str,
        tag: UsageTag,
    ) -> Result<(u64, bool), GatewayError> {
        let req = CompletionRequest::new(endpoint.clone(), text)
            .temperature(0.0)
            .max_tokens(1)
            .tag(tag);
        let completion = self.complete(&req)?;
        Ok((completion.prompt_tokens, completion.usage_approximate))
    }
}
