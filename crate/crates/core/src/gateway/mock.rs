//! In-process scripted transport for tests and offline dry runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::wire::{ChatRequest, ChatResponse};
use super::{count_tokens_fallback, LlmEndpoint, Transport, TransportError};

type Handler = dyn Fn(&LlmEndpoint, &ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync;
type Latency = dyn Fn(&ChatRequest) -> Duration + Send + Sync;

/// A transport whose replies come from a closure. Records call counts and
/// the high-water mark of concurrent calls.
pub struct ScriptedTransport {
    handler: Box<Handler>,
    latency: Option<Box<Latency>>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
}

impl ScriptedTransport {
    pub fn new<F>(handler: F) -> Self
    where
        F: Fn(&LlmEndpoint, &ChatRequest) -> Result<ChatResponse, TransportError> + Send + Sync + 'static,
    {
        Self {
            handler: Box::new(handler),
            latency: None,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
        }
    }

    /// Reply with text; usage is filled with the byte heuristic.
    pub fn replying<F>(reply: F) -> Self
    where
        F: Fn(&LlmEndpoint, &str) -> String + Send + Sync + 'static,
    {
        Self::new(move |endpoint, req| {
            let text = reply(endpoint, req.prompt());
            let prompt_tokens = count_tokens_fallback(req.prompt());
            let completion_tokens = count_tokens_fallback(&text);
            Ok(ChatResponse::text(text, prompt_tokens, completion_tokens))
        })
    }

    pub fn with_latency<L>(mut self, latency: L) -> Self
    where
        L: Fn(&ChatRequest) -> Duration + Send + Sync + 'static,
    {
        self.latency = Some(Box::new(latency));
        self
    }

    pub fn into_arc(self) -> Arc<Self> {
        Arc::new(self)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn high_water(&self) -> usize {
        self.high_water.load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.high_water.store(0, Ordering::SeqCst);
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, endpoint: &LlmEndpoint, body: &ChatRequest) -> Result<ChatResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.high_water.fetch_max(now, Ordering::SeqCst);
        if let Some(latency) = &self.latency {
            std::thread::sleep(latency(body));
        }
        let out = (self.handler)(endpoint, body);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}
