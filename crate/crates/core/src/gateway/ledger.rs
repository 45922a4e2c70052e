//! Usage accounting keyed by run, method, dataset, phase and endpoint role.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Role, UsageTag};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounters {
    /// Completions fetched over the network.
    pub request_count: u64,
    pub cache_hits: u64,
    /// Tokens over every completion delivered, cached or not.
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// Wire attempts including retries.
    pub attempts: u64,
    pub failed_requests: u64,
}

impl UsageCounters {
    /// Completions delivered to callers.
    pub fn calls(&self) -> u64 {
        self.request_count + self.cache_hits
    }

    fn add(&mut self, other: &UsageCounters) {
        self.request_count += other.request_count;
        self.cache_hits += other.cache_hits;
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.attempts += other.attempts;
        self.failed_requests += other.failed_requests;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LedgerKey {
    pub run_id: String,
    pub method: String,
    pub dataset: String,
    pub phase: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    #[serde(flatten)]
    pub key: LedgerKey,
    #[serde(flatten)]
    pub counters: UsageCounters,
}

#[derive(Debug, Default)]
pub struct UsageLedger {
    run_id: String,
    entries: Mutex<BTreeMap<LedgerKey, UsageCounters>>,
}

pub(crate) enum Event {
    Attempt,
    Request { prompt_tokens: u64, completion_tokens: u64 },
    CacheHit { prompt_tokens: u64, completion_tokens: u64 },
    Failure,
}

impl UsageLedger {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            entries: Mutex::default(),
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub(crate) fn record(&self, tag: &UsageTag, role: Role, event: Event) {
        let key = LedgerKey {
            run_id: self.run_id.clone(),
            method: tag.method.clone(),
            dataset: tag.dataset.clone(),
            phase: tag.phase.as_str().to_string(),
            role,
        };
        let mut entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let counters = entries.entry(key).or_default();
        match event {
            Event::Attempt => counters.attempts += 1,
            Event::Request {
                prompt_tokens,
                completion_tokens,
            } => {
                counters.request_count += 1;
                counters.prompt_tokens += prompt_tokens;
                counters.completion_tokens += completion_tokens;
            }
            Event::CacheHit {
                prompt_tokens,
                completion_tokens,
            } => {
                counters.cache_hits += 1;
                counters.prompt_tokens += prompt_tokens;
                counters.completion_tokens += completion_tokens;
            }
            Event::Failure => counters.failed_requests += 1,
        }
    }

    pub fn snapshot(&self) -> Vec<LedgerEntry> {
        let entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        entries
            .iter()
            .map(|(key, counters)| LedgerEntry {
                key: key.clone(),
                counters: *counters,
            })
            .collect()
    }

    /// Sum of counters over entries accepted by `filter`.
    pub fn sum_where(&self, filter: impl Fn(&LedgerKey) -> bool) -> UsageCounters {
        let entries = self.entries.lock().unwrap_or_else(|e| e.into_inner());
        let mut total = UsageCounters::default();
        for (key, counters) in entries.iter() {
            if filter(key) {
                total.add(counters);
            }
        }
        total
    }

    pub fn totals(&self) -> UsageCounters {
        self.sum_where(|_| true)
    }
}
