//! Instruction induction from labeled examples against black-box LLM
//! endpoints.
//!
//! The crate covers the whole offline loop: ingesting classification
//! corpora ([`corpus`]), rendering every prompt byte-exactly
//! ([`prompting`]), reaching OpenAI-compatible servers with caching and
//! bounded concurrency ([`gateway`]), scoring instructions with macro-F1
//! ([`evaluator`]), producing instructions with single-pass induction and
//! search baselines ([`inducers`]), GRPO reward/advantage/objective math
//! with a rollout exporter ([`grpo`]) and report aggregation ([`stats`]).

pub mod corpus;
pub mod evaluator;
pub mod gateway;
pub mod grpo;
pub mod inducers;
pub mod prompting;
pub mod seed;
pub mod stats;
