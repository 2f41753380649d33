//! Safety-constrained text augmentation built around a weak-expert /
//! strong-generalist split.
//!
//! A lightweight entity extractor (the *weak expert*) locates domain-critical
//! surfaces in each note and turns them into a constraint set. A rewrite
//! backend (the *strong generalist*) produces a paraphrase that must keep
//! every constraint verbatim. Candidates are scored with exact
//! preservation/hallucination metrics and pass through an acceptance gate
//! before they are emitted, together with a complete audit trail and
//! optional DPO-style preference pairs.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`corpus`]: JSONL datasets of notes and augmented records
//! - [`weak_expert`]: gazetteer automaton and remote NER client
//! - [`metrics`]: normalization, preservation rate, hallucination rate
//! - [`prompting`]: constraint-carrying prompt templates and chunk plans
//! - [`generalist`]: rewrite backends (HTTP chat completion, seeded mocks)
//! - [`gating`]: threshold acceptance rule and required-entity check
//! - [`pipeline`]: per-note orchestration, worker pool, audit log
//! - [`prefpairs`]: preference-pair construction and export
//! - [`synth`]: synthetic corpora with matched gazetteers for testing

pub mod corpus;
pub mod gating;
pub mod generalist;
pub mod metrics;
pub mod pipeline;
pub mod prefpairs;
pub mod prompting;
mod retry;
pub mod synth;
#[cfg(test)]
pub(crate) mod testserver;
pub mod weak_expert;

pub use corpus::{AugmentedRecord, Dataset, Label, Note};
pub use gating::{FallbackPolicy, GateConfig, GateDecision, RejectReason};
pub use generalist::{Backend, BackendConfig, RewriteRequest, RewriteResult};
pub use metrics::{QualityReport, QualityScore};
pub use pipeline::{AuditEvent, RunConfig, RunOutput, RunReport};
pub use prefpairs::PreferencePair;
pub use prompting::{ChunkPlan, PromptTemplate, RenderedPrompt};
pub use retry::RetryPolicy;
pub use synth::SynthSpec;
pub use weak_expert::{EntitySet, EntitySpan, Extractor, Gazetteer, GazetteerEntry};
