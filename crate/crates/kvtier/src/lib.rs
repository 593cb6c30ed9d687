//! Trace-driven simulator and analytical toolkit for multi-tier KV-cache
//! management.
//!
//! The crate models a six-tier memory/storage hierarchy for transformer KV
//! state and the policies that decide what lives where: architecture-aware
//! sizing, Bayesian reuse prediction, head-granular importance-based
//! eviction, position-windowed prefetching, content deduplication, and a
//! first-order tool-sequence predictor for agentic workloads. A deterministic
//! replay engine drives all of it from portable JSONL traces, and an
//! analytical projection layer turns replay statistics into capacity,
//! throughput, latency, and cost estimates.
//!
//! ```text
//!   traces (JSONL) ──► replay engine ──► metrics (JSON / Prometheus text)
//!        ▲                  │
//!   generators         tier hierarchy ◄── sizing
//!                           │
//!          predictor / eviction / prefetch / dedup / agentic
//! ```
//!
//! Everything is simulation: blocks carry sizes and hashes, never tensor
//! payloads, and all randomness flows from explicit seeds.

pub mod agentic;
pub mod block;
pub mod clock;
pub mod config;
pub mod dedup;
pub mod event;
pub mod eviction;
pub mod predictor;
pub mod prefetch;
pub mod projection;
pub mod prom;
pub mod replay;
pub mod ring;
pub mod sizing;
pub mod tier;
pub mod trace;
pub mod workload;

pub use block::{BlockId, BlockMeta, BlockType, ContentHash, LayerSet, TokenSpan, TransitionType};
pub use clock::SimTime;
pub use event::{AccessEvent, EventKind};
pub use sizing::{ArchitectureKind, ModelConfig, SizingBudget};
pub use tier::{Hierarchy, TierError, TierSpec, ValueScoreParams};
