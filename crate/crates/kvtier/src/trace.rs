//! JSONL trace format.
//!
//! A trace is one JSON object per line: an optional header first, then
//! events. The emitter writes canonical field order with no extra
//! whitespace, so `emit(parse(emit(t))) == emit(t)` byte for byte; tooling
//! can diff traces and replay outputs without normalization.
//!
//! Parsing is strict. Unknown fields, malformed JSON, events that violate
//! their kind's field contract, and per-session time regressions are all
//! reported with the 1-based line number they occur on.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{BlockId, BlockType, TransitionType};
use crate::event::{AccessEvent, EventKind};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub kvtrace_version: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub generator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub header: Option<TraceHeader>,
    pub events: Vec<AccessEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn line_err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Line { line, message: message.into() }
}

/// Parse a whole trace. The header, when present, must be the first line;
/// a `kvtrace_version` key anywhere else is a corrupt stream.
pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut trace = Trace::default();
    let mut last_time: std::collections::BTreeMap<String, u64> = std::collections::BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            return Err(line_err(lineno, "blank line inside trace"));
        }
        let looks_like_header = line.contains("\"kvtrace_version\"");
        if looks_like_header {
            if lineno != 1 {
                return Err(line_err(lineno, "header line after events"));
            }
            let header: TraceHeader =
                serde_json::from_str(line).map_err(|e| line_err(lineno, e.to_string()))?;
            if header.kvtrace_version != TRACE_VERSION {
                return Err(line_err(
                    lineno,
                    format!("unsupported trace version {}", header.kvtrace_version),
                ));
            }
            trace.header = Some(header);
            continue;
        }
        let event: AccessEvent =
            serde_json::from_str(line).map_err(|e| line_err(lineno, e.to_string()))?;
        event.validate().map_err(|e| line_err(lineno, e))?;
        let t = event.time.nanos();
        if let Some(&prev) = last_time.get(&event.session_id) {
            if t < prev {
                return Err(line_err(
                    lineno,
                    format!(
                        "session {} time went backwards: {prev} -> {t}",
                        event.session_id
                    ),
                ));
            }
        }
        last_time.insert(event.session_id.clone(), t);
        trace.events.push(event);
    }
    Ok(trace)
}

/// Canonical serialization: header line (when present) then one event per
/// line, each terminated by `\n`.
#[must_use]
pub fn emit_trace(trace: &Trace) -> String {
    let mut out = String::new();
    if let Some(h) = &trace.header {
        out.push_str(&serde_json::to_string(h).expect("header serializes"));
        out.push('\n');
    }
    for e in &trace.events {
        out.push_str(&serde_json::to_string(e).expect("event serializes"));
        out.push('\n');
    }
    out
}

pub fn read_trace_file(path: &Path) -> Result<Trace, TraceError> {
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text)
}

pub fn write_trace_file(path: &Path, trace: &Trace) -> Result<(), TraceError> {
    Ok(std::fs::write(path, emit_trace(trace))?)
}

/// Ground-truth reuse outcome for one block access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReuseLabel {
    pub event_index: usize,
    pub block_id: BlockId,
    pub block_type: BlockType,
    pub transition_type: TransitionType,
    /// Whether this access repeats a block already seen in the trace.
    pub reused: bool,
}

/// Scan the event stream and mark each block access as a first touch or a
/// repeat. This is the observation stream a reuse predictor trains on.
#[must_use]
pub fn extract_reuse_labels(events: &[AccessEvent]) -> Vec<ReuseLabel> {
    let mut seen = std::collections::BTreeSet::new();
    let mut labels = Vec::new();
    for (i, e) in events.iter().enumerate() {
        if e.kind != EventKind::BlockAccess {
            continue;
        }
        let (block_id, block_type, transition_type) =
            e.block_fields().expect("validated block access");
        labels.push(ReuseLabel {
            event_index: i,
            block_id,
            block_type,
            transition_type,
            reused: !seen.insert(block_id),
        });
    }
    labels
}
