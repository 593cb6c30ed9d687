//! Access events.
//!
//! An event stream is the sole input to replay: request boundaries, block
//! accesses, and tool invocations, each stamped with a `SimTime`. Events are
//! processed in `(time, arrival order)` — there is no other scheduler.

use serde::{Deserialize, Serialize};

use crate::block::{BlockId, BlockType, TransitionType};
use crate::clock::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    RequestStart,
    BlockAccess,
    ToolCall,
    RequestEnd,
}

/// One event in a trace. Block fields are populated for `BlockAccess`,
/// `tool_name` for `ToolCall`; `validate` enforces both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub time: SimTime,
    pub session_id: String,
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_id: Option<BlockId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_type: Option<BlockType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition_type: Option<TransitionType>,
    /// Decode position (tokens into the sequence) at which the event fires.
    #[serde(default)]
    pub position: u64,
    #[serde(default)]
    pub size_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_seed: Option<u64>,
}

impl AccessEvent {
    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            EventKind::BlockAccess => {
                if self.block_id.is_none() {
                    return Err("block_access requires block_id".into());
                }
                if self.block_type.is_none() {
                    return Err("block_access requires block_type".into());
                }
                if self.transition_type.is_none() {
                    return Err("block_access requires transition_type".into());
                }
                if self.size_bytes == 0 {
                    return Err("block_access requires positive size_bytes".into());
                }
            }
            EventKind::ToolCall => {
                if self.tool_name.as_deref().is_none_or(str::is_empty) {
                    return Err("tool_call requires tool_name".into());
                }
            }
            EventKind::RequestStart | EventKind::RequestEnd => {}
        }
        Ok(())
    }

    /// Block identity triple, present exactly on validated `BlockAccess` events.
    #[must_use]
    pub fn block_fields(&self) -> Option<(BlockId, BlockType, TransitionType)> {
        Some((self.block_id?, self.block_type?, self.transition_type?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn access(id: u64) -> AccessEvent {
        AccessEvent {
            time: SimTime::from_nanos(10),
            session_id: "s1".into(),
            kind: EventKind::BlockAccess,
            block_id: Some(BlockId(id)),
            block_type: Some(BlockType::SystemPrompt),
            transition_type: Some(TransitionType::ReasoningStep),
            position: 0,
            size_bytes: 1024,
            tool_name: None,
            content_seed: Some(7),
        }
    }

    #[test]
    fn valid_block_access_passes() {
        assert!(access(1).validate().is_ok());
    }

    #[test]
    fn tool_call_without_name_is_rejected() {
        let e = AccessEvent {
            kind: EventKind::ToolCall,
            tool_name: None,
            ..access(1)
        };
        assert!(e.validate().unwrap_err().contains("tool_name"));
    }

    #[test]
    fn block_access_missing_fields_is_rejected() {
        let mut e = access(1);
        e.transition_type = None;
        assert!(e.validate().unwrap_err().contains("transition_type"));
    }

    #[test]
    fn request_boundaries_need_no_block_fields() {
        let e = AccessEvent {
            kind: EventKind::RequestStart,
            block_id: None,
            block_type: None,
            transition_type: None,
            size_bytes: 0,
            ..access(0)
        };
        assert!(e.validate().is_ok());
    }
}
