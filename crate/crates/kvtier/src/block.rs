//! Cache block identity and taxonomy.
//!
//! Blocks are the unit of placement, eviction, transfer, and deduplication.
//! A block carries *sizes and hashes only*; actual KV tensor values never
//! exist in the simulator. Two identity notions coexist deliberately:
//!
//! * `BlockId` names a cached region for placement and reuse tracking;
//! * `ContentHash` names the payload, so deduplication can alias many
//!   block ids to one stored copy.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::SimTime;
use crate::sizing::ArchitectureKind;

// ── Identity ────────────────────────────────────────────────────────────────

/// Unique 64-bit block identifier. Generators allocate these globally, so a
/// prompt shared across sessions keeps one id and its reuse is observable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockId(pub u64);

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}

/// SHA-256 digest of a block payload. Serialized as lowercase hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    #[must_use]
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(ContentHash(out))
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        ContentHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

// ── Taxonomy ────────────────────────────────────────────────────────────────

/// Semantic class of a cached block. Reuse behavior differs sharply between
/// classes, which is what the reuse predictor conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockType {
    /// Long-lived instructions shared across many requests.
    SystemPrompt,
    /// Context produced by or for a tool invocation.
    ToolContext,
    /// Conversation history contributed by the user.
    UserContext,
    /// Model-generated scratch output, typically single-use.
    IntermediateReasoning,
}

impl BlockType {
    pub const ALL: [BlockType; 4] = [
        BlockType::SystemPrompt,
        BlockType::ToolContext,
        BlockType::UserContext,
        BlockType::IntermediateReasoning,
    ];

    /// Dense index, stable across releases: predictor state files depend on it.
    #[must_use]
    pub const fn index(self) -> usize {
        match self {
            BlockType::SystemPrompt => 0,
            BlockType::ToolContext => 1,
            BlockType::UserContext => 2,
            BlockType::IntermediateReasoning => 3,
        }
    }
}

/// Workflow transition under which an access happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionType {
    /// Consecutive invocations of the same tool.
    SameToolRepeat,
    /// Invocation of a different tool than the previous one.
    ToolSwitch,
    /// Ordinary decode step outside any tool activity.
    ReasoningStep,
    /// Session boundary where context is carried into a new agent/session.
    AgentHandoff,
}

impl TransitionType {
    pub const ALL: [TransitionType; 4] = [
        TransitionType::SameToolRepeat,
        TransitionType::ToolSwitch,
        TransitionType::ReasoningStep,
        TransitionType::AgentHandoff,
    ];

    #[must_use]
    pub const fn index(self) -> usize {
        match self {
            TransitionType::SameToolRepeat => 0,
            TransitionType::ToolSwitch => 1,
            TransitionType::ReasoningStep => 2,
            TransitionType::AgentHandoff => 3,
        }
    }
}

// ── Extent and layer coverage ───────────────────────────────────────────────

/// Half-open token range `[start, end)` a block covers in its sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: u64,
    pub end: u64,
}

impl TokenSpan {
    /// Panics if the span is empty; zero-token blocks are never legal.
    #[must_use]
    pub fn new(start: u64, end: u64) -> Self {
        assert!(end > start, "token span must be non-empty: [{start}, {end})");
        TokenSpan { start, end }
    }

    #[must_use]
    pub const fn tokens(&self) -> u64 {
        self.end - self.start
    }

    #[must_use]
    pub fn midpoint(&self) -> u64 {
        self.start + self.tokens() / 2
    }

    #[must_use]
    pub const fn intersects(&self, start: u64, end: u64) -> bool {
        self.start < end && start < self.end
    }
}

/// Which transformer layers a block holds KV state for. Whole-stack blocks
/// are the common case; per-layer blocks appear under head-granular eviction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSet {
    #[default]
    All,
    Subset(BTreeSet<u16>),
}

impl LayerSet {
    #[must_use]
    pub fn contains(&self, layer: u16) -> bool {
        match self {
            LayerSet::All => true,
            LayerSet::Subset(s) => s.contains(&layer),
        }
    }

    #[must_use]
    pub fn count(&self, num_layers: u16) -> usize {
        match self {
            LayerSet::All => num_layers as usize,
            LayerSet::Subset(s) => s.iter().filter(|&&l| l < num_layers).count(),
        }
    }

    /// Iterate members clipped to the model's layer count.
    pub fn layers(&self, num_layers: u16) -> Box<dyn Iterator<Item = u16> + '_> {
        match self {
            LayerSet::All => Box::new(0..num_layers),
            LayerSet::Subset(s) => Box::new(s.iter().copied().filter(move |&l| l < num_layers)),
        }
    }
}

// ── Block metadata ──────────────────────────────────────────────────────────

/// Everything the simulator tracks about one cached block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockMeta {
    pub block_id: BlockId,
    pub session_id: String,
    pub block_type: BlockType,
    pub token_span: TokenSpan,
    /// Resident KV bytes for this block, must be positive.
    pub size_bytes: u64,
    pub content_hash: ContentHash,
    pub ref_count: u32,
    pub last_access: SimTime,
    /// Index of the tier currently holding the block, `None` while absent.
    pub resident_tier: Option<u8>,
    #[serde(default)]
    pub layer_set: LayerSet,
}

impl BlockMeta {
    pub fn validate(&self) -> Result<(), String> {
        if self.size_bytes == 0 {
            return Err(format!("{}: size_bytes must be positive", self.block_id));
        }
        if self.token_span.end <= self.token_span.start {
            return Err(format!("{}: empty token span", self.block_id));
        }
        Ok(())
    }
}

/// Tokens per cache block for each attention architecture. Latent-attention
/// blocks are byte-cheap per token, so they block at coarser granularity;
/// full multi-head state forces fine-grained blocks.
#[must_use]
pub const fn block_tokens_for_arch(arch: ArchitectureKind) -> u64 {
    match arch {
        ArchitectureKind::Mla => 512,
        ArchitectureKind::Gqa | ArchitectureKind::Mqa => 128,
        ArchitectureKind::Mha => 64,
    }
}
