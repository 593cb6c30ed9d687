//! Synthetic workload families.
//!
//! Three generators produce traces with the access structure of real
//! serving mixes, scaled so block-level behaviour (reuse intervals, churn
//! ratio, content duplication) is in a realistic regime for a 36 MB block:
//!
//! * `lmsys_like`: multi-turn chat. Long system prompts drawn from a small
//!   shared pool, per-turn user context that is re-read on every later
//!   turn, and a stream of reasoning output that is written once and never
//!   touched again.
//! * `agentic_tools`: tool-driven agents. A Markov chain with a strong
//!   self-loop walks a tool vocabulary; every call re-reads the session's
//!   accumulated tool context and emits fresh reasoning blocks. A fraction
//!   of sessions continues a predecessor's context under a new session id.
//! * `sharegpt_style`: short Q&A. One to three turns, small prompts, so
//!   little standing context that recency policies have nothing to exploit.
//!
//! All randomness flows through one seeded ChaCha8 stream per trace; a
//! given spec always generates byte-identical output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::block::{BlockId, BlockType, TransitionType};
use crate::clock::SimTime;
use crate::event::{AccessEvent, EventKind};
use crate::ring::stable_hash;
use crate::trace::{Trace, TraceHeader, TRACE_VERSION};

/// Content seeds below this value are shared pool content; everything
/// above is unique to one block.
const UNIQUE_SEED_BASE: u64 = 1 << 40;

const MS: u64 = 1_000_000; // nanoseconds

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    LmsysLike,
    AgenticTools,
    SharegptStyle,
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FamilyKind::LmsysLike => "lmsys_like",
            FamilyKind::AgenticTools => "agentic_tools",
            FamilyKind::SharegptStyle => "sharegpt_style",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lmsys_like" => Ok(FamilyKind::LmsysLike),
            "agentic_tools" => Ok(FamilyKind::AgenticTools),
            "sharegpt_style" => Ok(FamilyKind::SharegptStyle),
            other => Err(format!(
                "unknown family {other:?} (expected lmsys_like, agentic_tools, or sharegpt_style)"
            )),
        }
    }
}

/// Geometry of the model whose cache the trace exercises. The default is a
/// latent-attention stack where one 512-token block owns about 36 MB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub bytes_per_token: u64,
    pub block_tokens: u64,
    pub num_layers: u16,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape { bytes_per_token: 70_272, block_tokens: 512, num_layers: 61 }
    }
}

impl ModelShape {
    #[must_use]
    pub fn block_bytes(&self) -> u64 {
        self.bytes_per_token * self.block_tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatParams {
    /// Distinct pooled system prompts.
    pub prompt_pools: u32,
    /// Probability a session uses a pooled prompt instead of a unique one.
    pub pooled_share: f64,
    pub system_blocks: u32,
    pub user_blocks_per_turn: u32,
    /// Probability a user block repeats a stock question instead of
    /// carrying unique content. Real chat corpora are full of duplicate
    /// prompts; this is what content dedup harvests beyond system prompts.
    pub pooled_user_share: f64,
    /// Distinct stock questions in the shared pool.
    pub user_pool: u32,
    pub reasoning_blocks_per_turn: u32,
    pub turns_min: u32,
    pub turns_max: u32,
    pub arrival_delta_ms: u64,
    pub turn_gap_min_ms: u64,
    pub turn_gap_max_ms: u64,
}

impl ChatParams {
    /// Long multi-turn conversations with heavy standing context.
    #[must_use]
    pub fn lmsys_like() -> Self {
        ChatParams {
            prompt_pools: 8,
            pooled_share: 0.7,
            system_blocks: 6,
            user_blocks_per_turn: 1,
            pooled_user_share: 0.7,
            user_pool: 200,
            reasoning_blocks_per_turn: 8,
            turns_min: 6,
            turns_max: 10,
            arrival_delta_ms: 1_600,
            turn_gap_min_ms: 20_000,
            turn_gap_max_ms: 100_000,
        }
    }

    /// Short exchanges with small prompts and little carried state.
    #[must_use]
    pub fn sharegpt_style() -> Self {
        ChatParams {
            prompt_pools: 12,
            pooled_share: 0.3,
            system_blocks: 2,
            user_blocks_per_turn: 1,
            pooled_user_share: 0.3,
            user_pool: 500,
            reasoning_blocks_per_turn: 2,
            turns_min: 1,
            turns_max: 3,
            arrival_delta_ms: 500,
            turn_gap_min_ms: 30_000,
            turn_gap_max_ms: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgenticToolParams {
    pub tools: Vec<String>,
    pub calls_min: u32,
    pub calls_max: u32,
    /// Probability the next call repeats the current tool.
    pub self_loop: f64,
    pub context_blocks_per_tool: u32,
    pub reasoning_blocks_per_call: u32,
    /// Fraction of sessions that inherit the previous session's tool
    /// context under a new session id.
    pub handoff_fraction: f64,
    pub arrival_delta_ms: u64,
    pub call_gap_min_ms: u64,
    pub call_gap_max_ms: u64,
}

impl Default for AgenticToolParams {
    fn default() -> Self {
        AgenticToolParams {
            tools: ["web_search", "web_fetch", "code_edit", "run_tests", "shell"]
                .map(String::from)
                .to_vec(),
            calls_min: 8,
            calls_max: 20,
            self_loop: 0.5,
            context_blocks_per_tool: 1,
            reasoning_blocks_per_call: 10,
            handoff_fraction: 0.2,
            arrival_delta_ms: 1_200,
            call_gap_min_ms: 15_000,
            call_gap_max_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub family: FamilyKind,
    pub sessions: u32,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelShape,
    /// Overrides the family's pooled content share when set; the knob the
    /// dedup sensitivity sweep turns.
    #[serde(default)]
    pub pooled_share_override: Option<f64>,
}

impl WorkloadSpec {
    #[must_use]
    pub fn new(family: FamilyKind, sessions: u32, seed: u64) -> Self {
        WorkloadSpec {
            family,
            sessions,
            seed,
            model: ModelShape::default(),
            pooled_share_override: None,
        }
    }
}

#[must_use]
pub fn generate(spec: &WorkloadSpec) -> Trace {
    let mut g = Generator::new(spec);
    match spec.family {
        FamilyKind::LmsysLike => {
            let mut p = ChatParams::lmsys_like();
            if let Some(s) = spec.pooled_share_override {
                p.pooled_share = s;
                p.pooled_user_share = s;
            }
            g.chat_family(&p);
        }
        FamilyKind::SharegptStyle => {
            let mut p = ChatParams::sharegpt_style();
            if let Some(s) = spec.pooled_share_override {
                p.pooled_share = s;
                p.pooled_user_share = s;
            }
            g.chat_family(&p);
        }
        FamilyKind::AgenticTools => {
            let p = AgenticToolParams::default();
            g.agentic_family(&p);
        }
    }
    g.finish(spec)
}

// ── Generator internals ─────────────────────────────────────────────────────

/// One live block the generator may access again later in the session.
#[derive(Debug, Clone)]
struct LiveBlock {
    id: BlockId,
    block_type: BlockType,
    position: u64,
    content_seed: u64,
    /// Tool the block belongs to, for agentic context re-reads.
    tool: Option<String>,
    /// Set until the first access inside the current session; a true value
    /// labels that access as a cross-session handoff.
    carried: bool,
}

struct Generator {
    rng: ChaCha8Rng,
    events: Vec<AccessEvent>,
    next_block_id: u64,
    next_unique_seed: u64,
    block_bytes: u64,
    block_tokens: u64,
    session_count: u32,
}

impl Generator {
    fn new(spec: &WorkloadSpec) -> Self {
        Generator {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            events: Vec::new(),
            next_block_id: 0,
            next_unique_seed: UNIQUE_SEED_BASE,
            block_bytes: spec.model.block_bytes(),
            block_tokens: spec.model.block_tokens,
            session_count: spec.sessions,
        }
    }

    fn fresh_id(&mut self) -> BlockId {
        let id = BlockId(self.next_block_id);
        self.next_block_id += 1;
        id
    }

    fn unique_seed(&mut self) -> u64 {
        let s = self.next_unique_seed;
        self.next_unique_seed += 1;
        s
    }

    fn marker(&mut self, time: SimTime, session: &str, kind: EventKind) {
        self.events.push(AccessEvent {
            time,
            session_id: session.to_string(),
            kind,
            block_id: None,
            block_type: None,
            transition_type: None,
            position: 0,
            size_bytes: 0,
            tool_name: None,
            content_seed: None,
        });
    }

    fn tool_call(&mut self, time: SimTime, session: &str, tool: &str) {
        self.events.push(AccessEvent {
            time,
            session_id: session.to_string(),
            kind: EventKind::ToolCall,
            block_id: None,
            block_type: None,
            transition_type: None,
            position: 0,
            size_bytes: 0,
            tool_name: Some(tool.to_string()),
            content_seed: None,
        });
    }

    fn access(
        &mut self,
        time: SimTime,
        session: &str,
        block: &mut LiveBlock,
        transition: TransitionType,
    ) {
        let transition = if block.carried {
            block.carried = false;
            TransitionType::AgentHandoff
        } else {
            transition
        };
        self.events.push(AccessEvent {
            time,
            session_id: session.to_string(),
            kind: EventKind::BlockAccess,
            block_id: Some(block.id),
            block_type: Some(block.block_type),
            transition_type: Some(transition),
            position: block.position,
            size_bytes: self.block_bytes,
            tool_name: block.tool.clone(),
            content_seed: Some(block.content_seed),
        });
    }

    /// Shared skeleton for the chat-shaped families.
    fn chat_family(&mut self, p: &ChatParams) {
        let sessions = self.session_count;
        for s in 0..sessions {
            let session = format!("chat-{s:05}");
            let t0 = SimTime::from_nanos(u64::from(s) * p.arrival_delta_ms * MS);
            self.marker(t0, &session, EventKind::RequestStart);

            let pooled = self.rng.random_bool(p.pooled_share);
            let pool_idx = self.rng.random_range(0..p.prompt_pools);
            let mut next_token = 0u64;
            let mut system: Vec<LiveBlock> = (0..p.system_blocks)
                .map(|b| {
                    let seed = if pooled {
                        u64::from(pool_idx) * 1_000 + u64::from(b)
                    } else {
                        self.unique_seed()
                    };
                    let blk = LiveBlock {
                        id: self.fresh_id(),
                        block_type: BlockType::SystemPrompt,
                        position: next_token,
                        content_seed: seed,
                        tool: None,
                        carried: false,
                    };
                    next_token += self.block_tokens;
                    blk
                })
                .collect();
            let mut users: Vec<LiveBlock> = Vec::new();

            let turns = self.rng.random_range(p.turns_min..=p.turns_max);
            let mut t = t0;
            for _turn in 0..turns {
                let mut step = t.after(MS); // accesses trail the turn start
                for blk in &mut system {
                    self.access(step, &session, blk, TransitionType::ReasoningStep);
                    step = step.after(1_000);
                }
                for blk in &mut users {
                    self.access(step, &session, blk, TransitionType::ReasoningStep);
                    step = step.after(1_000);
                }
                for _ in 0..p.user_blocks_per_turn {
                    // Stock questions share content seeds (a dedup target)
                    // but remain distinct blocks in distinct sessions.
                    let seed = if p.user_pool > 0 && self.rng.random_bool(p.pooled_user_share) {
                        1_000_000 + u64::from(self.rng.random_range(0..p.user_pool))
                    } else {
                        self.unique_seed()
                    };
                    let mut blk = LiveBlock {
                        id: self.fresh_id(),
                        block_type: BlockType::UserContext,
                        position: next_token,
                        content_seed: seed,
                        tool: None,
                        carried: false,
                    };
                    next_token += self.block_tokens;
                    self.access(step, &session, &mut blk, TransitionType::ReasoningStep);
                    step = step.after(1_000);
                    users.push(blk);
                }
                for _ in 0..p.reasoning_blocks_per_turn {
                    let seed = self.unique_seed();
                    let mut blk = LiveBlock {
                        id: self.fresh_id(),
                        block_type: BlockType::IntermediateReasoning,
                        position: next_token,
                        content_seed: seed,
                        tool: None,
                        carried: false,
                    };
                    next_token += self.block_tokens;
                    self.access(step, &session, &mut blk, TransitionType::ReasoningStep);
                    step = step.after(1_000);
                }
                let gap = self.rng.random_range(p.turn_gap_min_ms..=p.turn_gap_max_ms);
                t = step.after(gap * MS);
            }
            self.marker(t, &session, EventKind::RequestEnd);
        }
    }

    fn agentic_family(&mut self, p: &AgenticToolParams) {
        let sessions = self.session_count;
        // Contexts of already-finished sessions, oldest first. A handoff may
        // only inherit from a session that ended before this one starts.
        let mut finished: Vec<(SimTime, Vec<LiveBlock>)> = Vec::new();
        for s in 0..sessions {
            let session = format!("agent-{s:05}");
            let t0 = SimTime::from_nanos(u64::from(s) * p.arrival_delta_ms * MS);
            self.marker(t0, &session, EventKind::RequestStart);

            let mut next_token = 0u64;
            let mut context: Vec<LiveBlock> = Vec::new();
            if self.rng.random_bool(p.handoff_fraction) {
                if let Some(idx) = finished.iter().rposition(|(end, _)| *end <= t0) {
                    let (_, blocks) = finished.remove(idx);
                    for mut blk in blocks {
                        blk.carried = true;
                        next_token = next_token.max(blk.position + self.block_tokens);
                        context.push(blk);
                    }
                }
            }

            let calls = self.rng.random_range(p.calls_min..=p.calls_max);
            let mut prev_tool: Option<String> = None;
            let mut t = t0;
            for _call in 0..calls {
                let tool = match &prev_tool {
                    Some(prev) if self.rng.random_bool(p.self_loop) => prev.clone(),
                    _ => {
                        let others: Vec<&String> =
                            p.tools.iter().filter(|n| Some(*n) != prev_tool.as_ref()).collect();
                        others[self.rng.random_range(0..others.len())].clone()
                    }
                };
                let transition = match &prev_tool {
                    None => TransitionType::ReasoningStep,
                    Some(prev) if *prev == tool => TransitionType::SameToolRepeat,
                    Some(_) => TransitionType::ToolSwitch,
                };
                let mut step = t.after(MS);
                self.tool_call(step, &session, &tool);
                step = step.after(1_000);

                for blk in &mut context {
                    self.access(step, &session, blk, transition);
                    step = step.after(1_000);
                }
                if !context.iter().any(|b| b.tool.as_deref() == Some(tool.as_str())) {
                    for b in 0..p.context_blocks_per_tool {
                        let mut blk = LiveBlock {
                            id: self.fresh_id(),
                            block_type: BlockType::ToolContext,
                            position: next_token,
                            content_seed: stable_hash(tool.as_bytes()) ^ u64::from(b),
                            tool: Some(tool.clone()),
                            carried: false,
                        };
                        next_token += self.block_tokens;
                        self.access(step, &session, &mut blk, transition);
                        step = step.after(1_000);
                        context.push(blk);
                    }
                }
                for _ in 0..p.reasoning_blocks_per_call {
                    let seed = self.unique_seed();
                    let mut blk = LiveBlock {
                        id: self.fresh_id(),
                        block_type: BlockType::IntermediateReasoning,
                        position: next_token,
                        content_seed: seed,
                        tool: None,
                        carried: false,
                    };
                    next_token += self.block_tokens;
                    self.access(step, &session, &mut blk, TransitionType::ReasoningStep);
                    step = step.after(1_000);
                }
                prev_tool = Some(tool);
                let gap = self.rng.random_range(p.call_gap_min_ms..=p.call_gap_max_ms);
                t = step.after(gap * MS);
            }
            self.marker(t, &session, EventKind::RequestEnd);
            finished.push((t, context.into_iter().filter(|b| b.tool.is_some()).collect()));
        }
    }

    fn finish(mut self, spec: &WorkloadSpec) -> Trace {
        // Stable by construction: ties keep per-session generation order.
        self.events.sort_by_key(|e| e.time);
        Trace {
            header: Some(TraceHeader {
                kvtrace_version: TRACE_VERSION,
                generator: Some(spec.family.to_string()),
                seed: Some(spec.seed),
            }),
            events: self.events,
        }
    }
}
