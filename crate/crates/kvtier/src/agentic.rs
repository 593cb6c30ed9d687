//! Agentic workload modeling: tool-call chains and context reservations.
//!
//! Agent sessions interleave reasoning with tool invocations, and the tool
//! sequence is far from uniform: a search usually precedes a fetch, a code
//! edit precedes a test run. A first-order Markov chain over tool names,
//! with add-one smoothing so unseen transitions keep nonzero mass, predicts
//! the next tool. Per-tool context-size profiles (exponential moving mean
//! and variance) then size a memory reservation before the switch lands,
//! so the destination tool's context is staged instead of faulted in.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgenticParams {
    /// Additive smoothing mass per (row, successor) pair.
    pub smoothing_k: f64,
    /// EMA retention for per-tool context profiles.
    pub profile_lambda: f64,
}

impl Default for AgenticParams {
    fn default() -> Self {
        AgenticParams { smoothing_k: 1.0, profile_lambda: 0.5 }
    }
}

// ── Markov tool chain ───────────────────────────────────────────────────────

/// Transition counts over observed tool pairs. Probabilities are smoothed:
/// `P(b | a) = (count(a, b) + k) / (count(a, *) + n * k)` with `n` the
/// current tool vocabulary size, so a brand-new successor is merely
/// improbable, not impossible.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ToolChain {
    counts: BTreeMap<String, BTreeMap<String, u64>>,
    vocabulary: BTreeMap<String, u64>,
}

impl ToolChain {
    #[must_use]
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, from: &str, to: &str) {
        *self.vocabulary.entry(from.to_string()).or_insert(0) += 1;
        *self.vocabulary.entry(to.to_string()).or_insert(0) += 1;
        *self
            .counts
            .entry(from.to_string())
            .or_default()
            .entry(to.to_string())
            .or_insert(0) += 1;
    }

    #[must_use]
    pub fn vocabulary_size(&self) -> usize {
        self.vocabulary.len()
    }

    /// Smoothed transition probability. Unknown `from` rows fall back to
    /// the uniform distribution over the vocabulary.
    #[must_use]
    pub fn probability(&self, from: &str, to: &str, params: &AgenticParams) -> f64 {
        let n = self.vocabulary.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let k = params.smoothing_k;
        match self.counts.get(from) {
            None => 1.0 / n,
            Some(row) => {
                let row_total: u64 = row.values().sum();
                let c = row.get(to).copied().unwrap_or(0);
                (c as f64 + k) / (row_total as f64 + n * k)
            }
        }
    }

    /// Most likely successor of `from`; ties resolve to the lexically
    /// smallest name so prediction is deterministic. `None` until any
    /// transition has been seen.
    #[must_use]
    pub fn predict_next(&self, from: &str, params: &AgenticParams) -> Option<(String, f64)> {
        if self.vocabulary.is_empty() {
            return None;
        }
        let best = self
            .vocabulary
            .keys()
            .map(|to| (to, self.probability(from, to, params)))
            .max_by(|(a_name, a_p), (b_name, b_p)| {
                a_p.total_cmp(b_p).then_with(|| b_name.cmp(a_name))
            })?;
        Some((best.0.clone(), best.1))
    }
}

// ── Per-tool context profiles ───────────────────────────────────────────────

/// Running context-size profile for one tool: EMA mean and variance plus
/// the peak ever seen. The first observation seeds the mean directly so a
/// young profile is not dragged toward zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolProfile {
    pub mean_bytes: f64,
    pub variance: f64,
    pub peak_bytes: u64,
    pub samples: u64,
}

impl ToolProfile {
    fn first(bytes: u64) -> Self {
        ToolProfile { mean_bytes: bytes as f64, variance: 0.0, peak_bytes: bytes, samples: 1 }
    }

    fn update(&mut self, bytes: u64, lambda: f64) {
        let x = bytes as f64;
        let deviation = x - self.mean_bytes;
        self.mean_bytes = lambda * self.mean_bytes + (1.0 - lambda) * x;
        self.variance = lambda * self.variance + (1.0 - lambda) * deviation * deviation;
        self.peak_bytes = self.peak_bytes.max(bytes);
        self.samples += 1;
    }

    #[must_use]
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Context-footprint classes with half-open byte ranges; the boundaries
/// belong to the heavier class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FootprintClass {
    Light,
    Medium,
    Heavy,
    Extreme,
}

const GIB: u64 = 1 << 30;

impl FootprintClass {
    #[must_use]
    pub fn of_bytes(bytes: u64) -> FootprintClass {
        if bytes < GIB {
            FootprintClass::Light
        } else if bytes < 4 * GIB {
            FootprintClass::Medium
        } else if bytes < 16 * GIB {
            FootprintClass::Heavy
        } else {
            FootprintClass::Extreme
        }
    }
}

// ── Session-level model ─────────────────────────────────────────────────────

/// Reservation advice issued when a session is about to change tools.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reservation {
    pub tool: String,
    /// Mean plus one standard deviation of the tool's context profile, or
    /// the global mean when the tool has no history.
    pub bytes: u64,
    pub class: FootprintClass,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AgenticModel {
    pub chain: ToolChain,
    profiles: BTreeMap<String, ToolProfile>,
    params: AgenticParams,
}

impl AgenticModel {
    #[must_use]
    pub fn new(params: AgenticParams) -> Self {
        AgenticModel { chain: ToolChain::new(), profiles: BTreeMap::new(), params }
    }

    pub fn params(&self) -> AgenticParams {
        self.params
    }

    /// Record a completed tool call and the context bytes it touched.
    pub fn observe_call(&mut self, prev_tool: Option<&str>, tool: &str, context_bytes: u64) {
        if let Some(prev) = prev_tool {
            self.chain.observe(prev, tool);
        }
        match self.profiles.get_mut(tool) {
            Some(p) => p.update(context_bytes, self.params.profile_lambda),
            None => {
                self.profiles.insert(tool.to_string(), ToolProfile::first(context_bytes));
            }
        }
    }

    #[must_use]
    pub fn profile(&self, tool: &str) -> Option<&ToolProfile> {
        self.profiles.get(tool)
    }

    fn global_mean_bytes(&self) -> f64 {
        if self.profiles.is_empty() {
            return 0.0;
        }
        self.profiles.values().map(|p| p.mean_bytes).sum::<f64>() / self.profiles.len() as f64
    }

    /// Classify a session by the peak footprint across the tools it used.
    #[must_use]
    pub fn classify_session(&self, tools_used: &[&str]) -> FootprintClass {
        let peak = tools_used
            .iter()
            .filter_map(|t| self.profiles.get(*t))
            .map(|p| p.peak_bytes)
            .max()
            .unwrap_or(0);
        FootprintClass::of_bytes(peak)
    }

    /// Advice for an imminent tool switch. Staying on the same tool needs
    /// no new reservation (its context is already live); an unknown next
    /// tool is sized at the global mean.
    #[must_use]
    pub fn on_tool_switch(&self, prev_tool: Option<&str>, next_tool: &str) -> Option<Reservation> {
        if prev_tool == Some(next_tool) {
            return None;
        }
        let bytes = match self.profiles.get(next_tool) {
            Some(p) => p.mean_bytes + p.sigma(),
            None => self.global_mean_bytes(),
        };
        let bytes = bytes.max(0.0).round() as u64;
        Some(Reservation {
            tool: next_tool.to_string(),
            bytes,
            class: FootprintClass::of_bytes(bytes),
        })
    }
}
