//! Importance-weighted eviction.
//!
//! Attention tells us which KV heads still matter: an access at token
//! distance `d` contributes weight `exp(-d / tau)`, folded into a per
//! (layer, kv-head) exponential moving average. Candidate blocks are scored
//! by summing the averages over the layers they span, scaled by a
//! transition-aware multiplier per layer band, and the minimum-score block
//! is evicted.
//!
//! Blocks that span the whole layer stack all see the same matrix sum, so
//! scores tie and selection falls back to least-recently-used order. That
//! degeneration is deliberate: the policy only deviates from LRU when
//! blocks actually carry partial layer sets or transition context.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::block::{BlockId, BlockMeta, LayerSet, TransitionType};
use crate::clock::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvictionParams {
    /// EMA retention: `score <- lambda * score + (1 - lambda) * weight`.
    pub lambda: f64,
    /// Token distance at which an access weight decays to 1/e.
    pub tau_tokens: f64,
}

impl Default for EvictionParams {
    fn default() -> Self {
        EvictionParams { lambda: 0.5, tau_tokens: 2048.0 }
    }
}

// ── Layer bands and transition multipliers ──────────────────────────────────

/// Thirds of the layer stack. Attention roles shift with depth, and the
/// multiplier table keys on these coarse bands rather than single layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerBand {
    Early,
    Mid,
    Late,
}

impl LayerBand {
    #[must_use]
    pub fn of(layer: u16, num_layers: u16) -> LayerBand {
        let (l, n) = (u32::from(layer), u32::from(num_layers));
        if 3 * l < n {
            LayerBand::Early
        } else if 3 * l < 2 * n {
            LayerBand::Mid
        } else {
            LayerBand::Late
        }
    }

    const fn index(self) -> usize {
        match self {
            LayerBand::Early => 0,
            LayerBand::Mid => 1,
            LayerBand::Late => 2,
        }
    }
}

/// One override on top of the all-ones multiplier baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierRule {
    pub transition: TransitionType,
    pub band: LayerBand,
    pub factor: f64,
}

/// Transition-by-band score multipliers. Tool switches devalue mid-stack
/// context and agent handoffs devalue late-stack context; everything else
/// passes through unscaled.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierTable {
    table: [[f64; 3]; 4],
}

impl Default for MultiplierTable {
    fn default() -> Self {
        MultiplierTable::from_rules(&[
            MultiplierRule {
                transition: TransitionType::ToolSwitch,
                band: LayerBand::Mid,
                factor: 0.8,
            },
            MultiplierRule {
                transition: TransitionType::AgentHandoff,
                band: LayerBand::Late,
                factor: 0.5,
            },
        ])
    }
}

impl MultiplierTable {
    #[must_use]
    pub fn from_rules(rules: &[MultiplierRule]) -> Self {
        let mut table = [[1.0; 3]; 4];
        for r in rules {
            table[r.transition.index()][r.band.index()] = r.factor;
        }
        MultiplierTable { table }
    }

    #[must_use]
    pub fn factor(&self, transition: TransitionType, band: LayerBand) -> f64 {
        self.table[transition.index()][band.index()]
    }
}

// ── Importance matrix ───────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ImportanceMatrix {
    num_layers: u16,
    num_kv_heads: u32,
    params: EvictionParams,
    /// Row-major (layer, head) EMA scores.
    scores: Vec<f64>,
    /// Per-layer sums of `scores`, kept in lockstep so block scoring is
    /// O(layers) instead of O(layers * heads).
    layer_sums: Vec<f64>,
    /// Layer references outside the matrix, counted instead of panicking so
    /// a malformed trace degrades to a diagnostic.
    skipped_layer_refs: Cell<u64>,
}

impl ImportanceMatrix {
    #[must_use]
    pub fn new(num_layers: u16, num_kv_heads: u32, params: EvictionParams) -> Self {
        let cells = num_layers as usize * num_kv_heads as usize;
        ImportanceMatrix {
            num_layers,
            num_kv_heads,
            params,
            scores: vec![0.0; cells],
            layer_sums: vec![0.0; num_layers as usize],
            skipped_layer_refs: Cell::new(0),
        }
    }

    #[must_use]
    pub fn num_layers(&self) -> u16 {
        self.num_layers
    }

    #[must_use]
    pub fn score(&self, layer: u16, kv_head: u32) -> f64 {
        self.scores[layer as usize * self.num_kv_heads as usize + kv_head as usize]
    }

    /// Out-of-range layer references seen so far during scoring.
    #[must_use]
    pub fn skipped_layer_refs(&self) -> u64 {
        self.skipped_layer_refs.get()
    }

    fn weight(&self, distance_tokens: u64) -> f64 {
        (-(distance_tokens as f64) / self.params.tau_tokens).exp()
    }

    fn fold(&mut self, layer: u16, kv_head: u32, weight: f64) {
        let idx = layer as usize * self.num_kv_heads as usize + kv_head as usize;
        let old = self.scores[idx];
        let new = self.params.lambda * old + (1.0 - self.params.lambda) * weight;
        self.scores[idx] = new;
        self.layer_sums[layer as usize] += new - old;
    }

    /// Fold one access at `distance_tokens` into a single (layer, head) cell.
    pub fn record_access(&mut self, layer: u16, kv_head: u32, distance_tokens: u64) {
        assert!(layer < self.num_layers, "layer {layer} out of range");
        assert!(kv_head < self.num_kv_heads, "kv head {kv_head} out of range");
        let w = self.weight(distance_tokens);
        self.fold(layer, kv_head, w);
    }

    /// Fold one decode step given per-query-head attention distances. Query
    /// heads sharing a KV head contribute the strongest (nearest) signal in
    /// their group, so grouped-query layouts do not dilute a head that any
    /// of its consumers still needs.
    pub fn record_step(&mut self, layer: u16, query_head_distances: &[u64]) {
        assert!(layer < self.num_layers, "layer {layer} out of range");
        assert!(
            !query_head_distances.is_empty()
                && query_head_distances.len() % self.num_kv_heads as usize == 0,
            "query heads must divide evenly over {} kv heads",
            self.num_kv_heads
        );
        let group = query_head_distances.len() / self.num_kv_heads as usize;
        for kv_head in 0..self.num_kv_heads as usize {
            let nearest = query_head_distances[kv_head * group..(kv_head + 1) * group]
                .iter()
                .min()
                .copied()
                .expect("non-empty group");
            let w = self.weight(nearest);
            self.fold(layer, kv_head as u32, w);
        }
    }

    /// Importance of a block: head-averaged matrix mass over its layer set,
    /// each layer scaled by the transition multiplier for its band.
    #[must_use]
    pub fn block_score(
        &self,
        layer_set: &LayerSet,
        transition: TransitionType,
        multipliers: &MultiplierTable,
    ) -> f64 {
        let head_weight = 1.0 / f64::from(self.num_kv_heads);
        let mut total = 0.0;
        match layer_set {
            LayerSet::All => {
                for layer in 0..self.num_layers {
                    let m = multipliers.factor(transition, LayerBand::of(layer, self.num_layers));
                    total += m * self.layer_sums[layer as usize] * head_weight;
                }
            }
            LayerSet::Subset(layers) => {
                for &layer in layers {
                    if layer >= self.num_layers {
                        self.skipped_layer_refs.set(self.skipped_layer_refs.get() + 1);
                        continue;
                    }
                    let m = multipliers.factor(transition, LayerBand::of(layer, self.num_layers));
                    total += m * self.layer_sums[layer as usize] * head_weight;
                }
            }
        }
        total
    }
}

/// Pick the eviction victim: lowest block score, then oldest access, then
/// smallest id. Returns `None` on an empty candidate set.
pub fn select_victim<'a>(
    candidates: impl IntoIterator<Item = (&'a BlockMeta, TransitionType)>,
    matrix: &ImportanceMatrix,
    multipliers: &MultiplierTable,
) -> Option<BlockId> {
    let mut best: Option<(f64, SimTime, BlockId)> = None;
    for (meta, transition) in candidates {
        let score = matrix.block_score(&meta.layer_set, transition, multipliers);
        let better = match &best {
            None => true,
            Some((s, t, id)) => match score.total_cmp(s) {
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Equal => (meta.last_access, meta.block_id) < (*t, *id),
            },
        };
        if better {
            best = Some((score, meta.last_access, meta.block_id));
        }
    }
    best.map(|(_, _, id)| id)
}
