//! Position-driven prefetch planning.
//!
//! Decode walks token positions in order, and rotary position structure
//! makes the attention span widen with depth: shallow layers resolve local
//! context while deep layers integrate far-back positions. The lookahead
//! window therefore scales linearly from `window_min_blocks` at layer 0 to
//! `window_max_blocks` at the last layer, and a block spanning several
//! layers inherits the widest window any of its layers wants.
//!
//! A plan is the set of candidate blocks that lie inside the lookahead
//! horizon but are parked below tier 0, ordered by token position so the
//! nearest need is issued first.

use serde::{Deserialize, Serialize};

use crate::block::{BlockId, BlockMeta, LayerSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefetchParams {
    pub window_min_blocks: u32,
    pub window_max_blocks: u32,
}

impl Default for PrefetchParams {
    fn default() -> Self {
        PrefetchParams { window_min_blocks: 2, window_max_blocks: 8 }
    }
}

impl PrefetchParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.window_min_blocks > self.window_max_blocks {
            return Err("window_min_blocks must not exceed window_max_blocks".into());
        }
        Ok(())
    }
}

/// Lookahead window in blocks for one layer: linear in depth, banker's
/// rounding at the midpoints so the ramp has no systematic upward bias.
#[must_use]
pub fn window_for_layer(params: &PrefetchParams, layer: u16, num_layers: u16) -> u32 {
    debug_assert!(layer < num_layers);
    if num_layers <= 1 {
        return params.window_max_blocks;
    }
    let span = f64::from(params.window_max_blocks - params.window_min_blocks);
    let frac = f64::from(layer) / f64::from(num_layers - 1);
    params.window_min_blocks + (span * frac).round_ties_even() as u32
}

/// Widest per-layer window over the layers a block materializes.
#[must_use]
pub fn window_for_block(params: &PrefetchParams, layer_set: &LayerSet, num_layers: u16) -> u32 {
    match layer_set {
        LayerSet::All => params.window_max_blocks,
        LayerSet::Subset(layers) => layers
            .iter()
            .filter(|&&l| l < num_layers)
            .map(|&l| window_for_layer(params, l, num_layers))
            .max()
            .unwrap_or(params.window_min_blocks),
    }
}

/// Blocks worth promoting ahead of position `position`: inside the horizon
/// `[position, position + window * block_tokens)`, currently resident below
/// tier 0, nearest first, at most `window` of them.
pub fn plan<'a>(
    candidates: impl IntoIterator<Item = &'a BlockMeta>,
    position: u64,
    block_tokens: u64,
    window: u32,
) -> Vec<BlockId> {
    let horizon_end = position + u64::from(window) * block_tokens;
    let mut picks: Vec<(u64, BlockId)> = candidates
        .into_iter()
        .filter(|m| m.resident_tier.is_some_and(|t| t > 0))
        .filter(|m| m.token_span.start < horizon_end && m.token_span.end > position)
        .map(|m| (m.token_span.start, m.block_id))
        .collect();
    picks.sort_unstable();
    picks.truncate(window as usize);
    picks.into_iter().map(|(_, id)| id).collect()
}
