//! Six-tier memory/storage hierarchy.
//!
//! Tier 0 is device HBM and each subsequent tier trades latency and
//! bandwidth for capacity and cost, down to an unbounded parallel
//! filesystem at Tier 5. The hierarchy owns residency: a block lives in at
//! most one tier at a time, and every byte of occupancy is accounted
//! against that tier's capacity.
//!
//! Transfers are modeled as `effective_latency(size) + size / bandwidth`.
//! Latency is constant per tier except where hardware behaves piecewise
//! (RDMA small-message vs. bulk); there the two published endpoints are
//! joined log-linearly in message size.
//!
//! Migrations started with [`Hierarchy::promote`] are asynchronous: the
//! block keeps serving reads from its source tier until the completion
//! instant, while the destination holds a byte reservation so capacity
//! cannot be oversubscribed in flight.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{BlockId, BlockMeta};
use crate::clock::SimTime;

/// Message-size endpoints for piecewise latency interpolation.
const LATENCY_SMALL_REF_BYTES: f64 = 4096.0; // 4 KiB
const LATENCY_LARGE_REF_BYTES: f64 = 16.0 * 1024.0 * 1024.0; // 16 MiB

// ── Tier specification ──────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierSpec {
    pub tier_index: u8,
    pub name: String,
    pub bandwidth_bytes_per_sec: f64,
    pub base_latency_ns: u64,
    /// Latency for bulk transfers (at or above 16 MiB). Equal to
    /// `base_latency_ns` on constant-latency tiers.
    pub latency_large_ns: u64,
    /// `None` means unbounded (the bottom tier by default).
    #[serde(default)]
    pub capacity_bytes: Option<u64>,
    pub cost_dollars_per_gb_hour: f64,
    #[serde(default = "default_true")]
    pub enabled: bool,
}

const fn default_true() -> bool {
    true
}

impl TierSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.bandwidth_bytes_per_sec > 0.0) {
            return Err(format!("tier {}: bandwidth must be positive", self.tier_index));
        }
        if self.capacity_bytes == Some(0) {
            return Err(format!("tier {}: zero capacity; omit the tier instead", self.tier_index));
        }
        if self.latency_large_ns < self.base_latency_ns {
            return Err(format!("tier {}: bulk latency below base latency", self.tier_index));
        }
        Ok(())
    }
}

/// Latency component of a transfer, interpolated log-linearly in size
/// between the 4 KiB and 16 MiB reference points and clamped outside them.
#[must_use]
pub fn effective_latency_ns(spec: &TierSpec, size_bytes: u64) -> f64 {
    let base = spec.base_latency_ns as f64;
    let large = spec.latency_large_ns as f64;
    if spec.latency_large_ns == spec.base_latency_ns {
        return base;
    }
    let size = (size_bytes as f64).clamp(LATENCY_SMALL_REF_BYTES, LATENCY_LARGE_REF_BYTES);
    let t = (size.ln() - LATENCY_SMALL_REF_BYTES.ln())
        / (LATENCY_LARGE_REF_BYTES.ln() - LATENCY_SMALL_REF_BYTES.ln());
    base + (large - base) * t
}

/// One-leg transfer time in exact (fractional) nanoseconds.
#[must_use]
pub fn transfer_time_exact_ns(spec: &TierSpec, size_bytes: u64) -> f64 {
    effective_latency_ns(spec, size_bytes) + size_bytes as f64 * 1e9 / spec.bandwidth_bytes_per_sec
}

/// One-leg transfer time rounded to integer nanoseconds.
#[must_use]
pub fn transfer_time_ns(spec: &TierSpec, size_bytes: u64) -> u64 {
    transfer_time_exact_ns(spec, size_bytes).round() as u64
}

// ── Value-scored placement ──────────────────────────────────────────────────

/// Cost-model constants for the placement value function. All dollar-valued.
/// The thresholds are per-tier admission bars, monotone non-increasing from
/// fast to slow; the bottom entry is conventionally very negative so the
/// slowest enabled tier always accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueScoreParams {
    pub recompute_cost_per_token_ns: f64,
    pub gpu_hour_dollars: f64,
    pub expected_residency_hours: f64,
    pub promotion_thresholds: Vec<f64>,
}

impl ValueScoreParams {
    pub fn validate(&self, num_tiers: usize) -> Result<(), String> {
        if self.promotion_thresholds.len() != num_tiers {
            return Err(format!(
                "expected {} promotion thresholds, got {}",
                num_tiers,
                self.promotion_thresholds.len()
            ));
        }
        if self.promotion_thresholds.windows(2).any(|w| w[0] < w[1]) {
            return Err("promotion thresholds must be non-increasing from fast to slow".into());
        }
        Ok(())
    }
}

const NS_PER_HOUR: f64 = 3.6e12;

/// Expected dollar value of keeping `meta` resident in `tier`:
/// reuse-weighted recompute savings minus storage rent for the expected
/// residency window. Negative when the block is not worth the tier.
#[must_use]
pub fn value_score(p_reuse: f64, meta: &BlockMeta, tier: &TierSpec, params: &ValueScoreParams) -> f64 {
    let tokens = meta.token_span.tokens() as f64;
    let recompute_dollars =
        tokens * params.recompute_cost_per_token_ns * params.gpu_hour_dollars / NS_PER_HOUR;
    let storage_dollars = meta.size_bytes as f64 / 1e9
        * tier.cost_dollars_per_gb_hour
        * params.expected_residency_hours;
    p_reuse * recompute_dollars - storage_dollars
}

// ── Tier state ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct TierState {
    pub spec: TierSpec,
    pub enabled: bool,
    pub used_bytes: u64,
    /// Bytes promised to in-flight migrations targeting this tier.
    pub reserved_bytes: u64,
    pub resident: BTreeMap<BlockId, BlockMeta>,
    pub hit_count: u64,
    pub miss_count: u64,
    pub promotion_count: u64,
    pub demotion_count: u64,
}

impl TierState {
    fn new(spec: TierSpec) -> Self {
        let enabled = spec.enabled;
        TierState {
            spec,
            enabled,
            used_bytes: 0,
            reserved_bytes: 0,
            resident: BTreeMap::new(),
            hit_count: 0,
            miss_count: 0,
            promotion_count: 0,
            demotion_count: 0,
        }
    }

    /// Free bytes after honoring reservations. Unbounded tiers report
    /// `u64::MAX`.
    #[must_use]
    pub fn headroom(&self) -> u64 {
        match self.spec.capacity_bytes {
            None => u64::MAX,
            Some(cap) => cap.saturating_sub(self.used_bytes + self.reserved_bytes),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TierError {
    #[error("tier {tier} needs {bytes_short} more bytes")]
    NeedsEviction { tier: u8, bytes_short: u64 },
    #[error("tier {0} is disabled")]
    TierDisabled(u8),
    #[error("block {0} already resident in tier {1}")]
    AlreadyResident(BlockId, u8),
    #[error("block {0} not resident in tier {1}")]
    NotResident(BlockId, u8),
    #[error("no such tier index {0}")]
    NoSuchTier(u8),
}

// ── Hierarchy ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
struct Migration {
    seq: u64,
    block_id: BlockId,
    from: u8,
    to: u8,
    /// Bytes reserved at the destination when the migration started; the
    /// refund at completion or cancellation must use this exact figure.
    size_bytes: u64,
    completion: SimTime,
}

/// A finished or administratively forced block move.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RedistributionEvent {
    pub block_id: BlockId,
    pub from: u8,
    /// `None` when no enabled tier could take the block.
    pub to: Option<u8>,
    pub completion: SimTime,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    tiers: Vec<TierState>,
    /// Which tier currently holds each block; single residency by construction.
    residency: BTreeMap<BlockId, u8>,
    in_flight: Vec<Migration>,
    next_seq: u64,
}

impl Hierarchy {
    pub fn new(specs: Vec<TierSpec>) -> Result<Self, String> {
        if specs.is_empty() {
            return Err("hierarchy needs at least one tier".into());
        }
        for (i, s) in specs.iter().enumerate() {
            s.validate()?;
            if s.tier_index as usize != i {
                return Err(format!("tier_index {} out of order at position {i}", s.tier_index));
            }
        }
        Ok(Hierarchy {
            tiers: specs.into_iter().map(TierState::new).collect(),
            residency: BTreeMap::new(),
            in_flight: Vec::new(),
            next_seq: 0,
        })
    }

    #[must_use]
    pub fn num_tiers(&self) -> usize {
        self.tiers.len()
    }

    #[must_use]
    pub fn tier(&self, index: u8) -> &TierState {
        &self.tiers[index as usize]
    }

    pub fn tiers(&self) -> impl Iterator<Item = &TierState> {
        self.tiers.iter()
    }

    /// Tier currently holding `block_id`, if any.
    #[must_use]
    pub fn tier_of(&self, block_id: BlockId) -> Option<u8> {
        self.residency.get(&block_id).copied()
    }

    #[must_use]
    pub fn is_in_flight(&self, block_id: BlockId) -> bool {
        self.in_flight.iter().any(|m| m.block_id == block_id)
    }

    /// Sum of enabled, bounded capacities plus a flag for unbounded tiers.
    #[must_use]
    pub fn total_capacity(&self) -> (u64, bool) {
        let mut sum = 0u64;
        let mut unbounded = false;
        for t in &self.tiers {
            if !t.enabled {
                continue;
            }
            match t.spec.capacity_bytes {
                Some(c) => sum += c,
                None => unbounded = true,
            }
        }
        (sum, unbounded)
    }

    // ── Core block operations ───────────────────────────────────────────

    /// Install a block into a tier. Returns the instant the write leg lands.
    pub fn write_block(
        &mut self,
        tier: u8,
        mut meta: BlockMeta,
        now: SimTime,
    ) -> Result<SimTime, TierError> {
        let idx = self.check_tier(tier)?;
        if let Some(existing) = self.residency.get(&meta.block_id) {
            return Err(TierError::AlreadyResident(meta.block_id, *existing));
        }
        if !self.tiers[idx].enabled {
            return Err(TierError::TierDisabled(tier));
        }
        let headroom = self.tiers[idx].headroom();
        if meta.size_bytes > headroom {
            return Err(TierError::NeedsEviction {
                tier,
                bytes_short: meta.size_bytes - headroom,
            });
        }
        let completion = now.after(transfer_time_ns(&self.tiers[idx].spec, meta.size_bytes));
        meta.resident_tier = Some(tier);
        meta.last_access = now;
        self.tiers[idx].used_bytes += meta.size_bytes;
        self.residency.insert(meta.block_id, tier);
        self.tiers[idx].resident.insert(meta.block_id, meta);
        Ok(completion)
    }

    /// Probe one tier for a block. A hit refreshes `last_access` and returns
    /// the read-completion instant; a miss just bumps the miss counter.
    pub fn read_block(
        &mut self,
        tier: u8,
        block_id: BlockId,
        now: SimTime,
    ) -> Option<(BlockMeta, SimTime)> {
        let idx = tier as usize;
        let state = &mut self.tiers[idx];
        match state.resident.get_mut(&block_id) {
            Some(meta) => {
                state.hit_count += 1;
                meta.last_access = now;
                let completion = now.after(transfer_time_ns(&state.spec, meta.size_bytes));
                Some((meta.clone(), completion))
            }
            None => {
                state.miss_count += 1;
                None
            }
        }
    }

    /// Remove a block from a tier without destination accounting.
    pub fn evict_block(&mut self, tier: u8, block_id: BlockId) -> Result<BlockMeta, TierError> {
        let idx = self.check_tier(tier)?;
        let mut meta = self.tiers[idx]
            .resident
            .remove(&block_id)
            .ok_or(TierError::NotResident(block_id, tier))?;
        self.tiers[idx].used_bytes -= meta.size_bytes;
        self.residency.remove(&block_id);
        meta.resident_tier = None;
        Ok(meta)
    }

    /// Synchronously relocate a block between tiers (demand path). Capacity
    /// at the destination must already exist; eviction is the caller's
    /// policy decision.
    pub fn move_block(
        &mut self,
        block_id: BlockId,
        from: u8,
        to: u8,
        now: SimTime,
    ) -> Result<(), TierError> {
        if from == to {
            return Ok(());
        }
        self.check_tier(to)?;
        if !self.tiers[to as usize].enabled {
            return Err(TierError::TierDisabled(to));
        }
        let meta = {
            let idx = self.check_tier(from)?;
            self.tiers[idx]
                .resident
                .get(&block_id)
                .ok_or(TierError::NotResident(block_id, from))?
                .clone()
        };
        let headroom = self.tiers[to as usize].headroom();
        if meta.size_bytes > headroom {
            return Err(TierError::NeedsEviction {
                tier: to,
                bytes_short: meta.size_bytes - headroom,
            });
        }
        let mut meta = self.evict_block(from, block_id).expect("checked resident");
        meta.resident_tier = Some(to);
        meta.last_access = now;
        self.tiers[to as usize].used_bytes += meta.size_bytes;
        self.residency.insert(block_id, to);
        if to < from {
            self.tiers[to as usize].promotion_count += 1;
        } else {
            self.tiers[to as usize].demotion_count += 1;
        }
        self.tiers[to as usize].resident.insert(block_id, meta);
        Ok(())
    }

    // ── Asynchronous migration ──────────────────────────────────────────

    /// Begin an asynchronous migration. The block keeps serving reads from
    /// `from` until the returned completion instant; `to` reserves bytes
    /// immediately. Same-tier promotion is a zero-time no-op.
    pub fn promote(
        &mut self,
        block_id: BlockId,
        from: u8,
        to: u8,
        now: SimTime,
    ) -> Result<SimTime, TierError> {
        if from == to {
            return Ok(now);
        }
        self.check_tier(from)?;
        self.check_tier(to)?;
        if !self.tiers[from as usize].enabled {
            return Err(TierError::TierDisabled(from));
        }
        if !self.tiers[to as usize].enabled {
            return Err(TierError::TierDisabled(to));
        }
        let size = self.tiers[from as usize]
            .resident
            .get(&block_id)
            .ok_or(TierError::NotResident(block_id, from))?
            .size_bytes;
        let headroom = self.tiers[to as usize].headroom();
        if size > headroom {
            return Err(TierError::NeedsEviction { tier: to, bytes_short: size - headroom });
        }
        let read_leg = transfer_time_ns(&self.tiers[from as usize].spec, size);
        let write_leg = transfer_time_ns(&self.tiers[to as usize].spec, size);
        let completion = now.after(read_leg).after(write_leg);
        self.tiers[to as usize].reserved_bytes += size;
        self.in_flight.push(Migration {
            seq: self.next_seq,
            block_id,
            from,
            to,
            size_bytes: size,
            completion,
        });
        self.next_seq += 1;
        Ok(completion)
    }

    /// Land every migration due at or before `now`, in completion order.
    /// A migration whose block moved away in the meantime is dropped and its
    /// reservation refunded.
    pub fn complete_due(&mut self, now: SimTime) -> Vec<RedistributionEvent> {
        let mut due: Vec<Migration> = Vec::new();
        self.in_flight.retain(|m| {
            if m.completion <= now {
                due.push(m.clone());
                false
            } else {
                true
            }
        });
        due.sort_by_key(|m| (m.completion, m.seq));
        let mut events = Vec::with_capacity(due.len());
        for m in due {
            let to = m.to as usize;
            self.tiers[to].reserved_bytes -= m.size_bytes;
            if self.residency.get(&m.block_id) != Some(&m.from) {
                continue; // moved or evicted while in flight
            }
            let mut meta = self.evict_block(m.from, m.block_id).expect("resident checked");
            meta.resident_tier = Some(m.to);
            self.tiers[to].used_bytes += meta.size_bytes;
            self.residency.insert(m.block_id, m.to);
            if m.to < m.from {
                self.tiers[to].promotion_count += 1;
            } else {
                self.tiers[to].demotion_count += 1;
            }
            self.tiers[to].resident.insert(m.block_id, meta);
            events.push(RedistributionEvent {
                block_id: m.block_id,
                from: m.from,
                to: Some(m.to),
                completion: m.completion,
            });
        }
        events
    }

    // ── Placement ───────────────────────────────────────────────────────

    /// Fastest enabled tier whose admission threshold the block's value
    /// score clears; the slowest enabled tier is the unconditional fallback.
    #[must_use]
    pub fn place(&self, meta: &BlockMeta, p_reuse: f64, params: &ValueScoreParams) -> u8 {
        let mut fallback = 0u8;
        for t in &self.tiers {
            if !t.enabled {
                continue;
            }
            fallback = t.spec.tier_index;
            let score = value_score(p_reuse, meta, &t.spec, params);
            if score > params.promotion_thresholds[t.spec.tier_index as usize] {
                return t.spec.tier_index;
            }
        }
        fallback
    }

    // ── Administrative operations ───────────────────────────────────────

    /// Disable a tier, canceling its in-flight traffic and re-homing every
    /// resident block, preferring the next-slower tier and cascading further
    /// down on overflow; only when nothing below has room does a block climb
    /// upward. Blocks with no destination at all are reported with `to: None`.
    pub fn disable_tier(&mut self, tier: u8, now: SimTime) -> Result<Vec<RedistributionEvent>, TierError> {
        let idx = self.check_tier(tier)?;
        if !self.tiers[idx].enabled {
            return Ok(Vec::new());
        }
        // Cancel in-flight migrations touching this tier; refund reservations.
        let mut canceled: Vec<Migration> = Vec::new();
        self.in_flight.retain(|m| {
            if m.from == tier || m.to == tier {
                canceled.push(m.clone());
                false
            } else {
                true
            }
        });
        for m in canceled {
            self.tiers[m.to as usize].reserved_bytes -= m.size_bytes;
        }
        self.tiers[idx].enabled = false;

        let ids: Vec<BlockId> = self.tiers[idx].resident.keys().copied().collect();
        let mut events = Vec::with_capacity(ids.len());
        for id in ids {
            let size = self.tiers[idx].resident[&id].size_bytes;
            let dest = self.redistribution_target(tier, size);
            match dest {
                Some(to) => {
                    let read_leg = transfer_time_ns(&self.tiers[idx].spec, size);
                    let write_leg = transfer_time_ns(&self.tiers[to as usize].spec, size);
                    let completion = now.after(read_leg).after(write_leg);
                    let mut meta = self.evict_block(tier, id).expect("resident");
                    meta.resident_tier = Some(to);
                    self.tiers[to as usize].used_bytes += meta.size_bytes;
                    self.residency.insert(id, to);
                    if to < tier {
                        self.tiers[to as usize].promotion_count += 1;
                    } else {
                        self.tiers[to as usize].demotion_count += 1;
                    }
                    self.tiers[to as usize].resident.insert(id, meta);
                    events.push(RedistributionEvent { block_id: id, from: tier, to: Some(to), completion });
                }
                None => {
                    self.evict_block(tier, id).expect("resident");
                    events.push(RedistributionEvent { block_id: id, from: tier, to: None, completion: now });
                }
            }
        }
        Ok(events)
    }

    fn redistribution_target(&self, from: u8, size: u64) -> Option<u8> {
        let below = (from + 1)..self.tiers.len() as u8;
        let above = (0..from).rev();
        below
            .chain(above)
            .find(|&t| self.tiers[t as usize].enabled && self.tiers[t as usize].headroom() >= size)
    }

    // ── Invariant audit ─────────────────────────────────────────────────

    /// Full structural check: per-tier byte accounting, capacity bounds,
    /// single residency, index consistency, and emptiness of disabled tiers.
    pub fn audit(&self) -> Result<(), String> {
        let mut seen = BTreeMap::new();
        for t in &self.tiers {
            let sum: u64 = t.resident.values().map(|m| m.size_bytes).sum();
            if sum != t.used_bytes {
                return Err(format!(
                    "tier {}: used_bytes {} != resident sum {sum}",
                    t.spec.tier_index, t.used_bytes
                ));
            }
            if let Some(cap) = t.spec.capacity_bytes {
                if t.used_bytes + t.reserved_bytes > cap {
                    return Err(format!(
                        "tier {}: occupancy {}+{} exceeds capacity {cap}",
                        t.spec.tier_index, t.used_bytes, t.reserved_bytes
                    ));
                }
            }
            if !t.enabled && !t.resident.is_empty() {
                return Err(format!("tier {}: disabled but holds blocks", t.spec.tier_index));
            }
            for (id, meta) in &t.resident {
                if meta.resident_tier != Some(t.spec.tier_index) {
                    return Err(format!("{id}: meta tier {:?} mismatch", meta.resident_tier));
                }
                if seen.insert(*id, t.spec.tier_index).is_some() {
                    return Err(format!("{id}: resident in two tiers"));
                }
            }
        }
        if seen != self.residency {
            return Err("residency index out of sync with tier contents".into());
        }
        Ok(())
    }

    /// Constant-work conservation check, cheap enough to run per event:
    /// block count matches the residency index and no tier overflows.
    pub fn check_conservation(&self) -> Result<(), String> {
        let counted: usize = self.tiers.iter().map(|t| t.resident.len()).sum();
        if counted != self.residency.len() {
            return Err(format!(
                "residency index tracks {} blocks, tiers hold {counted}",
                self.residency.len()
            ));
        }
        for t in &self.tiers {
            if let Some(cap) = t.spec.capacity_bytes {
                if t.used_bytes + t.reserved_bytes > cap {
                    return Err(format!(
                        "tier {}: occupancy {}+{} exceeds capacity {cap}",
                        t.spec.tier_index, t.used_bytes, t.reserved_bytes
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_tier(&self, tier: u8) -> Result<usize, TierError> {
        if (tier as usize) < self.tiers.len() {
            Ok(tier as usize)
        } else {
            Err(TierError::NoSuchTier(tier))
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::block::{BlockType, ContentHash, LayerSet, TokenSpan};
    use proptest::prelude::*;

    /// Table-of-record hierarchy used across the test suite.
    pub(crate) fn default_specs() -> Vec<TierSpec> {
        let mk = |i: u8, name: &str, bw: f64, lat: u64, lat_big: u64, cap: Option<u64>, cost: f64| TierSpec {
            tier_index: i,
            name: name.into(),
            bandwidth_bytes_per_sec: bw,
            base_latency_ns: lat,
            latency_large_ns: lat_big,
            capacity_bytes: cap,
            cost_dollars_per_gb_hour: cost,
            enabled: true,
        };
        vec![
            mk(0, "gpu_hbm", 3.35e12, 100, 100, Some(40_000_000_000), 0.500),
            mk(1, "cpu_dram", 204e9, 3_000, 3_000, Some(160_000_000_000), 0.050),
            mk(2, "cxl", 64e9, 500, 500, Some(512_000_000_000), 0.030),
            mk(3, "nvme_gds", 12e9, 10_000, 10_000, Some(3_988_000_000_000), 0.020),
            mk(4, "rdma_pool", 50e9, 1_000, 100_000, Some(33_300_000_000_000), 0.005),
            mk(5, "parallel_fs", 2e9, 1_000_000, 1_000_000, None, 0.001),
        ]
    }

    pub(crate) fn default_value_params() -> ValueScoreParams {
        ValueScoreParams {
            recompute_cost_per_token_ns: 350_000.0,
            gpu_hour_dollars: 2.0,
            expected_residency_hours: 0.0005,
            promotion_thresholds: vec![7.56e-5, 4.50e-5, 3.43e-5, 1.95e-5, 7.88e-6, -1.0],
        }
    }

    fn meta(id: u64, size: u64) -> BlockMeta {
        BlockMeta {
            block_id: BlockId(id),
            session_id: "s".into(),
            block_type: BlockType::UserContext,
            token_span: TokenSpan::new(0, 512),
            size_bytes: size,
            content_hash: ContentHash([0; 32]),
            ref_count: 1,
            last_access: SimTime::ZERO,
            resident_tier: None,
            layer_set: LayerSet::All,
        }
    }

    fn hierarchy() -> Hierarchy {
        Hierarchy::new(default_specs()).unwrap()
    }

    // ── Transfer model ──────────────────────────────────────────────────

    #[test]
    fn nvme_two_megabyte_transfer() {
        let specs = default_specs();
        // 10 us fixed + 2e6 B / 12 GB/s = 166,667 ns, hand-computed.
        assert_eq!(transfer_time_ns(&specs[3], 2_000_000), 176_667);
    }

    #[test]
    fn zero_size_transfer_costs_base_latency() {
        let specs = default_specs();
        assert_eq!(transfer_time_ns(&specs[0], 0), 100);
        assert_eq!(transfer_time_ns(&specs[4], 0), 1_000);
    }

    #[test]
    fn rdma_latency_is_piecewise_in_message_size() {
        let specs = default_specs();
        let rdma = &specs[4];
        assert_eq!(effective_latency_ns(rdma, 4096), 1_000.0);
        assert_eq!(effective_latency_ns(rdma, 512), 1_000.0); // clamped below
        assert_eq!(effective_latency_ns(rdma, 16 * 1024 * 1024), 100_000.0);
        assert_eq!(effective_latency_ns(rdma, 64 * 1024 * 1024), 100_000.0); // clamped above
        // geometric midpoint of the window (2^18) sits at the latency midpoint
        let mid = effective_latency_ns(rdma, 262_144);
        assert!((mid - 50_500.0).abs() < 1e-6, "mid = {mid}");
    }

    #[test]
    fn fixed_latency_tiers_ignore_size_for_latency() {
        let specs = default_specs();
        assert_eq!(effective_latency_ns(&specs[1], 1), 3_000.0);
        assert_eq!(effective_latency_ns(&specs[1], 1 << 30), 3_000.0);
    }

    proptest! {
        #[test]
        fn transfer_time_strictly_increases_with_size(size in 1u64..1 << 40, tier in 0usize..6) {
            let specs = default_specs();
            let a = transfer_time_exact_ns(&specs[tier], size);
            let b = transfer_time_exact_ns(&specs[tier], size + 1);
            prop_assert!(b > a);
        }
    }

    // ── Read / write / evict ────────────────────────────────────────────

    #[test]
    fn write_then_read_hits_and_updates_recency() {
        let mut h = hierarchy();
        h.write_block(1, meta(7, 1024), SimTime::ZERO).unwrap();
        let (m, done) = h.read_block(1, BlockId(7), SimTime::from_nanos(50)).unwrap();
        assert_eq!(m.last_access, SimTime::from_nanos(50));
        // 3 us latency + 1024 B / 204 GB/s = 5 ns
        assert_eq!(done, SimTime::from_nanos(50 + 3_005));
        assert_eq!(h.tier(1).hit_count, 1);
    }

    #[test]
    fn read_miss_counts_but_is_not_an_error() {
        let mut h = hierarchy();
        assert!(h.read_block(0, BlockId(1), SimTime::ZERO).is_none());
        assert_eq!(h.tier(0).miss_count, 1);
    }

    #[test]
    fn write_reports_exact_shortfall() {
        let mut h = hierarchy();
        h.write_block(0, meta(1, 39_999_999_000), SimTime::ZERO).unwrap();
        let err = h.write_block(0, meta(2, 2_000), SimTime::ZERO).unwrap_err();
        assert_eq!(err, TierError::NeedsEviction { tier: 0, bytes_short: 1_000 });
    }

    #[test]
    fn double_residency_is_rejected() {
        let mut h = hierarchy();
        h.write_block(0, meta(1, 10), SimTime::ZERO).unwrap();
        let err = h.write_block(2, meta(1, 10), SimTime::ZERO).unwrap_err();
        assert_eq!(err, TierError::AlreadyResident(BlockId(1), 0));
    }

    #[test]
    fn evict_frees_bytes() {
        let mut h = hierarchy();
        h.write_block(0, meta(1, 500), SimTime::ZERO).unwrap();
        let m = h.evict_block(0, BlockId(1)).unwrap();
        assert_eq!(m.resident_tier, None);
        assert_eq!(h.tier(0).used_bytes, 0);
        assert_eq!(h.tier_of(BlockId(1)), None);
        h.audit().unwrap();
    }

    #[test]
    fn unbounded_bottom_tier_absorbs_anything() {
        let mut h = hierarchy();
        h.write_block(5, meta(1, u64::MAX / 4), SimTime::ZERO).unwrap();
        assert_eq!(h.tier(5).headroom(), u64::MAX);
        h.audit().unwrap();
    }

    // ── Value scoring and placement ─────────────────────────────────────

    #[test]
    fn value_score_dollars_hand_check() {
        // 512 tokens at 350 us recompute each, $2/GPU-hour:
        // recompute = 512 * 350e3 * 2 / 3.6e12 = 9.9556e-5 dollars.
        // Tier-0 rent for ~36 MB over 0.0005 h at $0.50/GB-h = 8.9948e-6.
        let specs = default_specs();
        let params = default_value_params();
        let m = meta(1, 35_979_264);
        let s = value_score(1.0, &m, &specs[0], &params);
        assert!((s - (9.9555555e-5 - 8.994816e-6)).abs() < 1e-10, "got {s}");
        // zero reuse probability leaves pure negative rent
        let s0 = value_score(0.0, &m, &specs[0], &params);
        assert!((s0 + 8.994816e-6).abs() < 1e-12);
    }

    #[test]
    fn storage_rent_shrinks_down_the_hierarchy() {
        let specs = default_specs();
        let params = default_value_params();
        let m = meta(1, 35_979_264);
        let scores: Vec<f64> = specs.iter().map(|t| value_score(0.6, &m, t, &params)).collect();
        assert!(scores.windows(2).all(|w| w[0] < w[1]), "{scores:?}");
    }

    #[test]
    fn placement_spreads_by_reuse_probability() {
        let h = hierarchy();
        let params = default_value_params();
        let m = meta(1, 35_979_264);
        assert_eq!(h.place(&m, 0.9, &params), 0);
        assert_eq!(h.place(&m, 0.7, &params), 1); // calibration anchor
        assert_eq!(h.place(&m, 0.5, &params), 1); // unobserved prior hedges in DRAM
        assert_eq!(h.place(&m, 0.1, &params), 4);
        assert_eq!(h.place(&m, 0.0, &params), 5); // fallback: slowest enabled
    }

    #[test]
    fn placement_skips_disabled_tiers() {
        let mut h = hierarchy();
        h.disable_tier(0, SimTime::ZERO).unwrap();
        let params = default_value_params();
        let m = meta(1, 35_979_264);
        assert_eq!(h.place(&m, 0.99, &params), 1);
    }

    #[test]
    fn threshold_monotonicity_is_validated() {
        let mut p = default_value_params();
        p.validate(6).unwrap();
        p.promotion_thresholds[2] = 1.0;
        assert!(p.validate(6).is_err());
        p.promotion_thresholds.truncate(3);
        assert!(p.validate(6).is_err());
    }

    // ── Asynchronous migration ──────────────────────────────────────────

    #[test]
    fn promotion_completion_is_read_plus_write_leg() {
        let mut h = hierarchy();
        h.write_block(3, meta(1, 4_000_000), SimTime::ZERO).unwrap();
        let done = h.promote(BlockId(1), 3, 0, SimTime::from_nanos(1_000)).unwrap();
        // read leg 10,000 + 333,333; write leg 100 + 1,194 → 344,627 total
        assert_eq!(done, SimTime::from_nanos(1_000 + 344_627));
    }

    #[test]
    fn block_serves_reads_from_source_until_completion() {
        let mut h = hierarchy();
        h.write_block(3, meta(1, 4_000_000), SimTime::ZERO).unwrap();
        let done = h.promote(BlockId(1), 3, 0, SimTime::ZERO).unwrap();
        let before = SimTime::from_nanos(done.nanos() - 1);
        h.complete_due(before);
        assert_eq!(h.tier_of(BlockId(1)), Some(3));
        assert!(h.read_block(3, BlockId(1), before).is_some());
        assert!(h.read_block(0, BlockId(1), before).is_none()); // strict: miss at destination
        h.complete_due(done);
        assert_eq!(h.tier_of(BlockId(1)), Some(0));
        assert_eq!(h.tier(0).promotion_count, 1);
        assert_eq!(h.tier(0).reserved_bytes, 0);
        h.audit().unwrap();
    }

    #[test]
    fn same_tier_promotion_is_a_zero_time_noop() {
        let mut h = hierarchy();
        h.write_block(2, meta(1, 100), SimTime::ZERO).unwrap();
        let now = SimTime::from_nanos(5);
        assert_eq!(h.promote(BlockId(1), 2, 2, now).unwrap(), now);
        assert!(!h.is_in_flight(BlockId(1)));
    }

    #[test]
    fn reservation_blocks_oversubscription() {
        let mut h = hierarchy();
        h.write_block(1, meta(1, 30_000_000_000), SimTime::ZERO).unwrap();
        h.write_block(2, meta(2, 20_000_000_000), SimTime::ZERO).unwrap();
        h.promote(BlockId(1), 1, 0, SimTime::ZERO).unwrap();
        // 30 GB reserved at tier 0; 20 GB more will not fit under 40 GB cap.
        let err = h.promote(BlockId(2), 2, 0, SimTime::ZERO).unwrap_err();
        assert!(matches!(err, TierError::NeedsEviction { tier: 0, .. }));
        h.audit().unwrap();
    }

    #[test]
    fn migration_cancels_if_block_moved_meanwhile() {
        let mut h = hierarchy();
        h.write_block(3, meta(1, 4_000_000), SimTime::ZERO).unwrap();
        let done = h.promote(BlockId(1), 3, 0, SimTime::ZERO).unwrap();
        h.move_block(BlockId(1), 3, 4, SimTime::from_nanos(1)).unwrap();
        let events = h.complete_due(done);
        assert!(events.is_empty());
        assert_eq!(h.tier_of(BlockId(1)), Some(4));
        assert_eq!(h.tier(0).reserved_bytes, 0);
        h.audit().unwrap();
    }

    // ── Disable and redistribute ────────────────────────────────────────

    #[test]
    fn disable_demotes_residents_to_next_slower_tier() {
        let mut h = hierarchy();
        for i in 0..3 {
            h.write_block(2, meta(i, 1_000), SimTime::ZERO).unwrap();
        }
        let events = h.disable_tier(2, SimTime::from_nanos(10)).unwrap();
        assert_eq!(events.len(), 3);
        assert!(events.iter().all(|e| e.to == Some(3)));
        assert_eq!(h.tier(3).resident.len(), 3);
        assert_eq!(h.tier(3).demotion_count, 3);
        assert!(h.tier(2).resident.is_empty());
        h.audit().unwrap();
    }

    #[test]
    fn disable_cascades_past_full_tiers() {
        let mut specs = default_specs();
        specs[3].capacity_bytes = Some(1_500); // room for one block only
        let mut h = Hierarchy::new(specs).unwrap();
        for i in 0..3 {
            h.write_block(2, meta(i, 1_000), SimTime::ZERO).unwrap();
        }
        let events = h.disable_tier(2, SimTime::ZERO).unwrap();
        let dests: Vec<_> = events.iter().map(|e| e.to).collect();
        assert_eq!(dests, vec![Some(3), Some(4), Some(4)]);
        h.audit().unwrap();
    }

    #[test]
    fn disable_bottom_tier_climbs_upward() {
        let mut h = hierarchy();
        h.write_block(5, meta(1, 1_000), SimTime::ZERO).unwrap();
        let events = h.disable_tier(5, SimTime::ZERO).unwrap();
        assert_eq!(events[0].to, Some(4)); // nothing below tier 5; nearest enabled above wins
        h.audit().unwrap();
    }

    #[test]
    fn disable_twice_is_idempotent() {
        let mut h = hierarchy();
        h.write_block(2, meta(1, 10), SimTime::ZERO).unwrap();
        assert_eq!(h.disable_tier(2, SimTime::ZERO).unwrap().len(), 1);
        assert!(h.disable_tier(2, SimTime::ZERO).unwrap().is_empty());
    }

    #[test]
    fn writes_to_disabled_tier_fail() {
        let mut h = hierarchy();
        h.disable_tier(1, SimTime::ZERO).unwrap();
        assert_eq!(
            h.write_block(1, meta(1, 10), SimTime::ZERO).unwrap_err(),
            TierError::TierDisabled(1)
        );
    }

    #[test]
    fn capacity_totals_follow_enabled_set() {
        let mut h = hierarchy();
        assert_eq!(h.total_capacity(), (38_000_000_000_000, true));
        h.disable_tier(5, SimTime::ZERO).unwrap();
        assert_eq!(h.total_capacity(), (38_000_000_000_000, false));
        h.disable_tier(4, SimTime::ZERO).unwrap();
        assert_eq!(h.total_capacity(), (4_700_000_000_000, false));
    }

    // ── Accounting under churn ──────────────────────────────────────────

    #[test]
    fn audit_holds_across_mixed_operation_sequence() {
        let mut h = hierarchy();
        let mut now = SimTime::ZERO;
        for i in 0..50u64 {
            now = now.after(1_000_000);
            h.complete_due(now);
            let tier = (i % 4) as u8 + 1;
            h.write_block(tier, meta(i, 1_000 + i * 13), now).unwrap();
            if i % 3 == 0 {
                h.promote(BlockId(i), tier, tier - 1, now).unwrap();
            }
            if i % 7 == 0 && i > 0 {
                let _ = h.evict_block((i % 4) as u8 + 1, BlockId(i - 1));
            }
            h.audit().unwrap();
        }
        h.complete_due(SimTime::from_nanos(u64::MAX));
        h.audit().unwrap();
    }
}
