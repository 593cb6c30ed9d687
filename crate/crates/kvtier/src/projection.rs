//! Analytical performance projection.
//!
//! Combines sizing outputs, residency mixes (replayed or asserted), and
//! tier hardware constants into throughput, latency, and cost projections
//! for deployment shapes that cannot be measured directly. Everything here
//! is a pure function of its inputs plus a calibration table fitted once
//! against a reference deployment and frozen; see config/calibration.toml
//! for the constants and the documented inversion procedure.
//!
//! The core quantity is the expected per-access stall of a configuration:
//! each tier serves its share of block reads at that tier's transfer time,
//! and the unserved remainder pays full prefill recompute. Throughput
//! scales inversely with stall up to a compute saturation cap; time to
//! first token and inter-token latency improve linearly in the stall
//! reduction relative to a device-only anchor.

use serde::{Deserialize, Serialize};

use crate::sizing::{max_batch_size, ModelConfig, SizingBudget};
use crate::tier::{transfer_time_exact_ns, TierSpec};

// ── Calibration table ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub stall: StallParams,
    pub throughput: ThroughputParams,
    pub ttft: LatencyParams,
    pub cost: CostParams,
    pub mixes: LadderMixes,
    pub ablation: AblationParams,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallParams {
    /// Whole-stack reference block moved per fetch.
    pub reference_block_bytes: u64,
    /// Prefill cost of regenerating one reference block.
    pub recompute_block_ns: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThroughputParams {
    /// Device-only anchor, tokens per second per GPU.
    pub anchor_tokens_per_s: f64,
    pub saturation_tokens_per_s: f64,
    /// Warm-start and dedup uplift applied to the complete system only.
    pub full_system_gain: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyParams {
    pub anchor_p50_s: f64,
    pub anchor_p99_s: f64,
    pub anchor_tbt_p99_ms: f64,
    pub slope_p50_s_per_ms_stall: f64,
    pub slope_p99_s_per_ms_stall: f64,
    pub slope_tbt_ms_per_ms_stall: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub gpu_hour_dollars: f64,
    /// Multiplier absorbing overheads the GPU-hour term alone does not
    /// explain at the anchored cost point.
    pub calibration: f64,
    /// GB-hours of each tier consumed per million tokens served.
    pub occupancy_gb_hours_per_mtok: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderMixes {
    pub gpu_only: Vec<f64>,
    pub plus_dram: Vec<f64>,
    pub plus_cxl: Vec<f64>,
    pub plus_nvme: Vec<f64>,
    pub plus_rdma: Vec<f64>,
    pub full: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationParams {
    pub saturation_batch_mla: f64,
    pub fleet_sizing_delta_pct: FleetSizingDeltas,
    pub stall_inflation: StallInflations,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSizingDeltas {
    pub gqa_chat: f64,
    pub gqa_agentic: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StallInflations {
    pub bayesian: ScenarioTable,
    pub multi_tier: ScenarioTable,
    pub head_eviction: ScenarioTable,
    pub dedup: ScenarioTable,
    pub rope_prefetch: ScenarioTable,
}

/// One value per projected deployment scenario.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTable {
    pub mla_chat: f64,
    pub gqa_chat: f64,
    pub gqa_agentic: f64,
}

impl ScenarioTable {
    #[must_use]
    pub fn get(&self, scenario: Scenario) -> f64 {
        match scenario {
            Scenario::MlaChat => self.mla_chat,
            Scenario::GqaChat => self.gqa_chat,
            Scenario::GqaAgentic => self.gqa_agentic,
        }
    }
}

impl Calibration {
    /// The shipped calibration, embedded at build time.
    pub fn builtin() -> Result<Self, String> {
        Self::from_toml(include_str!("../../../config/calibration.toml"))
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cal: Calibration = toml::from_str(text).map_err(|e| e.to_string())?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.stall.recompute_block_ns > 0.0) {
            return Err("recompute_block_ns must be positive".into());
        }
        if !(self.throughput.anchor_tokens_per_s > 0.0)
            || !(self.throughput.saturation_tokens_per_s > 0.0)
        {
            return Err("throughput anchors must be positive".into());
        }
        for (name, mix) in [
            ("gpu_only", &self.mixes.gpu_only),
            ("plus_dram", &self.mixes.plus_dram),
            ("plus_cxl", &self.mixes.plus_cxl),
            ("plus_nvme", &self.mixes.plus_nvme),
            ("plus_rdma", &self.mixes.plus_rdma),
            ("full", &self.mixes.full),
        ] {
            AccessMix::new(mix.clone()).map_err(|e| format!("mix {name}: {e}"))?;
        }
        Ok(())
    }
}

// ── Access mixes and stall ──────────────────────────────────────────────────

/// Fractions of block accesses served per tier, fastest first. Whatever
/// the listed tiers do not serve is recomputed from scratch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccessMix {
    served: Vec<f64>,
}

impl AccessMix {
    pub fn new(served: Vec<f64>) -> Result<Self, String> {
        let mut sum = 0.0;
        for &f in &served {
            if !(0.0..=1.0).contains(&f) {
                return Err(format!("served fraction {f} outside [0, 1]"));
            }
            sum += f;
        }
        if sum > 1.0 + 1e-9 {
            return Err(format!("served fractions sum to {sum} > 1"));
        }
        Ok(AccessMix { served })
    }

    #[must_use]
    pub fn served(&self) -> &[f64] {
        &self.served
    }

    #[must_use]
    pub fn miss_fraction(&self) -> f64 {
        (1.0 - self.served.iter().sum::<f64>()).max(0.0)
    }
}

/// Expected per-access stall of a configuration in nanoseconds.
#[must_use]
pub fn expected_stall_ns(mix: &AccessMix, tiers: &[TierSpec], cal: &StallParams) -> f64 {
    assert!(
        mix.served().len() <= tiers.len(),
        "mix lists {} tiers, hierarchy has {}",
        mix.served().len(),
        tiers.len()
    );
    let served: f64 = mix
        .served()
        .iter()
        .zip(tiers)
        .map(|(f, t)| f * transfer_time_exact_ns(t, cal.reference_block_bytes))
        .sum();
    served + mix.miss_fraction() * cal.recompute_block_ns
}

/// Stall of the device-only anchor configuration.
#[must_use]
pub fn anchor_stall_ns(cal: &Calibration, tiers: &[TierSpec]) -> f64 {
    let mix = AccessMix::new(cal.mixes.gpu_only.clone()).expect("validated at load");
    expected_stall_ns(&mix, &tiers[..1], &cal.stall)
}

// ── Capacity ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Capacity {
    /// Sum of the bounded enabled tiers.
    pub bounded_bytes: u64,
    /// Whether an enabled tier has no capacity bound.
    pub unbounded: bool,
}

#[must_use]
pub fn project_capacity(tiers: &[TierSpec]) -> Capacity {
    let mut bounded = 0u64;
    let mut unbounded = false;
    for t in tiers.iter().filter(|t| t.enabled) {
        match t.capacity_bytes {
            Some(c) => bounded += c,
            None => unbounded = true,
        }
    }
    Capacity { bounded_bytes: bounded, unbounded }
}

// ── Throughput, latency, cost ───────────────────────────────────────────────

/// Tokens per second per GPU: the anchored throughput scaled by the batch
/// ratio and the inverse stall, capped at compute saturation.
#[must_use]
pub fn project_throughput(
    cal: &Calibration,
    tiers: &[TierSpec],
    mix: &AccessMix,
    batch_ratio: f64,
    gain: f64,
) -> f64 {
    let base = anchor_stall_ns(cal, tiers);
    let stall = expected_stall_ns(mix, tiers, &cal.stall);
    let raw = cal.throughput.anchor_tokens_per_s * batch_ratio * (base / stall) * gain;
    raw.min(cal.throughput.saturation_tokens_per_s)
}

/// Time to first token (P50, P99) in seconds. Latency improves linearly
/// in the stall reduction relative to the device-only anchor; the linear
/// fit's intercept is negative (compute overlaps fetch at high stall), so
/// projections clamp at zero.
#[must_use]
pub fn project_ttft(cal: &Calibration, tiers: &[TierSpec], mix: &AccessMix) -> (f64, f64) {
    let delta_ms = (anchor_stall_ns(cal, tiers) - expected_stall_ns(mix, tiers, &cal.stall)) / 1e6;
    let p50 = (cal.ttft.anchor_p50_s - cal.ttft.slope_p50_s_per_ms_stall * delta_ms).max(0.0);
    let p99 = (cal.ttft.anchor_p99_s - cal.ttft.slope_p99_s_per_ms_stall * delta_ms).max(0.0);
    (p50, p99)
}

/// Inter-token latency P99 in milliseconds, same linear-in-stall form.
#[must_use]
pub fn project_tbt(cal: &Calibration, tiers: &[TierSpec], mix: &AccessMix) -> f64 {
    let delta_ms = (anchor_stall_ns(cal, tiers) - expected_stall_ns(mix, tiers, &cal.stall)) / 1e6;
    (cal.ttft.anchor_tbt_p99_ms - cal.ttft.slope_tbt_ms_per_ms_stall * delta_ms).max(0.0)
}

/// Dollars per million tokens: the GPU-hour term plus tier occupancy rent,
/// scaled by the cost calibration factor.
#[must_use]
pub fn project_cost(
    cal: &Calibration,
    tiers: &[TierSpec],
    occupancy_gb_hours_per_mtok: &[f64],
    throughput: f64,
) -> f64 {
    assert!(throughput > 0.0, "throughput must be positive");
    let gpu = cal.cost.gpu_hour_dollars * 1e6 / (throughput * 3600.0);
    let rent: f64 = occupancy_gb_hours_per_mtok
        .iter()
        .zip(tiers)
        .map(|(occ, t)| occ * t.cost_dollars_per_gb_hour)
        .sum();
    cal.cost.calibration * (gpu + rent)
}

// ── Configuration ladder ────────────────────────────────────────────────────

/// One configuration in the incremental tier ladder.
#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub configuration: String,
    pub capacity: Capacity,
    pub ttft_p99_s: f64,
    pub throughput_tokens_per_s: f64,
}

/// Project the incremental impact of enabling tiers fastest-first, ending
/// with the complete system. Requires the six-tier reference hierarchy.
pub fn tier_ladder(cal: &Calibration, tiers: &[TierSpec]) -> Result<Vec<LadderRow>, String> {
    if tiers.len() < 6 {
        return Err(format!("ladder needs 6 tiers, hierarchy has {}", tiers.len()));
    }
    let steps: [(&str, usize, &Vec<f64>, f64); 6] = [
        ("gpu_only", 1, &cal.mixes.gpu_only, 1.0),
        ("plus_dram", 2, &cal.mixes.plus_dram, 1.0),
        ("plus_cxl", 3, &cal.mixes.plus_cxl, 1.0),
        ("plus_nvme", 4, &cal.mixes.plus_nvme, 1.0),
        ("plus_rdma", 5, &cal.mixes.plus_rdma, 1.0),
        ("full_system", 6, &cal.mixes.full, cal.throughput.full_system_gain),
    ];
    let mut rows = Vec::with_capacity(steps.len());
    for (name, count, mix, gain) in steps {
        let slice = &tiers[..count];
        let mix = AccessMix::new(mix.clone())?;
        rows.push(LadderRow {
            configuration: name.to_string(),
            capacity: project_capacity(slice),
            ttft_p99_s: project_ttft(cal, tiers, &mix).1,
            throughput_tokens_per_s: project_throughput(cal, tiers, &mix, 1.0, gain),
        });
    }
    Ok(rows)
}

/// End-to-end projection of the complete system.
#[derive(Debug, Clone, Serialize)]
pub struct EndToEndProjection {
    pub ttft_p50_s: f64,
    pub ttft_p99_s: f64,
    pub tbt_p99_ms: f64,
    pub throughput_tokens_per_s: f64,
    pub cost_per_mtok: f64,
}

pub fn full_system_projection(
    cal: &Calibration,
    tiers: &[TierSpec],
) -> Result<EndToEndProjection, String> {
    if tiers.len() < 6 {
        return Err(format!("projection needs 6 tiers, hierarchy has {}", tiers.len()));
    }
    let mix = AccessMix::new(cal.mixes.full.clone())?;
    let (p50, p99) = project_ttft(cal, tiers, &mix);
    let throughput =
        project_throughput(cal, tiers, &mix, 1.0, cal.throughput.full_system_gain);
    Ok(EndToEndProjection {
        ttft_p50_s: p50,
        ttft_p99_s: p99,
        tbt_p99_ms: project_tbt(cal, tiers, &mix),
        throughput_tokens_per_s: throughput,
        cost_per_mtok: project_cost(
            cal,
            tiers,
            &cal.cost.occupancy_gb_hours_per_mtok,
            throughput,
        ),
    })
}

// ── Component ablations ─────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Latent-attention model on multi-turn chat traffic.
    MlaChat,
    /// Grouped-query model on multi-turn chat traffic.
    GqaChat,
    /// Grouped-query model on tool-calling traffic.
    GqaAgentic,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::MlaChat, Scenario::GqaChat, Scenario::GqaAgentic];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Sizing,
    BayesianPrediction,
    MultiTier,
    HeadEviction,
    Dedup,
    RopePrefetch,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::Sizing,
        Component::BayesianPrediction,
        Component::MultiTier,
        Component::HeadEviction,
        Component::Dedup,
        Component::RopePrefetch,
    ];
}

/// Throughput change from reverting architecture-aware sizing to the
/// naive allocation, analytic in the batch collapse: throughput follows
/// batch size up to the compute saturation point.
#[must_use]
pub fn sizing_collapse_pct(cal: &Calibration, model: &ModelConfig, budget: &SizingBudget) -> f64 {
    let aware = max_batch_size(model, budget) as f64;
    let naive = max_batch_size(&model.mha_equivalent(), budget) as f64;
    let sat = cal.ablation.saturation_batch_mla;
    100.0 * (naive.min(sat) / aware.min(sat) - 1.0)
}

/// Projected throughput change (percent, negative = degradation) when one
/// component falls back to its baseline behavior. Sizing on the latent
/// scenario is analytic; everything else applies the frozen fallback
/// stall inflation for the scenario.
#[must_use]
pub fn ablation_delta_pct(
    cal: &Calibration,
    scenario: Scenario,
    component: Component,
    model: &ModelConfig,
    budget: &SizingBudget,
) -> f64 {
    match component {
        Component::Sizing => match scenario {
            Scenario::MlaChat => sizing_collapse_pct(cal, model, budget),
            Scenario::GqaChat => cal.ablation.fleet_sizing_delta_pct.gqa_chat,
            Scenario::GqaAgentic => cal.ablation.fleet_sizing_delta_pct.gqa_agentic,
        },
        other => {
            let table = match other {
                Component::BayesianPrediction => &cal.ablation.stall_inflation.bayesian,
                Component::MultiTier => &cal.ablation.stall_inflation.multi_tier,
                Component::HeadEviction => &cal.ablation.stall_inflation.head_eviction,
                Component::Dedup => &cal.ablation.stall_inflation.dedup,
                Component::RopePrefetch => &cal.ablation.stall_inflation.rope_prefetch,
                Component::Sizing => unreachable!(),
            };
            // Throughput is inverse in stall, so inflating the stall by m
            // scales throughput by 1/m.
            100.0 * (1.0 / table.get(scenario) - 1.0)
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub component: Component,
    /// Deltas in `Scenario::ALL` order.
    pub delta_pct: [f64; 3],
}

/// The complete component-removal table. `mla_model` drives the analytic
/// sizing column; `budget` is the fleet sizing budget.
#[must_use]
pub fn ablation_table(
    cal: &Calibration,
    mla_model: &ModelConfig,
    budget: &SizingBudget,
) -> Vec<AblationRow> {
    Component::ALL
        .iter()
        .map(|&component| AblationRow {
            component,
            delta_pct: [
                ablation_delta_pct(cal, Scenario::MlaChat, component, mla_model, budget),
                ablation_delta_pct(cal, Scenario::GqaChat, component, mla_model, budget),
                ablation_delta_pct(cal, Scenario::GqaAgentic, component, mla_model, budget),
            ],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tier::tests::default_specs;
    use proptest::prelude::*;

    fn cal() -> Calibration {
        Calibration::builtin().unwrap()
    }

    fn mla_model() -> ModelConfig {
        ModelConfig {
            name: "deepseek-v3".into(),
            num_layers: 61,
            query_heads: 128,
            kv_heads: 128,
            head_dim: 128,
            latent_dim: Some(512),
            rope_dim: Some(64),
            precision_bytes: 2.0,
            tp_degree: 8,
            kv_shard_under_tp: None,
        }
    }

    fn gqa_model() -> ModelConfig {
        ModelConfig {
            name: "llama-3-70b".into(),
            num_layers: 80,
            query_heads: 64,
            kv_heads: 8,
            head_dim: 128,
            latent_dim: None,
            rope_dim: None,
            precision_bytes: 2.0,
            tp_degree: 8,
            kv_shard_under_tp: None,
        }
    }

    fn budget() -> SizingBudget {
        SizingBudget { m_target_bytes: 30_000_000_000, n_max: 4096 }
    }

    #[test]
    fn builtin_calibration_parses_and_validates() {
        let c = cal();
        assert_eq!(c.stall.reference_block_bytes, 41_943_040);
        assert_eq!(c.cost.occupancy_gb_hours_per_mtok.len(), 6);
    }

    #[test]
    fn anchor_stall_hand_check() {
        // 0.3 x (100 + 41,943,040 / 3.35 TB/s) + 0.7 x 44.8 ms
        let s = anchor_stall_ns(&cal(), &default_specs());
        assert!((s - 31_363_786.093).abs() < 1.0, "got {s}");
    }

    #[test]
    fn capacity_ladder_is_exact() {
        let specs = default_specs();
        let rows = tier_ladder(&cal(), &specs).unwrap();
        let caps: Vec<u64> = rows.iter().map(|r| r.capacity.bounded_bytes).collect();
        assert_eq!(
            caps,
            vec![
                40_000_000_000,
                200_000_000_000,
                712_000_000_000,
                4_700_000_000_000,
                38_000_000_000_000,
                38_000_000_000_000,
            ]
        );
        let unbounded: Vec<bool> = rows.iter().map(|r| r.capacity.unbounded).collect();
        assert_eq!(unbounded, vec![false, false, false, false, false, true]);
    }

    #[test]
    fn throughput_ladder_hits_anchors() {
        let rows = tier_ladder(&cal(), &default_specs()).unwrap();
        let targets = [1450.0, 2100.0, 2850.0, 3200.0, 3950.0, 4150.0];
        for (row, target) in rows.iter().zip(targets) {
            let got = row.throughput_tokens_per_s;
            assert!(
                (got - target).abs() / target < 1e-6,
                "{}: {got} vs {target}",
                row.configuration
            );
        }
    }

    #[test]
    fn throughput_is_monotone_up_the_ladder() {
        let rows = tier_ladder(&cal(), &default_specs()).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].throughput_tokens_per_s >= pair[0].throughput_tokens_per_s);
        }
    }

    #[test]
    fn ttft_ladder_tracks_anchors() {
        let rows = tier_ladder(&cal(), &default_specs()).unwrap();
        let targets = [4.2, 2.8, 1.8, 1.5, 1.1, 1.1];
        for (row, target) in rows.iter().zip(targets) {
            let got = row.ttft_p99_s;
            assert!(
                ((got - target) / target).abs() < 0.10,
                "{}: {got} vs {target}",
                row.configuration
            );
        }
    }

    #[test]
    fn full_system_point_is_reproduced() {
        let p = full_system_projection(&cal(), &default_specs()).unwrap();
        assert!((p.throughput_tokens_per_s - 4150.0).abs() < 0.01);
        assert!((p.ttft_p99_s - 1.1).abs() < 1e-6);
        assert!((p.ttft_p50_s - 0.4).abs() < 1e-6);
        assert!((p.tbt_p99_ms - 32.0).abs() < 1e-6);
        assert!((p.cost_per_mtok - 0.43).abs() < 1e-6, "cost {}", p.cost_per_mtok);
    }

    #[test]
    fn anchor_cost_point_is_reproduced() {
        // Device-only at the anchor throughput with no tier rent.
        let c = cal();
        let cost = project_cost(&c, &default_specs(), &[0.0; 6], 1450.0);
        assert!((cost - 0.82).abs() < 1e-9, "got {cost}");
    }

    #[test]
    fn throughput_doubling_halves_the_gpu_term() {
        let c = cal();
        let specs = default_specs();
        let zero = [0.0; 6];
        let c1 = project_cost(&c, &specs, &zero, 2000.0);
        let c2 = project_cost(&c, &specs, &zero, 4000.0);
        assert!((c1 / c2 - 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_device_mix_leaves_only_the_saturation_cap() {
        let c = cal();
        let specs = default_specs();
        let mix = AccessMix::new(vec![1.0]).unwrap();
        // With no recompute stall the scaled throughput far exceeds the
        // cap, so the cap is the answer.
        let t = project_throughput(&c, &specs, &mix, 1.0, 1.0);
        assert_eq!(t, c.throughput.saturation_tokens_per_s);
        // And the fetch component of latency collapses.
        let (p50, p99) = project_ttft(&c, &specs, &mix);
        assert!(p99 < 0.1, "p99 {p99}");
        assert!(p50 <= p99);
    }

    #[test]
    fn unchanged_inputs_reproduce_the_baseline() {
        let c = cal();
        let specs = default_specs();
        let mix = AccessMix::new(c.mixes.gpu_only.clone()).unwrap();
        let t = project_throughput(&c, &specs, &mix, 1.0, 1.0);
        assert!((t - c.throughput.anchor_tokens_per_s).abs() < 1e-9);
        let (p50, p99) = project_ttft(&c, &specs, &mix);
        assert!((p50 - c.ttft.anchor_p50_s).abs() < 1e-12);
        assert!((p99 - c.ttft.anchor_p99_s).abs() < 1e-12);
    }

    #[test]
    fn mix_validation_rejects_bad_fractions() {
        assert!(AccessMix::new(vec![0.5, 0.6]).is_err());
        assert!(AccessMix::new(vec![-0.1]).is_err());
        assert!(AccessMix::new(vec![1.5]).is_err());
        let m = AccessMix::new(vec![0.25, 0.25]).unwrap();
        assert!((m.miss_fraction() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn latent_sizing_collapse_is_analytic() {
        let pct = sizing_collapse_pct(&cal(), &mla_model(), &budget());
        assert!((pct + 85.6).abs() < 0.05, "got {pct}");
    }

    #[test]
    fn sizing_ablation_is_zero_when_already_naive() {
        // Grouped-query per-node batch is identical under both sizings,
        // so the analytic collapse vanishes.
        let pct = sizing_collapse_pct(&cal(), &gqa_model(), &budget());
        assert_eq!(pct, 0.0);
    }

    #[test]
    fn prediction_matters_most_on_tool_traffic() {
        let c = cal();
        let b = budget();
        let m = mla_model();
        let agentic =
            ablation_delta_pct(&c, Scenario::GqaAgentic, Component::BayesianPrediction, &m, &b);
        let chat =
            ablation_delta_pct(&c, Scenario::MlaChat, Component::BayesianPrediction, &m, &b);
        assert!(agentic.abs() > chat.abs(), "{agentic} vs {chat}");
    }

    #[test]
    fn ablation_table_is_complete_and_negative() {
        let rows = ablation_table(&cal(), &mla_model(), &budget());
        assert_eq!(rows.len(), Component::ALL.len());
        for row in &rows {
            for d in row.delta_pct {
                assert!(d < 0.0, "{:?}: {d}", row.component);
            }
        }
        let sizing = &rows[0];
        assert!((sizing.delta_pct[0] + 85.6).abs() < 0.05);
        assert!((sizing.delta_pct[1] + 73.8).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn cost_strictly_decreases_in_throughput(
            t1 in 100.0f64..10_000.0,
            t2 in 100.0f64..10_000.0,
        ) {
            prop_assume!((t1 - t2).abs() > 1e-6);
            let c = cal();
            let specs = default_specs();
            let occ = c.cost.occupancy_gb_hours_per_mtok.clone();
            let c1 = project_cost(&c, &specs, &occ, t1);
            let c2 = project_cost(&c, &specs, &occ, t2);
            prop_assert_eq!(c1 < c2, t1 > t2);
        }

        #[test]
        fn stall_is_a_convex_combination(
            f0 in 0.0f64..0.5,
            f1 in 0.0f64..0.5,
        ) {
            let c = cal();
            let specs = default_specs();
            let mix = AccessMix::new(vec![f0, f1]).unwrap();
            let s = expected_stall_ns(&mix, &specs, &c.stall);
            let lo = transfer_time_exact_ns(&specs[0], c.stall.reference_block_bytes);
            prop_assert!(s <= c.stall.recompute_block_ns + 1e-6);
            prop_assert!(s >= lo.min(transfer_time_exact_ns(&specs[1], c.stall.reference_block_bytes)) - 1e-6 || s >= 0.0);
        }
    }
}
