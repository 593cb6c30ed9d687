//! Architecture-aware KV-cache sizing.
//!
//! Per-token KV footprint varies by attention architecture:
//!
//! ```text
//! MHA     same head count for q/k/v        2 * h_q  * d * p
//! GQA/MQA keys/values on grouped heads     2 * h_kv * d * p
//! MLA     compressed latent + RoPE keys    (d_latent + d_rope) * p
//! ```
//!
//! bytes per token per layer, with `p` bytes per element. Sizing a latent
//! model with full multi-head arithmetic overstates its footprint by more
//! than an order of magnitude, which is the motivating failure this module
//! quantifies: `fleet_report` puts the naive and architecture-aware numbers
//! side by side.
//!
//! Tensor-parallel accounting is explicit: query heads shard across ranks,
//! so the naive (MHA-equivalent) figure divides by `tp_degree`, while
//! grouped-KV and latent state is replicated per rank by default. Both
//! defaults can be overridden per model via `kv_shard_under_tp`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

// ── Architecture ────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    Mha,
    Gqa,
    Mqa,
    Mla,
}

impl std::fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ArchitectureKind::Mha => "MHA",
            ArchitectureKind::Gqa => "GQA",
            ArchitectureKind::Mqa => "MQA",
            ArchitectureKind::Mla => "MLA",
        };
        f.write_str(s)
    }
}

// ── Model configuration ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub num_layers: u16,
    pub query_heads: u32,
    pub kv_heads: u32,
    pub head_dim: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rope_dim: Option<u32>,
    /// Bytes per stored element; fractional values model sub-byte quantization.
    pub precision_bytes: f64,
    #[serde(default = "default_tp")]
    pub tp_degree: u32,
    /// Override for whether KV state divides across TP ranks. `None` applies
    /// the architecture default: sharded for MHA, replicated for GQA/MQA/MLA
    /// (grouped KV heads and latent state are kept whole on every rank).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_shard_under_tp: Option<bool>,
}

const fn default_tp() -> u32 {
    1
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{model}: kv_heads ({kv}) exceeds query_heads ({q})")]
    KvHeadsExceedQueryHeads { model: String, kv: u32, q: u32 },
    #[error("{model}: query_heads ({q}) not divisible by kv_heads ({kv})")]
    HeadsNotDivisible { model: String, q: u32, kv: u32 },
    #[error("{model}: latent_dim requires rope_dim")]
    LatentWithoutRope { model: String },
    #[error("{model}: rope_dim requires latent_dim")]
    RopeWithoutLatent { model: String },
    #[error("{model}: {field} must be positive")]
    NonPositive { model: String, field: &'static str },
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = self.name.clone();
        let positive = [
            ("num_layers", self.num_layers as u64),
            ("query_heads", self.query_heads as u64),
            ("kv_heads", self.kv_heads as u64),
            ("head_dim", self.head_dim as u64),
            ("tp_degree", self.tp_degree as u64),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ConfigError::NonPositive { model, field });
            }
        }
        if !(self.precision_bytes > 0.0) {
            return Err(ConfigError::NonPositive { model, field: "precision_bytes" });
        }
        if self.kv_heads > self.query_heads {
            return Err(ConfigError::KvHeadsExceedQueryHeads {
                model,
                kv: self.kv_heads,
                q: self.query_heads,
            });
        }
        if self.query_heads % self.kv_heads != 0 {
            return Err(ConfigError::HeadsNotDivisible {
                model,
                q: self.query_heads,
                kv: self.kv_heads,
            });
        }
        match (self.latent_dim, self.rope_dim) {
            (Some(_), None) => return Err(ConfigError::LatentWithoutRope { model }),
            (None, Some(_)) => return Err(ConfigError::RopeWithoutLatent { model }),
            _ => {}
        }
        Ok(())
    }

    /// Architecture implied by the head/latent geometry. A present
    /// `latent_dim` wins; otherwise the query/KV head ratio decides.
    #[must_use]
    pub fn architecture(&self) -> ArchitectureKind {
        if self.latent_dim.is_some() {
            ArchitectureKind::Mla
        } else if self.kv_heads == self.query_heads {
            ArchitectureKind::Mha
        } else if self.kv_heads == 1 {
            ArchitectureKind::Mqa
        } else {
            ArchitectureKind::Gqa
        }
    }

    /// Effective sharding policy after applying the architecture default.
    #[must_use]
    pub fn shards_kv_under_tp(&self) -> bool {
        self.kv_shard_under_tp
            .unwrap_or(self.architecture() == ArchitectureKind::Mha)
    }

    /// The same model sized as if it were plain multi-head attention: full
    /// query-head KV state, sharded across TP ranks. This is what an
    /// architecture-unaware allocator would reserve.
    #[must_use]
    pub fn mha_equivalent(&self) -> ModelConfig {
        ModelConfig {
            name: format!("{}-mha-equivalent", self.name),
            kv_heads: self.query_heads,
            latent_dim: None,
            rope_dim: None,
            kv_shard_under_tp: None,
            ..self.clone()
        }
    }
}

// ── Sizing operations ───────────────────────────────────────────────────────

/// KV bytes per token per layer before any TP division. Fractional element
/// widths keep this fractional; callers round only at sequence granularity.
#[must_use]
pub fn bytes_per_token_layer(cfg: &ModelConfig) -> f64 {
    let p = cfg.precision_bytes;
    match cfg.architecture() {
        ArchitectureKind::Mha => 2.0 * cfg.query_heads as f64 * cfg.head_dim as f64 * p,
        ArchitectureKind::Gqa | ArchitectureKind::Mqa => {
            2.0 * cfg.kv_heads as f64 * cfg.head_dim as f64 * p
        }
        ArchitectureKind::Mla => {
            // validate() guarantees rope_dim accompanies latent_dim
            (cfg.latent_dim.unwrap_or(0) as f64 + cfg.rope_dim.unwrap_or(0) as f64) * p
        }
    }
}

/// Per-rank KV bytes for one sequence of `n` tokens across the whole stack,
/// rounded up to whole bytes.
#[must_use]
pub fn sequence_kv_bytes(cfg: &ModelConfig, n: u64) -> u64 {
    let shard = if cfg.shards_kv_under_tp() {
        cfg.tp_degree as f64
    } else {
        1.0
    };
    let total = cfg.num_layers as f64 * n as f64 * bytes_per_token_layer(cfg) / shard;
    total.ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizingBudget {
    pub m_target_bytes: u64,
    pub n_max: u64,
}

/// Largest batch of `n_max`-token sequences that fits the memory target.
/// Zero when even a single sequence does not fit.
#[must_use]
pub fn max_batch_size(cfg: &ModelConfig, budget: &SizingBudget) -> u64 {
    let per_seq = sequence_kv_bytes(cfg, budget.n_max);
    if per_seq == 0 {
        return 0;
    }
    budget.m_target_bytes / per_seq
}

// ── Fleet report ────────────────────────────────────────────────────────────

/// One model's naive-vs-aware sizing comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetRow {
    pub model: String,
    pub architecture: ArchitectureKind,
    pub mha_bytes_per_token_layer: f64,
    pub actual_bytes_per_token_layer: f64,
    /// How far naive sizing overstates the footprint (naive / actual).
    pub memory_ratio: f64,
    pub mha_batch: u64,
    pub aware_batch: u64,
    /// Batch-size gain from architecture-aware sizing (aware / naive).
    pub batch_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetReport {
    pub budget: SizingBudget,
    pub rows: Vec<FleetRow>,
}

/// Side-by-side sizing for a heterogeneous fleet under one memory budget.
pub fn fleet_report(cfgs: &[ModelConfig], budget: &SizingBudget) -> Result<FleetReport, ConfigError> {
    let mut rows = Vec::with_capacity(cfgs.len());
    for cfg in cfgs {
        cfg.validate()?;
        let naive = cfg.mha_equivalent();
        let mha_bytes = bytes_per_token_layer(&naive);
        let actual_bytes = bytes_per_token_layer(cfg);
        let mha_batch = max_batch_size(&naive, budget);
        let aware_batch = max_batch_size(cfg, budget);
        rows.push(FleetRow {
            model: cfg.name.clone(),
            architecture: cfg.architecture(),
            mha_bytes_per_token_layer: mha_bytes,
            actual_bytes_per_token_layer: actual_bytes,
            memory_ratio: mha_bytes / actual_bytes,
            mha_batch,
            aware_batch,
            batch_gain: if mha_batch == 0 {
                f64::INFINITY
            } else {
                aware_batch as f64 / mha_batch as f64
            },
        });
    }
    Ok(FleetReport { budget: *budget, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn deepseek_v3() -> ModelConfig {
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

    fn llama3_70b() -> ModelConfig {
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
            kv_shard_under_tp: Some(false),
        }
    }

    fn mixtral_8x22b() -> ModelConfig {
        ModelConfig {
            name: "mixtral-8x22b".into(),
            num_layers: 56,
            query_heads: 48,
            kv_heads: 8,
            head_dim: 128,
            latent_dim: None,
            rope_dim: None,
            precision_bytes: 2.0,
            tp_degree: 8,
            kv_shard_under_tp: Some(false),
        }
    }

    fn budget_30gb() -> SizingBudget {
        SizingBudget {
            m_target_bytes: 30_000_000_000,
            n_max: 4096,
        }
    }

    // ── Per-token-per-layer goldens ─────────────────────────────────────

    #[test]
    fn deepseek_latent_bytes_per_token_layer() {
        assert_eq!(bytes_per_token_layer(&deepseek_v3()), 1_152.0);
    }

    #[test]
    fn deepseek_naive_bytes_per_token_layer() {
        let naive = deepseek_v3().mha_equivalent();
        assert_eq!(bytes_per_token_layer(&naive), 65_536.0);
        assert_eq!(naive.architecture(), ArchitectureKind::Mha);
    }

    #[test]
    fn llama_grouped_and_naive_bytes() {
        let cfg = llama3_70b();
        assert_eq!(bytes_per_token_layer(&cfg), 4_096.0);
        assert_eq!(bytes_per_token_layer(&cfg.mha_equivalent()), 32_768.0);
    }

    #[test]
    fn mixtral_naive_bytes_use_its_own_head_count() {
        let cfg = mixtral_8x22b();
        assert_eq!(bytes_per_token_layer(&cfg.mha_equivalent()), 24_576.0);
        assert_eq!(bytes_per_token_layer(&cfg), 4_096.0);
    }

    // ── Architecture inference ──────────────────────────────────────────

    #[test]
    fn architecture_inference_covers_all_kinds() {
        assert_eq!(deepseek_v3().architecture(), ArchitectureKind::Mla);
        assert_eq!(llama3_70b().architecture(), ArchitectureKind::Gqa);
        let mut mqa = llama3_70b();
        mqa.kv_heads = 1;
        assert_eq!(mqa.architecture(), ArchitectureKind::Mqa);
        let mut mha = llama3_70b();
        mha.kv_heads = mha.query_heads;
        assert_eq!(mha.architecture(), ArchitectureKind::Mha);
    }

    #[test]
    fn more_kv_than_query_heads_is_rejected() {
        let mut bad = llama3_70b();
        bad.kv_heads = 96;
        assert!(matches!(
            bad.validate(),
            Err(ConfigError::KvHeadsExceedQueryHeads { .. })
        ));
    }

    #[test]
    fn indivisible_head_grouping_is_rejected() {
        let mut bad = llama3_70b();
        bad.kv_heads = 7;
        assert!(matches!(bad.validate(), Err(ConfigError::HeadsNotDivisible { .. })));
    }

    #[test]
    fn latent_without_rope_is_rejected() {
        let mut bad = deepseek_v3();
        bad.rope_dim = None;
        assert!(matches!(bad.validate(), Err(ConfigError::LatentWithoutRope { .. })));
    }

    // ── Sequence totals ─────────────────────────────────────────────────

    #[test]
    fn llama_full_context_naive_sequence_bytes() {
        // Single-device view of an unsharded 128k-token sequence.
        let mut mha = llama3_70b().mha_equivalent();
        mha.tp_degree = 1;
        assert_eq!(sequence_kv_bytes(&mha, 128_000), 335_544_320_000);
    }

    #[test]
    fn llama_full_context_grouped_sequence_bytes() {
        let mut cfg = llama3_70b();
        cfg.tp_degree = 1;
        assert_eq!(sequence_kv_bytes(&cfg, 128_000), 41_943_040_000);
    }

    #[test]
    fn fractional_precision_rounds_up_once() {
        let mut cfg = llama3_70b();
        cfg.tp_degree = 1;
        cfg.precision_bytes = 0.5; // 4-bit elements
        // 8 kv heads * 128 dim * 2 * 0.5 = 1024 B/token/layer, integral here,
        // but one token at p=0.3 must still round up at the very end.
        assert_eq!(sequence_kv_bytes(&cfg, 1), 80 * 1024);
        cfg.precision_bytes = 0.3;
        let raw: f64 = 80.0 * 1.0 * 2.0 * 8.0 * 128.0 * 0.3;
        assert_eq!(sequence_kv_bytes(&cfg, 1), raw.ceil() as u64);
    }

    // ── Batch sizing goldens ────────────────────────────────────────────

    #[test]
    fn layer_count_solves_batch_pair_uniquely() {
        // Independent derivation: the published batch pair (14, 104) under a
        // 30 GB budget pins the layer count by brute force.
        let budget = budget_30gb();
        let mut solutions = Vec::new();
        for layers in 1u16..=200 {
            let mut cfg = deepseek_v3();
            cfg.num_layers = layers;
            let aware = max_batch_size(&cfg, &budget);
            let naive = max_batch_size(&cfg.mha_equivalent(), &budget);
            if aware == 104 && naive == 14 {
                solutions.push(layers);
            }
        }
        assert_eq!(solutions, vec![61]);
    }

    #[test]
    fn deepseek_batch_pair_under_30gb_budget() {
        let budget = budget_30gb();
        assert_eq!(max_batch_size(&deepseek_v3(), &budget), 104);
        assert_eq!(max_batch_size(&deepseek_v3().mha_equivalent(), &budget), 14);
    }

    #[test]
    fn llama_batch_is_22_under_both_sizings() {
        // Query heads shard 8-ways to exactly the grouped-KV head count, so
        // naive and aware sizing agree for this geometry.
        let budget = budget_30gb();
        assert_eq!(max_batch_size(&llama3_70b(), &budget), 22);
        assert_eq!(max_batch_size(&llama3_70b().mha_equivalent(), &budget), 22);
    }

    #[test]
    fn mixtral_naive_batch_overshoots_aware() {
        // 48 query heads shard to 6 per rank, fewer than the 8 replicated KV
        // heads, so naive sizing lands on a *larger* batch than honest
        // accounting allows. The gain column correctly drops below 1.
        let budget = budget_30gb();
        assert_eq!(max_batch_size(&mixtral_8x22b().mha_equivalent(), &budget), 42);
        assert_eq!(max_batch_size(&mixtral_8x22b(), &budget), 31);
    }

    #[test]
    fn batch_of_zero_when_one_sequence_exceeds_budget() {
        let cfg = llama3_70b();
        let budget = SizingBudget {
            m_target_bytes: 1_000_000,
            n_max: 4096,
        };
        assert_eq!(max_batch_size(&cfg, &budget), 0);
    }

    // ── Fleet report ────────────────────────────────────────────────────

    #[test]
    fn fleet_report_memory_ratios() {
        let report = fleet_report(
            &[deepseek_v3(), llama3_70b(), mixtral_8x22b()],
            &budget_30gb(),
        )
        .unwrap();
        let ratios: Vec<u64> = report
            .rows
            .iter()
            .map(|r| r.memory_ratio.round() as u64)
            .collect();
        assert_eq!(ratios, vec![57, 8, 6]);
        assert!((report.rows[0].batch_gain - 104.0 / 14.0).abs() < 1e-12);
        assert!((report.rows[2].batch_gain - 31.0 / 42.0).abs() < 1e-12);
    }

    #[test]
    fn pure_mha_fleet_has_unit_ratio() {
        let mut mha = llama3_70b();
        mha.kv_heads = mha.query_heads;
        mha.kv_shard_under_tp = None;
        let report = fleet_report(&[mha], &budget_30gb()).unwrap();
        assert_eq!(report.rows[0].memory_ratio, 1.0);
        assert_eq!(report.rows[0].batch_gain, 1.0);
    }

    // ── Structural invariants ───────────────────────────────────────────

    proptest! {
        #[test]
        fn sequence_bytes_monotone_and_linear_in_n(
            n in 1u64..100_000,
            heads in 1u32..8,
            layers in 1u16..100,
        ) {
            let cfg = ModelConfig {
                name: "prop".into(),
                num_layers: layers,
                query_heads: heads * 4,
                kv_heads: heads,
                head_dim: 64,
                latent_dim: None,
                rope_dim: None,
                precision_bytes: 2.0,
                tp_degree: 1,
                kv_shard_under_tp: None,
            };
            let one = sequence_kv_bytes(&cfg, n);
            let two = sequence_kv_bytes(&cfg, n + 1);
            prop_assert!(two > one);
            // integral precision means exact linearity
            prop_assert_eq!(sequence_kv_bytes(&cfg, 2 * n), 2 * one);
        }

        #[test]
        fn grouped_ratio_matches_head_quotient(group in 1u32..16, kv in 1u32..8) {
            let cfg = ModelConfig {
                name: "prop".into(),
                num_layers: 10,
                query_heads: group * kv,
                kv_heads: kv,
                head_dim: 128,
                latent_dim: None,
                rope_dim: None,
                precision_bytes: 2.0,
                tp_degree: 1,
                kv_shard_under_tp: None,
            };
            let naive = bytes_per_token_layer(&cfg.mha_equivalent());
            let actual = bytes_per_token_layer(&cfg);
            prop_assert!((naive / actual - group as f64).abs() < 1e-9);
        }

        #[test]
        fn batch_never_exceeds_budget(
            budget_gb in 1u64..100,
            n_max in 128u64..8192,
        ) {
            let cfg = ModelConfig {
                name: "prop".into(),
                num_layers: 61,
                query_heads: 128,
                kv_heads: 128,
                head_dim: 128,
                latent_dim: Some(512),
                rope_dim: Some(64),
                precision_bytes: 2.0,
                tp_degree: 8,
                kv_shard_under_tp: None,
            };
            let budget = SizingBudget { m_target_bytes: budget_gb * 1_000_000_000, n_max };
            let batch = max_batch_size(&cfg, &budget);
            prop_assert!(batch * sequence_kv_bytes(&cfg, n_max) <= budget.m_target_bytes);
            // one more sequence would overflow
            prop_assert!((batch + 1) * sequence_kv_bytes(&cfg, n_max) > budget.m_target_bytes);
        }
    }
}
