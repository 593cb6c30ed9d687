//! Prometheus text exposition for replay metrics.
//!
//! Batch runs write a snapshot file in the text format scrapers already
//! understand; there is no embedded server. Output order is fixed so two
//! runs with the same metrics produce identical bytes.

use std::fmt::Write as _;

use crate::replay::RunMetrics;

/// Render a metrics snapshot in Prometheus text exposition format. The
/// policy (and seed when present) become labels on every series; per-tier
/// series carry a `tier` label.
#[must_use]
pub fn render(metrics: &RunMetrics) -> String {
    let mut out = String::new();
    let labels = base_labels(metrics);

    let counter = |out: &mut String, name: &str, help: &str, value: u64| {
        let _ = writeln!(out, "# HELP {name} {help}");
        let _ = writeln!(out, "# TYPE {name} counter");
        let _ = writeln!(out, "{name}{{{labels}}} {value}");
    };
    let gauge = |out: &mut String, name: &str, help: &str, value: f64| {
        let _ = writeln!(out, "# HELP {name} {help}");
        let _ = writeln!(out, "# TYPE {name} gauge");
        let _ = writeln!(out, "{name}{{{labels}}} {value}");
    };
    let per_tier = |out: &mut String, name: &str, help: &str, values: &[u64]| {
        let _ = writeln!(out, "# HELP {name} {help}");
        let _ = writeln!(out, "# TYPE {name} counter");
        for (tier, v) in values.iter().enumerate() {
            let _ = writeln!(out, "{name}{{{labels},tier=\"{tier}\"}} {v}");
        }
    };

    counter(
        &mut out,
        "kvtier_accesses_total",
        "Block accesses replayed.",
        metrics.total_accesses,
    );
    per_tier(
        &mut out,
        "kvtier_hits_total",
        "Demand hits by serving tier.",
        &metrics.hits_by_tier,
    );
    per_tier(
        &mut out,
        "kvtier_tier_misses_total",
        "Probe misses per tier (accesses that tier did not serve).",
        &metrics.misses_by_tier,
    );
    counter(
        &mut out,
        "kvtier_misses_total",
        "Accesses found in no enabled tier.",
        metrics.misses,
    );
    per_tier(
        &mut out,
        "kvtier_promotions_total",
        "Blocks promoted into each tier.",
        &metrics.promotions_by_tier,
    );
    per_tier(
        &mut out,
        "kvtier_demotions_total",
        "Blocks demoted into each tier.",
        &metrics.demotions_by_tier,
    );
    counter(
        &mut out,
        "kvtier_recompute_saved_ns_total",
        "Prefill recompute avoided by cache hits, simulated nanoseconds.",
        metrics.recompute_ns_saved,
    );
    counter(
        &mut out,
        "kvtier_recompute_charged_ns_total",
        "Prefill recompute charged on misses, simulated nanoseconds.",
        metrics.recompute_ns_charged,
    );
    counter(
        &mut out,
        "kvtier_prefetch_issued_total",
        "Speculative promotions issued by the position-window prefetcher.",
        metrics.prefetch_issued,
    );
    counter(
        &mut out,
        "kvtier_reservations_issued_total",
        "Tool-switch staging promotions issued.",
        metrics.reservations_issued,
    );
    counter(
        &mut out,
        "kvtier_async_promotions_completed_total",
        "Speculative promotions that landed.",
        metrics.async_promotions_completed,
    );
    counter(
        &mut out,
        "kvtier_evicted_to_nothing_total",
        "Blocks dropped past the slowest enabled tier.",
        metrics.evicted_to_nothing,
    );
    counter(
        &mut out,
        "kvtier_audit_failures_total",
        "Tolerated consistency audit failures.",
        metrics.audit_failures,
    );
    gauge(
        &mut out,
        "kvtier_tier01_hit_rate",
        "Fraction of accesses served by the two fastest tiers.",
        metrics.tier01_hit_rate,
    );
    gauge(
        &mut out,
        "kvtier_device_hit_rate",
        "Fraction of accesses served by the fastest tier.",
        metrics.device_hit_rate,
    );
    gauge(
        &mut out,
        "kvtier_any_hit_rate",
        "Fraction of accesses served by any tier.",
        metrics.any_hit_rate,
    );

    if let Some(d) = &metrics.dedup {
        counter(&mut out, "kvtier_dedup_raw_bytes_total", "Logical bytes offered.", d.raw_bytes);
        counter(
            &mut out,
            "kvtier_dedup_written_bytes_total",
            "Logical bytes actually written.",
            d.written_bytes,
        );
        counter(
            &mut out,
            "kvtier_dedup_hits_total",
            "Writes absorbed by an existing payload.",
            d.dedup_hits,
        );
        gauge(
            &mut out,
            "kvtier_dedup_savings_fraction",
            "1 - written/raw bytes.",
            d.savings_fraction,
        );
    }
    out
}

fn base_labels(metrics: &RunMetrics) -> String {
    match metrics.seed {
        Some(seed) => format!("policy=\"{}\",seed=\"{seed}\"", metrics.policy),
        None => format!("policy=\"{}\"", metrics.policy),
    }
}
