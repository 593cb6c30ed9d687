//! Run configuration: one structured document driving every subcommand.
//!
//! A configuration is loaded in three steps: parse the TOML text, apply
//! environment overrides of the form `KVTIER_<SECTION>_<KEY>` (the bare
//! top-level seed is `KVTIER_SEED`), then deserialize strictly. Unknown
//! keys are rejected with their location rather than ignored, so typos
//! fail loudly instead of silently running defaults. The shipped defaults
//! are embedded in the binary; the name `defaults` selects them wherever
//! a config path is expected.

use std::path::PathBuf;

use serde::Deserialize;

use crate::agentic::AgenticParams;
use crate::eviction::EvictionParams;
use crate::predictor::PredictorParams;
use crate::prefetch::PrefetchParams;
use crate::replay::{EngineConfig, Policy, ReplayOptions};
use crate::sizing::{ModelConfig, SizingBudget};
use crate::tier::{Hierarchy, TierSpec, ValueScoreParams};
use crate::workload::{FamilyKind, ModelShape, WorkloadSpec};

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub models: Vec<ModelConfig>,
    pub sizing: SizingBudget,
    pub tiers: Vec<TierSpec>,
    pub value: ValueScoreParams,
    pub predictor: PredictorParams,
    pub eviction: EvictionParams,
    pub prefetch: PrefetchParams,
    pub agentic: AgenticParams,
    pub workload: WorkloadSection,
    pub replay: ReplaySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub family: FamilyKind,
    pub sessions: u32,
    #[serde(default)]
    pub model: ModelShape,
    #[serde(default)]
    pub pooled_share_override: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReplaySection {
    pub policy: Policy,
    pub prefetch: bool,
    pub tool_reservations: bool,
    pub dedup: bool,
    /// Conservation-check cadence in events; a deep structural audit runs
    /// every 128 checks. Unset disables auditing.
    #[serde(default)]
    pub audit_every: Option<u64>,
}

/// Default output destinations; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub metrics_json: Option<PathBuf>,
    pub metrics_prom: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
}

impl RunConfig {
    /// The embedded default configuration, with process environment
    /// overrides applied.
    pub fn builtin() -> Result<Self, String> {
        Self::from_toml(include_str!("../../../config/defaults.toml"))
    }

    /// Parse, apply `KVTIER_*` overrides from the process environment,
    /// validate.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let vars = std::env::vars().filter(|(k, _)| k.starts_with("KVTIER_"));
        Self::from_toml_with_env(text, vars)
    }

    /// Same as [`RunConfig::from_toml`] with an explicit variable set, for
    /// tests and callers that scope their environment.
    pub fn from_toml_with_env(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, String> {
        let mut doc: toml::Table = text.parse().map_err(|e| format!("config parse: {e}"))?;
        apply_env_overrides(&mut doc, vars)?;
        let cfg: RunConfig = doc.try_into().map_err(|e| format!("config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.models.is_empty() {
            return Err("models: at least one model is required".into());
        }
        for m in &self.models {
            m.validate().map_err(|e| format!("models: {e}"))?;
        }
        // Hierarchy construction enforces tier ordering and per-tier field
        // sanity; the probe instance is discarded.
        Hierarchy::new(self.tiers.clone()).map_err(|e| format!("tiers: {e}"))?;
        self.value
            .validate(self.tiers.len())
            .map_err(|e| format!("value: {e}"))?;
        self.prefetch.validate().map_err(|e| format!("prefetch: {e}"))?;
        if self.predictor.window_capacity == 0 {
            return Err("predictor: window_capacity must be at least 1".into());
        }
        if !(self.predictor.confidence_pivot > 0.0) {
            return Err("predictor: confidence_pivot must be positive".into());
        }
        if !(self.predictor.prior_strength > 0.0) {
            return Err("predictor: prior_strength must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.eviction.lambda) {
            return Err(format!("eviction: lambda {} outside [0, 1]", self.eviction.lambda));
        }
        if !(self.eviction.tau_tokens > 0.0) {
            return Err("eviction: tau_tokens must be positive".into());
        }
        if !(self.agentic.smoothing_k > 0.0) {
            return Err("agentic: smoothing_k must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.agentic.profile_lambda) {
            return Err(format!(
                "agentic: profile_lambda {} outside [0, 1]",
                self.agentic.profile_lambda
            ));
        }
        if self.workload.sessions == 0 {
            return Err("workload: sessions must be at least 1".into());
        }
        if let Some(share) = self.workload.pooled_share_override {
            if !(0.0..=1.0).contains(&share) {
                return Err(format!("workload: pooled_share_override {share} outside [0, 1]"));
            }
        }
        if self.workload.model.bytes_per_token == 0 || self.workload.model.block_tokens == 0 {
            return Err("workload.model: bytes_per_token and block_tokens must be positive".into());
        }
        Ok(())
    }

    #[must_use]
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            tiers: self.tiers.clone(),
            value: self.value.clone(),
            predictor: self.predictor,
            eviction: self.eviction,
            prefetch: self.prefetch,
            agentic: self.agentic,
            model: self.workload.model,
        }
    }

    #[must_use]
    pub fn workload_spec(&self) -> WorkloadSpec {
        WorkloadSpec {
            family: self.workload.family,
            sessions: self.workload.sessions,
            seed: self.seed,
            model: self.workload.model,
            pooled_share_override: self.workload.pooled_share_override,
        }
    }

    #[must_use]
    pub fn replay_options(&self) -> ReplayOptions {
        ReplayOptions {
            policy: self.replay.policy,
            prefetch: self.replay.prefetch,
            tool_reservations: self.replay.tool_reservations,
            dedup: self.replay.dedup,
            audit_every: self.replay.audit_every,
        }
    }

    /// Look up a model from the catalog by name.
    pub fn model(&self, name: &str) -> Result<&ModelConfig, String> {
        self.models.iter().find(|m| m.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.models.iter().map(|m| m.name.as_str()).collect();
            format!("unknown model {name:?} (config defines: {})", known.join(", "))
        })
    }
}

/// Apply `KVTIER_<SECTION>_<KEY>` overrides to a parsed document before
/// deserialization. Section names are single words, so the first `_`
/// after the prefix splits section from key; `KVTIER_SEED` addresses the
/// top-level seed. Values parse as integer, then float, then boolean,
/// then string. Only scalar keys in table sections are reachable; arrays
/// of tables stay file-only.
pub fn apply_env_overrides(
    doc: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<(), String> {
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with("KVTIER_"))
        .collect();
    // Deterministic application order keeps the first-error report stable.
    vars.sort();
    for (key, raw) in vars {
        let rest = key.trim_start_matches("KVTIER_").to_ascii_lowercase();
        if rest.is_empty() {
            return Err(format!("{key}: empty override name"));
        }
        let value = parse_env_scalar(&raw);
        match rest.split_once('_') {
            None => {
                doc.insert(rest, value);
            }
            Some((section, field)) => {
                let entry = doc
                    .entry(section.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
                let table = entry.as_table_mut().ok_or_else(|| {
                    format!("{key}: section {section:?} is not a table of settings")
                })?;
                table.insert(field.to_string(), value);
            }
        }
    }
    Ok(())
}

fn parse_env_scalar(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    match raw {
        "true" => toml::Value::Boolean(true),
        "false" => toml::Value::Boolean(false),
        _ => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults_text() -> &'static str {
        include_str!("../../../config/defaults.toml")
    }

    fn no_env() -> impl Iterator<Item = (String, String)> {
        std::iter::empty()
    }

    #[test]
    fn shipped_defaults_load_and_validate() {
        let cfg = RunConfig::from_toml_with_env(defaults_text(), no_env()).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.models.len(), 3);
        assert_eq!(cfg.tiers.len(), 6);
        assert_eq!(cfg.workload.family, FamilyKind::LmsysLike);
        assert_eq!(cfg.replay.policy, Policy::Bayesian);
        assert!(cfg.output.metrics_json.is_none());
    }

    #[test]
    fn defaults_produce_a_working_engine_config() {
        let cfg = RunConfig::from_toml_with_env(defaults_text(), no_env()).unwrap();
        let engine = cfg.engine_config();
        assert_eq!(engine.tiers.len(), 6);
        assert_eq!(engine.model.block_tokens, 512);
        let spec = cfg.workload_spec();
        assert_eq!(spec.seed, cfg.seed);
        assert_eq!(spec.sessions, 200);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let text = format!("{}\n[predictor_typo]\nx = 1\n", defaults_text());
        let err = RunConfig::from_toml_with_env(&text, no_env()).unwrap_err();
        assert!(err.contains("predictor_typo"), "{err}");

        let text = defaults_text().replace("window_capacity = 1000", "window_cap = 1000");
        let err = RunConfig::from_toml_with_env(&text, no_env()).unwrap_err();
        assert!(err.contains("window_cap"), "{err}");
    }

    #[test]
    fn env_overrides_reach_sections_and_the_seed() {
        let vars = vec![
            ("KVTIER_SEED".to_string(), "7".to_string()),
            ("KVTIER_PREDICTOR_WINDOW_CAPACITY".to_string(), "500".to_string()),
            ("KVTIER_WORKLOAD_FAMILY".to_string(), "agentic_tools".to_string()),
            ("KVTIER_REPLAY_DEDUP".to_string(), "true".to_string()),
            ("KVTIER_EVICTION_LAMBDA".to_string(), "0.9".to_string()),
        ];
        let cfg = RunConfig::from_toml_with_env(defaults_text(), vars).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.predictor.window_capacity, 500);
        assert_eq!(cfg.workload.family, FamilyKind::AgenticTools);
        assert!(cfg.replay.dedup);
        assert!((cfg.eviction.lambda - 0.9).abs() < 1e-12);
    }

    #[test]
    fn env_override_with_unknown_key_is_rejected() {
        let vars = vec![("KVTIER_PREDICTOR_TYPO".to_string(), "1".to_string())];
        let err = RunConfig::from_toml_with_env(defaults_text(), vars).unwrap_err();
        assert!(err.contains("typo"), "{err}");
    }

    #[test]
    fn non_kvtier_variables_are_ignored() {
        let vars = vec![("PATH".to_string(), "/usr/bin".to_string())];
        let cfg = RunConfig::from_toml_with_env(defaults_text(), vars).unwrap();
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn invalid_values_fail_validation_with_section_names() {
        let vars = vec![("KVTIER_EVICTION_LAMBDA".to_string(), "1.5".to_string())];
        let err = RunConfig::from_toml_with_env(defaults_text(), vars).unwrap_err();
        assert!(err.contains("eviction"), "{err}");

        let vars = vec![("KVTIER_WORKLOAD_SESSIONS".to_string(), "0".to_string())];
        let err = RunConfig::from_toml_with_env(defaults_text(), vars).unwrap_err();
        assert!(err.contains("sessions"), "{err}");
    }

    #[test]
    fn model_lookup_names_the_catalog_on_miss() {
        let cfg = RunConfig::from_toml_with_env(defaults_text(), no_env()).unwrap();
        assert_eq!(cfg.model("deepseek-v3").unwrap().num_layers, 61);
        let err = cfg.model("gpt-j").unwrap_err();
        assert!(err.contains("llama-3-70b"), "{err}");
    }

    #[test]
    fn policy_accepts_the_short_ema_alias() {
        let text = defaults_text().replace("policy = \"bayesian\"", "policy = \"ema\"");
        let cfg = RunConfig::from_toml_with_env(&text, no_env()).unwrap();
        assert_eq!(cfg.replay.policy, Policy::ImportanceEma);
    }

    #[test]
    fn builtin_matches_the_config_file_on_disk() {
        // include_str! embeds at compile time; this guards against the
        // shipped file drifting from what the binary carries.
        let embedded = defaults_text();
        let on_disk = std::fs::read_to_string(
            std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/defaults.toml"),
        )
        .unwrap();
        assert_eq!(embedded, on_disk);
    }
}
