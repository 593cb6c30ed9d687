//! Command-line front end.
//!
//! One batch-oriented binary, subcommand per task: `size` for footprint
//! and batch capacity reports, `gen-trace` for synthetic workloads,
//! `replay` for policy simulation, `project` for analytical projections,
//! `dedup-report` for content-savings measurement, and `report` for
//! merging metrics files across runs. Diagnostics go to stderr, data to
//! files or stdout. Exit codes: 0 success, 1 usage error, 2 config or
//! trace validation error, 3 internal invariant violation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use kvtier::config::RunConfig;
use kvtier::projection::{ablation_table, full_system_projection, tier_ladder, Calibration, Scenario};
use kvtier::replay::{Policy, ReplayEngine, ReplayError, ReplayOptions, RunMetrics};
use kvtier::sizing::{fleet_report, ArchitectureKind};
use kvtier::trace::{read_trace_file, write_trace_file, Trace, TraceError};
use kvtier::workload::{generate, FamilyKind, WorkloadSpec};

#[derive(Parser)]
#[command(
    name = "kvtier",
    version,
    about = "Trace-driven simulator and analytical toolkit for multi-tier KV-cache management",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report per-model KV footprints and batch capacity under the configured budget
    Size(SizeArgs),
    /// Generate a synthetic workload trace (JSONL)
    GenTrace(GenTraceArgs),
    /// Replay a trace through the tier hierarchy under one policy
    Replay(ReplayArgs),
    /// Project capacity, throughput, latency, and cost across tier ladders
    Project(ProjectArgs),
    /// Replay with content deduplication enabled and report storage savings
    DedupReport(DedupReportArgs),
    /// Merge replay metrics files into a per-policy comparison
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration path, or "defaults" for the embedded one
    #[arg(long, default_value = "defaults")]
    config: String,
    /// Output format
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SizeArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct GenTraceArgs {
    /// Run configuration path, or "defaults" for the embedded one
    #[arg(long, default_value = "defaults")]
    config: String,
    /// Workload family; the configured one when omitted
    #[arg(long)]
    family: Option<FamilyKind>,
    /// Session count; the configured one when omitted
    #[arg(long)]
    sessions: Option<u32>,
    /// Generator seed; the configured one when omitted
    #[arg(long)]
    seed: Option<u64>,
    /// Override the family's shared-content fraction (0..=1)
    #[arg(long)]
    pooled_share: Option<f64>,
    /// Trace output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Run configuration path, or "defaults" for the embedded one
    #[arg(long, default_value = "defaults")]
    config: String,
    /// Trace to replay (JSONL)
    #[arg(long)]
    trace: PathBuf,
    /// Eviction/placement policy; the configured one when omitted
    #[arg(long)]
    policy: Option<Policy>,
    /// Label stamped into the metrics output; does not alter replay
    #[arg(long)]
    seed: Option<u64>,
    /// Metrics JSON path; stdout when omitted
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Also write the metrics snapshot in Prometheus text format
    #[arg(long)]
    prom_out: Option<PathBuf>,
    /// Enable the position-window prefetcher
    #[arg(long)]
    prefetch: bool,
    /// Enable tool-switch context staging
    #[arg(long)]
    tool_reservations: bool,
    /// Enable content deduplication accounting
    #[arg(long)]
    dedup: bool,
    /// Check conservation invariants every N events
    #[arg(long, value_name = "N")]
    audit_every: Option<u64>,
}

#[derive(Args)]
struct ProjectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Calibration path, or "builtin" for the embedded one
    #[arg(long, default_value = "builtin")]
    calibration: String,
}

#[derive(Args)]
struct DedupReportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trace to replay; generated from the configured workload when omitted
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics JSON files to merge
    #[arg(required = true, value_name = "METRICS")]
    inputs: Vec<PathBuf>,
    /// Output format
    #[arg(long, value_enum, default_value = "table")]
    format: Format,
    /// Output path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

// ── Error plumbing ──────────────────────────────────────────────────────────

enum CliError {
    /// Bad configuration, trace, or input file. Exit 2.
    Config(String),
    /// A simulator invariant failed mid-run. Exit 3.
    Invariant(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Invariant(m) => m,
        }
    }
}

fn config_err(context: &str, detail: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{context}: {detail}"))
}

impl From<ReplayError> for CliError {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::Config(m) => CliError::Config(m),
            other => CliError::Invariant(other.to_string()),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::Config(format!("trace: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Size(args) => cmd_size(args),
        Command::GenTrace(args) => cmd_gen_trace(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Project(args) => cmd_project(args),
        Command::DedupReport(args) => cmd_dedup_report(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn load_config(name: &str) -> Result<RunConfig, CliError> {
    if name == "defaults" {
        return RunConfig::builtin().map_err(CliError::Config);
    }
    let text = std::fs::read_to_string(name).map_err(|e| config_err(name, e))?;
    RunConfig::from_toml(&text).map_err(|e| config_err(name, e))
}

fn load_calibration(name: &str) -> Result<Calibration, CliError> {
    if name == "builtin" {
        return Calibration::builtin().map_err(CliError::Config);
    }
    let text = std::fs::read_to_string(name).map_err(|e| config_err(name, e))?;
    Calibration::from_toml(&text).map_err(|e| config_err(name, e))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| config_err(&path.display().to_string(), e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json_pretty<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable report");
    s.push('\n');
    s
}

// ── size ────────────────────────────────────────────────────────────────────

fn cmd_size(args: SizeArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common.config)?;
    let report = fleet_report(&cfg.models, &cfg.sizing)
        .map_err(|e| config_err("sizing", e))?;

    let text = match args.common.format {
        Format::Json => to_json_pretty(&report),
        Format::Csv => {
            let mut s = String::from(
                "model,architecture,mha_bytes_per_token_layer,actual_bytes_per_token_layer,memory_ratio,mha_batch,aware_batch,batch_gain\n",
            );
            for r in &report.rows {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{:.4},{},{},{:.4}",
                    r.model,
                    r.architecture,
                    r.mha_bytes_per_token_layer,
                    r.actual_bytes_per_token_layer,
                    r.memory_ratio,
                    r.mha_batch,
                    r.aware_batch,
                    r.batch_gain
                );
            }
            s
        }
        Format::Table => {
            let mut s = format!(
                "KV footprint and batch capacity (budget {} B, n_max {})\n\n",
                report.budget.m_target_bytes, report.budget.n_max
            );
            let _ = writeln!(
                s,
                "{:<16} {:<5} {:>14} {:>14} {:>8} {:>10} {:>12} {:>7}",
                "model", "arch", "naive B/tok/L", "actual B/tok/L", "ratio", "mha batch", "aware batch", "gain"
            );
            for r in &report.rows {
                let _ = writeln!(
                    s,
                    "{:<16} {:<5} {:>14} {:>14} {:>7.1}x {:>10} {:>12} {:>6.1}x",
                    r.model,
                    r.architecture.to_string(),
                    r.mha_bytes_per_token_layer,
                    r.actual_bytes_per_token_layer,
                    r.memory_ratio,
                    r.mha_batch,
                    r.aware_batch,
                    r.batch_gain
                );
            }
            s
        }
    };
    write_output(args.common.out.as_deref(), &text)
}

// ── gen-trace ───────────────────────────────────────────────────────────────

fn cmd_gen_trace(args: GenTraceArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let mut spec: WorkloadSpec = cfg.workload_spec();
    if let Some(family) = args.family {
        spec.family = family;
    }
    if let Some(sessions) = args.sessions {
        spec.sessions = sessions;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(share) = args.pooled_share {
        if !(0.0..=1.0).contains(&share) {
            return Err(CliError::Config(format!("pooled share {share} outside [0, 1]")));
        }
        spec.pooled_share_override = Some(share);
    }
    if spec.sessions == 0 {
        return Err(CliError::Config("sessions must be at least 1".into()));
    }

    let trace = generate(&spec);
    eprintln!(
        "generated {} events across {} sessions (family {}, seed {})",
        trace.events.len(),
        spec.sessions,
        spec.family,
        spec.seed
    );
    let dest = args.out.or(cfg.output.trace_out);
    match dest {
        Some(path) => write_trace_file(&path, &trace)?,
        None => print!("{}", kvtier::trace::emit_trace(&trace)),
    }
    Ok(())
}

// ── replay ──────────────────────────────────────────────────────────────────

fn cmd_replay(args: ReplayArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let trace = read_trace_file(&args.trace)?;

    let mut options: ReplayOptions = cfg.replay_options();
    if let Some(policy) = args.policy {
        options.policy = policy;
    }
    options.prefetch |= args.prefetch;
    options.tool_reservations |= args.tool_reservations;
    options.dedup |= args.dedup;
    if args.audit_every.is_some() {
        options.audit_every = args.audit_every;
    }

    let started = std::time::Instant::now();
    let mut engine = ReplayEngine::new(cfg.engine_config(), options)?;
    let mut metrics: RunMetrics = engine.replay(&trace)?;
    metrics.seed = args.seed.or_else(|| trace.header.as_ref().and_then(|h| h.seed));
    // Wall time goes to stderr only; fixed-seed outputs stay byte-identical.
    eprintln!(
        "replayed {} events in {} ms ({})",
        metrics.total_accesses,
        started.elapsed().as_millis(),
        metrics.policy
    );

    let metrics_dest = args.metrics_out.or(cfg.output.metrics_json);
    write_output(metrics_dest.as_deref(), &to_json_pretty(&metrics))?;
    if let Some(path) = args.prom_out.or(cfg.output.metrics_prom) {
        std::fs::write(&path, kvtier::prom::render(&metrics))
            .map_err(|e| config_err(&path.display().to_string(), e))?;
    }
    Ok(())
}

// ── project ─────────────────────────────────────────────────────────────────

fn cmd_project(args: ProjectArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common.config)?;
    let cal = load_calibration(&args.calibration)?;

    let ladder = tier_ladder(&cal, &cfg.tiers).map_err(CliError::Config)?;
    let full = full_system_projection(&cal, &cfg.tiers).map_err(CliError::Config)?;
    let mla = cfg
        .models
        .iter()
        .find(|m| m.architecture() == ArchitectureKind::Mla)
        .ok_or_else(|| {
            CliError::Config("ablation projection needs a latent-attention model in the catalog".into())
        })?;
    let ablations = ablation_table(&cal, mla, &cfg.sizing);

    let text = match args.common.format {
        Format::Json => {
            #[derive(serde::Serialize)]
            struct ProjectReport<'a> {
                ladder: &'a [kvtier::projection::LadderRow],
                full_system: &'a kvtier::projection::EndToEndProjection,
                ablations: &'a [kvtier::projection::AblationRow],
            }
            to_json_pretty(&ProjectReport {
                ladder: &ladder,
                full_system: &full,
                ablations: &ablations,
            })
        }
        Format::Csv => {
            let mut s = String::from("configuration,capacity_bytes,unbounded,ttft_p99_s,throughput_tokens_per_s\n");
            for r in &ladder {
                let _ = writeln!(
                    s,
                    "{},{},{},{:.3},{:.0}",
                    r.configuration,
                    r.capacity.bounded_bytes,
                    r.capacity.unbounded,
                    r.ttft_p99_s,
                    r.throughput_tokens_per_s
                );
            }
            s.push('\n');
            s.push_str("ttft_p50_s,ttft_p99_s,tbt_p99_ms,throughput_tokens_per_s,cost_per_mtok\n");
            let _ = writeln!(
                s,
                "{:.3},{:.3},{:.1},{:.0},{:.2}",
                full.ttft_p50_s, full.ttft_p99_s, full.tbt_p99_ms, full.throughput_tokens_per_s, full.cost_per_mtok
            );
            s.push('\n');
            s.push_str("component,mla_chat_pct,gqa_chat_pct,gqa_agentic_pct\n");
            for row in &ablations {
                let _ = writeln!(
                    s,
                    "{:?},{:.1},{:.1},{:.1}",
                    row.component, row.delta_pct[0], row.delta_pct[1], row.delta_pct[2]
                );
            }
            s
        }
        Format::Table => {
            let mut s = String::from("Incremental tier ladder\n\n");
            let _ = writeln!(
                s,
                "{:<14} {:>14} {:>12} {:>12}",
                "configuration", "capacity", "ttft p99", "tokens/s"
            );
            for r in &ladder {
                let cap = if r.capacity.unbounded {
                    format!("{}+ GB", r.capacity.bounded_bytes / 1_000_000_000)
                } else {
                    format!("{} GB", r.capacity.bounded_bytes / 1_000_000_000)
                };
                let _ = writeln!(
                    s,
                    "{:<14} {:>14} {:>10.1} s {:>12.0}",
                    r.configuration, cap, r.ttft_p99_s, r.throughput_tokens_per_s
                );
            }
            let _ = writeln!(
                s,
                "\nFull system: TTFT p50 {:.1} s, p99 {:.1} s; TBT p99 {:.0} ms; {:.0} tokens/s/GPU; ${:.2}/Mtok\n",
                full.ttft_p50_s, full.ttft_p99_s, full.tbt_p99_ms, full.throughput_tokens_per_s, full.cost_per_mtok
            );
            s.push_str("Throughput change when a component falls back to baseline\n\n");
            let _ = writeln!(
                s,
                "{:<20} {:>10} {:>10} {:>12}",
                "component", "mla chat", "gqa chat", "gqa agentic"
            );
            for row in &ablations {
                let _ = writeln!(
                    s,
                    "{:<20} {:>9.1}% {:>9.1}% {:>11.1}%",
                    format!("{:?}", row.component),
                    row.delta_pct[0],
                    row.delta_pct[1],
                    row.delta_pct[2]
                );
            }
            debug_assert_eq!(Scenario::ALL.len(), 3);
            s
        }
    };
    write_output(args.common.out.as_deref(), &text)
}

// ── dedup-report ────────────────────────────────────────────────────────────

fn cmd_dedup_report(args: DedupReportArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.common.config)?;
    let trace: Trace = match &args.trace {
        Some(path) => read_trace_file(path)?,
        None => generate(&cfg.workload_spec()),
    };

    let mut options = cfg.replay_options();
    options.dedup = true;
    let mut engine = ReplayEngine::new(cfg.engine_config(), options)?;
    let metrics = engine.replay(&trace)?;
    let stats = metrics.dedup.expect("dedup stats present when dedup is enabled");

    let text = match args.common.format {
        Format::Json => to_json_pretty(&stats),
        Format::Csv => format!(
            "raw_bytes,written_bytes,dedup_hits,unique_entries,resident_logical_bytes,savings_fraction\n{},{},{},{},{},{:.6}\n",
            stats.raw_bytes,
            stats.written_bytes,
            stats.dedup_hits,
            stats.unique_entries,
            stats.resident_logical_bytes,
            stats.savings_fraction
        ),
        Format::Table => format!(
            "Content deduplication over {} accesses ({})\n\n\
             raw bytes            {}\n\
             written bytes        {}\n\
             dedup hits           {}\n\
             unique payloads      {}\n\
             resident bytes       {}\n\
             savings              {:.1}%\n",
            metrics.total_accesses,
            metrics.policy,
            stats.raw_bytes,
            stats.written_bytes,
            stats.dedup_hits,
            stats.unique_entries,
            stats.resident_logical_bytes,
            stats.savings_fraction * 100.0
        ),
    };
    write_output(args.common.out.as_deref(), &text)
}

// ── report ──────────────────────────────────────────────────────────────────

#[derive(serde::Serialize)]
struct PolicyRollup {
    policy: String,
    runs: usize,
    mean_tier01_hit_rate: f64,
    stdev_tier01_hit_rate: f64,
    mean_device_hit_rate: f64,
    mean_any_hit_rate: f64,
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut runs: Vec<RunMetrics> = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(&path.display().to_string(), e))?;
        let m: RunMetrics = serde_json::from_str(&text)
            .map_err(|e| config_err(&path.display().to_string(), e))?;
        if let Some(prev) = runs.first() {
            if prev.schema_version != m.schema_version {
                return Err(CliError::Config(format!(
                    "schema_version mismatch: {} ({}) vs {} ({})",
                    prev.schema_version,
                    args.inputs[0].display(),
                    m.schema_version,
                    path.display()
                )));
            }
        }
        runs.push(m);
    }

    // Group by policy, preserving first-seen order for stable output.
    let mut order: Vec<String> = Vec::new();
    for m in &runs {
        if !order.contains(&m.policy) {
            order.push(m.policy.clone());
        }
    }
    let rollups: Vec<PolicyRollup> = order
        .iter()
        .map(|policy| {
            let group: Vec<&RunMetrics> = runs.iter().filter(|m| &m.policy == policy).collect();
            let tier01: Vec<f64> = group.iter().map(|m| m.tier01_hit_rate).collect();
            PolicyRollup {
                policy: policy.clone(),
                runs: group.len(),
                mean_tier01_hit_rate: mean(&tier01),
                stdev_tier01_hit_rate: sample_stdev(&tier01),
                mean_device_hit_rate: mean(
                    &group.iter().map(|m| m.device_hit_rate).collect::<Vec<_>>(),
                ),
                mean_any_hit_rate: mean(&group.iter().map(|m| m.any_hit_rate).collect::<Vec<_>>()),
            }
        })
        .collect();

    let text = match args.format {
        Format::Json => to_json_pretty(&rollups),
        Format::Csv => {
            let mut s = String::from(
                "policy,runs,mean_tier01_hit_rate,stdev_tier01_hit_rate,mean_device_hit_rate,mean_any_hit_rate\n",
            );
            for r in &rollups {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{:.6},{:.6}",
                    r.policy,
                    r.runs,
                    r.mean_tier01_hit_rate,
                    r.stdev_tier01_hit_rate,
                    r.mean_device_hit_rate,
                    r.mean_any_hit_rate
                );
            }
            s
        }
        Format::Table => {
            let mut s = format!("Policy comparison over {} runs\n\n", runs.len());
            let _ = writeln!(
                s,
                "{:<16} {:>5} {:>18} {:>10} {:>10}",
                "policy", "runs", "fast-tier hits", "device", "any"
            );
            for r in &rollups {
                let _ = writeln!(
                    s,
                    "{:<16} {:>5} {:>8.1}% ± {:>4.1}pp {:>9.1}% {:>9.1}%",
                    r.policy,
                    r.runs,
                    r.mean_tier01_hit_rate * 100.0,
                    r.stdev_tier01_hit_rate * 100.0,
                    r.mean_device_hit_rate * 100.0,
                    r.mean_any_hit_rate * 100.0
                );
            }
            s
        }
    };
    write_output(args.out.as_deref(), &text)
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_stdev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
