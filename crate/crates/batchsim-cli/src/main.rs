//! Operator entry point: replay experiments, synthetic benchmarks, attack
//! drills, contract rewriting, and analytic queries.
//!
//! Exit codes: 0 success, 1 configuration error, 2 trace/input error, 3
//! simulation error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use batchsim::bench::{
    calls_per_block_cdf, expected_saving_from_cdf, gen_synthetic, load_trace, replay,
    replay_with_history, trace_to_csv, ArrivalMode, CalleeKind, MetricsReport, ReplayConfig,
    SynthSpec, SystemKind,
};
use batchsim::core::Address;
use batchsim::costmodel::{
    generic_profitability, service_pricing, GasCostModel, WorkloadShape, KNOWN_CHAINS,
};
use batchsim::identity::Keystore;
use batchsim::policy::{PolicyMode, PolicySpec, PricingPolicy};
use batchsim::protocol::{parse_scenario, run_adversary, AdversaryScript, AttackKind};
use batchsim::rewriter::{rewrite, ContractIR};

const EXIT_CONFIG: u8 = 1;
const EXIT_TRACE: u8 = 2;
const EXIT_SIMULATION: u8 = 3;

#[derive(Debug)]
struct CliFailure {
    code: u8,
    message: String,
}

impl CliFailure {
    fn config(message: impl Into<String>) -> CliFailure {
        CliFailure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn trace(message: impl Into<String>) -> CliFailure {
        CliFailure {
            code: EXIT_TRACE,
            message: message.into(),
        }
    }

    fn simulation(message: impl Into<String>) -> CliFailure {
        CliFailure {
            code: EXIT_SIMULATION,
            message: message.into(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "batchsim",
    about = "Simulation laboratory for jointly signed invocation batching",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a trace file under one or more systems and write reports.
    Replay(ReplayArgs),
    /// Generate a synthetic workload, replay it, and tabulate per-call gas.
    Bench(BenchArgs),
    /// Run scripted adversarial-Batcher scenarios and print their fates.
    Attack(AttackArgs),
    /// Rewrite a contract IR file into its Dispatcher-callable form.
    Rewrite(RewriteArgs),
    /// Analytic queries against the gas cost model.
    Analyze(AnalyzeArgs),
}

/// Policy and model flags shared by replay and bench.
#[derive(Args, Clone)]
struct PolicyArgs {
    /// Batching policy: `windowed` or `oneblock`.
    #[arg(long, default_value = "windowed")]
    policy: String,
    /// Batch window in seconds.
    #[arg(long, default_value_t = 120)]
    window: u64,
    /// Smallest batch worth forming.
    #[arg(long = "min-batch", default_value_t = 5)]
    min_batch: usize,
    /// Largest batch.
    #[arg(long = "max-batch", default_value_t = 60)]
    max_batch: usize,
    /// Restrict each window to its most intensive sender.
    #[arg(long, default_value_t = false)]
    top1: bool,
    /// Batch pricing: `batch:X`, `block:X`, or `fixed:P`.
    #[arg(long, default_value = "batch:50")]
    pricing: String,
    /// Post-block wait in seconds (one-block mode).
    #[arg(long, default_value_t = 10)]
    d: u64,
    /// `key=value` config file merged under the flags (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Deterministic seed; falls back to $BATCHSIM_SEED, then 1.
    #[arg(long)]
    seed: Option<u64>,
}

struct ResolvedPolicy {
    spec: PolicySpec,
    model: GasCostModel,
    seed: u64,
}

const MODEL_KEYS: [&str; 10] = [
    "tx_base",
    "tx_per_word",
    "call_base",
    "call_per_word",
    "sset",
    "reset",
    "sload",
    "sha3_base",
    "sha3_per_word",
    "sig_verify",
];

impl PolicyArgs {
    /// Applies the config file under the explicitly given flags, then
    /// builds the policy spec and gas model.
    fn resolve(&self, given: &clap::ArgMatches) -> Result<ResolvedPolicy, CliFailure> {
        let mut values: BTreeMap<String, String> = BTreeMap::new();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliFailure::config(format!("config {}: {e}", path.display())))?;
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| CliFailure::config(format!("config line `{line}`")))?;
                values.insert(k.trim().to_string(), v.trim().to_string());
            }
        }

        let flag_given =
            |id: &str| given.value_source(id) == Some(clap::parser::ValueSource::CommandLine);
        let pick = |id: &str, key: &str, flag: String| -> String {
            if flag_given(id) {
                flag
            } else {
                values.get(key).cloned().unwrap_or(flag)
            }
        };

        let policy = pick("policy", "policy", self.policy.clone());
        let mode = match policy.as_str() {
            "windowed" => PolicyMode::Windowed,
            "oneblock" => PolicyMode::OneBlock,
            other => return Err(CliFailure::config(format!("unknown policy `{other}`"))),
        };
        let parse_num = |name: &str, s: String| {
            s.parse::<u64>()
                .map_err(|_| CliFailure::config(format!("bad {name} `{s}`")))
        };
        let window_s = parse_num("window", pick("window", "window", self.window.to_string()))?;
        let min_batch = parse_num(
            "min-batch",
            pick("min_batch", "min-batch", self.min_batch.to_string()),
        )? as usize;
        let max_batch = parse_num(
            "max-batch",
            pick("max_batch", "max-batch", self.max_batch.to_string()),
        )? as usize;
        let d_s = parse_num("d", pick("d", "d", self.d.to_string()))?;
        let top1 = if flag_given("top1") {
            self.top1
        } else {
            values
                .get("top1")
                .map(|v| v == "true" || v == "1")
                .unwrap_or(self.top1)
        };
        let pricing_text = pick("pricing", "pricing", self.pricing.clone());
        let pricing = PricingPolicy::parse(&pricing_text)
            .ok_or_else(|| CliFailure::config(format!("bad pricing `{pricing_text}`")))?;

        let seed = match self.seed {
            Some(s) => s,
            None => match values.get("seed") {
                Some(s) => parse_num("seed", s.clone())?,
                None => std::env::var("BATCHSIM_SEED")
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(1),
            },
        };

        let spec = PolicySpec {
            mode,
            window_s,
            top1,
            min_batch,
            max_batch,
            d_s,
            pricing,
        };
        spec.validate(batchsim::chainsim::DEFAULT_BLOCK_INTERVAL_MS / 1000)
            .map_err(|e| CliFailure::config(e.to_string()))?;

        let mut model = GasCostModel::default();
        for (key, value) in &values {
            if MODEL_KEYS.contains(&key.as_str()) {
                model
                    .set_field(key, value)
                    .map_err(|e| CliFailure::config(e.to_string()))?;
            }
        }
        Ok(ResolvedPolicy { spec, model, seed })
    }
}

#[derive(Args)]
struct ReplayArgs {
    /// Trace CSV to replay.
    #[arg(long)]
    trace: PathBuf,
    /// Keystore resolving the trace's callers (`address,seed-hex` lines).
    #[arg(long)]
    keystore: PathBuf,
    /// Comma-separated systems: b0,ibatch,inlined,b1,b2,ideal.
    #[arg(long, default_value = "b0,ibatch")]
    systems: String,
    /// Callee fixture the trace drives: `erc20` or `work:<args>`.
    #[arg(long, default_value = "erc20")]
    callee: String,
    /// Also compute block delays against an internal unbatched baseline.
    #[arg(long = "compute-delays", default_value_t = false)]
    compute_delays: bool,
    /// Output directory for the report files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Run the requested systems on worker threads.
    #[arg(long, default_value_t = false)]
    parallel: bool,
    /// Also write gnuplot-compatible series data files.
    #[arg(long = "emit-plots", default_value_t = false)]
    emit_plots: bool,
    /// Also write each system's chain history as CSV.
    #[arg(long = "emit-chain", default_value_t = false)]
    emit_chain: bool,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Drive exactly this many calls per window.
    #[arg(long = "fixed-batch")]
    fixed_batch: Option<usize>,
    /// Number of windows to run in fixed-batch mode.
    #[arg(long, default_value_t = 3)]
    windows: u64,
    /// Poisson arrival rate (calls per second) when not fixed-batch.
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    /// Trace duration in seconds when not fixed-batch.
    #[arg(long, default_value_t = 1200)]
    duration: u64,
    /// Comma-separated systems to measure.
    #[arg(long, default_value = "b0,b1,b2,ibatch,ideal")]
    systems: String,
    /// Synthetic caller account count.
    #[arg(long, default_value_t = 8)]
    callers: usize,
    /// Synthetic callee contract count.
    #[arg(long, default_value_t = 1)]
    callees: usize,
    /// Callee fixture: `erc20` or `work:<args>`.
    #[arg(long, default_value = "erc20")]
    callee: String,
    /// Gas price range of generated invocations.
    #[arg(long = "price-min", default_value_t = 5)]
    price_min: u64,
    #[arg(long = "price-max", default_value_t = 20)]
    price_max: u64,
    /// Output directory for the generated trace and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = false)]
    parallel: bool,
    #[command(flatten)]
    policy: PolicyArgs,
}

#[derive(Args)]
struct AttackArgs {
    /// Scenario file (`kind,target-index` per line). Defaults to one
    /// scenario per known attack kind.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Seeded repetitions per scenario.
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Base seed; falls back to $BATCHSIM_SEED, then 1.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RewriteArgs {
    /// Contract IR JSON to rewrite.
    #[arg(long = "in")]
    input: PathBuf,
    /// Dispatcher contract address gating the rewritten functions.
    #[arg(long, default_value = "0xdddddddddddddddddddddddddddddddddddddddd")]
    dispatcher: String,
    /// Output path; defaults to `<input stem>_byd.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(subcommand)]
    what: AnalyzeCmd,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Break-even batch size for `x` argument words per call.
    Nmin {
        #[arg(long)]
        x: u64,
    },
    /// Net fee saving of merging two calls: `X − 4Y`.
    Profit {
        /// Known chain preset: ethereum, tron, or eos.
        #[arg(long)]
        chain: Option<String>,
        /// Transfer-transaction cost, with --y.
        #[arg(long)]
        x: Option<i64>,
        /// Per-word data cost, with --x.
        #[arg(long)]
        y: Option<i64>,
    },
    /// Per-call gas of batching `n` plain ether payments.
    Payments {
        #[arg(long)]
        n: u64,
    },
    /// Cost table of every scheme over batch sizes 1..=nmax.
    Costs {
        #[arg(long, default_value_t = 3)]
        x: u64,
        #[arg(long, default_value_t = 0)]
        y: u64,
        #[arg(long, default_value_t = 20)]
        nmax: u64,
    },
    /// Service pricing bounds for a user purchasing `u` batched calls.
    Service {
        #[arg(long)]
        u: u64,
        /// Batch size; 0 means the unbounded limit.
        #[arg(long, default_value_t = 60)]
        n: u64,
        #[arg(long, default_value_t = 3)]
        x: u64,
        #[arg(long = "gas-price", default_value_t = 1)]
        gas_price: u64,
    },
}

fn parse_systems(text: &str) -> Result<Vec<SystemKind>, CliFailure> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let system = SystemKind::parse(part)
            .ok_or_else(|| CliFailure::config(format!("unknown system `{part}`")))?;
        if !out.contains(&system) {
            out.push(system);
        }
    }
    if out.is_empty() {
        return Err(CliFailure::config("no systems requested"));
    }
    Ok(out)
}

fn parse_callee(text: &str) -> Result<CalleeKind, CliFailure> {
    if text == "erc20" {
        return Ok(CalleeKind::Erc20);
    }
    if let Some(rest) = text.strip_prefix("work:") {
        let args: usize = rest
            .parse()
            .map_err(|_| CliFailure::config(format!("bad callee arg count `{rest}`")))?;
        return Ok(CalleeKind::ConstantCost { args });
    }
    Err(CliFailure::config(format!("unknown callee `{text}`")))
}

fn write_report(
    out_dir: &Path,
    report: &MetricsReport,
    emit_plots: bool,
) -> Result<(), CliFailure> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliFailure::config(format!("out dir {}: {e}", out_dir.display())))?;
    let path = out_dir.join(format!("report_{}.csv", report.system));
    std::fs::write(&path, report.to_csv())
        .map_err(|e| CliFailure::config(format!("write {}: {e}", path.display())))?;
    if emit_plots {
        let mut data = String::new();
        for (i, v) in report.gas_per_call_series.iter().enumerate() {
            data.push_str(&format!("{i} {v:.6}\n"));
        }
        let path = out_dir.join(format!("gas_per_call_{}.dat", report.system));
        std::fs::write(&path, data)
            .map_err(|e| CliFailure::config(format!("write {}: {e}", path.display())))?;
    }
    Ok(())
}

/// Writes the trace's calls-per-block distribution and the fee-saving
/// estimate it implies (at full fee share).
fn write_cdf(out_dir: &Path, trace: &[batchsim::bench::TraceRecord]) -> Result<(), CliFailure> {
    let cdf = calls_per_block_cdf(trace, None);
    let mut text = String::from("bucket,fraction\n");
    for (label, fraction) in &cdf.buckets {
        text.push_str(&format!("{label},{fraction:.6}\n"));
    }
    text.push_str(&format!(
        "expected_fee_saving,{:.6}\n",
        expected_saving_from_cdf(&cdf, 1.0)
    ));
    let path = out_dir.join("calls_per_block_cdf.csv");
    std::fs::write(&path, text)
        .map_err(|e| CliFailure::config(format!("write {}: {e}", path.display())))?;
    Ok(())
}

fn run_systems(
    trace: &[batchsim::bench::TraceRecord],
    keystore: &Keystore,
    systems: &[SystemKind],
    cfg: &ReplayConfig,
    parallel: bool,
) -> Result<Vec<MetricsReport>, CliFailure> {
    let run_one = |system: SystemKind| -> Result<MetricsReport, CliFailure> {
        replay(trace, keystore, system, cfg)
            .map_err(|e| CliFailure::simulation(format!("{}: {e}", system.name())))
    };
    if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = systems
                .iter()
                .map(|&s| scope.spawn(move || run_one(s)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    } else {
        systems.iter().map(|&s| run_one(s)).collect()
    }
}

fn print_summary(reports: &[MetricsReport]) {
    let baseline = reports
        .iter()
        .find(|r| r.system == "b0")
        .map(|r| r.gas_per_call_mean);
    println!(
        "{:<10} {:>14} {:>12} {:>10} {:>12} {:>12}",
        "system", "gas/call", "vs b0", "batches", "mean size", "delay"
    );
    for r in reports {
        let vs = match baseline {
            Some(b0) if b0 > 0.0 && r.system != "b0" => {
                format!("{:+.2}%", (r.gas_per_call_mean / b0 - 1.0) * 100.0)
            }
            _ => "-".into(),
        };
        println!(
            "{:<10} {:>14.1} {:>12} {:>10} {:>12.2} {:>12.3}",
            r.system,
            r.gas_per_call_mean,
            vs,
            r.batches_formed,
            r.mean_batch_size(),
            r.block_delay_mean,
        );
    }
}

fn cmd_replay(args: &ReplayArgs, matches: &clap::ArgMatches) -> Result<(), CliFailure> {
    let resolved = args.policy.resolve(matches)?;
    let systems = parse_systems(&args.systems)?;
    let callee_kind = parse_callee(&args.callee)?;

    let keystore = Keystore::load(&args.keystore)
        .map_err(|e| CliFailure::trace(format!("keystore {}: {e}", args.keystore.display())))?;
    let trace = load_trace(&args.trace, &keystore)
        .map_err(|e| CliFailure::trace(format!("trace {}: {e}", args.trace.display())))?;

    let cfg = ReplayConfig {
        policy: resolved.spec,
        model: resolved.model,
        callee_kind,
        compute_delays: args.compute_delays,
        ..ReplayConfig::default()
    };
    let reports = run_systems(&trace, &keystore, &systems, &cfg, args.parallel)?;
    for report in &reports {
        write_report(&args.out, report, args.emit_plots)?;
    }
    if args.emit_chain {
        for system in &systems {
            let (_, history) = replay_with_history(&trace, &keystore, *system, &cfg)
                .map_err(|e| CliFailure::simulation(format!("{}: {e}", system.name())))?;
            let path = args.out.join(format!("chain_{}.csv", system.name()));
            std::fs::write(&path, history)
                .map_err(|e| CliFailure::config(format!("write {}: {e}", path.display())))?;
        }
    }
    write_cdf(&args.out, &trace)?;
    print_summary(&reports);
    Ok(())
}

fn cmd_bench(args: &BenchArgs, matches: &clap::ArgMatches) -> Result<(), CliFailure> {
    let resolved = args.policy.resolve(matches)?;
    let systems = parse_systems(&args.systems)?;
    let callee_kind = parse_callee(&args.callee)?;

    let mut policy = resolved.spec;
    let mode = match args.fixed_batch {
        Some(per_window) => {
            // Fixed-size batches: every window batches in full.
            policy.min_batch = 1;
            policy.max_batch = per_window.max(policy.max_batch);
            ArrivalMode::FixedBatch { per_window }
        }
        None => ArrivalMode::Poisson {
            rate_per_s: args.rate,
        },
    };
    let duration_s = match args.fixed_batch {
        Some(_) => args.windows * policy.window_s,
        None => args.duration,
    };
    let synth = SynthSpec {
        mode,
        duration_s,
        window_s: policy.window_s,
        callers: args.callers,
        callees: args.callees,
        price_min: args.price_min,
        price_max: args.price_max,
        seed: resolved.seed,
        callee_kind,
    };
    let (trace, keystore) = gen_synthetic(&synth);
    if trace.is_empty() {
        return Err(CliFailure::config(
            "synthetic spec generated an empty trace",
        ));
    }

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliFailure::config(format!("out dir {}: {e}", args.out.display())))?;
    std::fs::write(args.out.join("trace.csv"), trace_to_csv(&trace))
        .map_err(|e| CliFailure::config(format!("write trace.csv: {e}")))?;
    std::fs::write(args.out.join("keystore.csv"), keystore.to_string())
        .map_err(|e| CliFailure::config(format!("write keystore.csv: {e}")))?;

    let cfg = ReplayConfig {
        policy,
        model: resolved.model,
        callee_kind,
        compute_delays: false,
        ..ReplayConfig::default()
    };
    let reports = run_systems(&trace, &keystore, &systems, &cfg, args.parallel)?;
    for report in &reports {
        write_report(&args.out, report, false)?;
    }
    write_cdf(&args.out, &trace)?;
    print_summary(&reports);
    Ok(())
}

fn cmd_attack(args: &AttackArgs) -> Result<(), CliFailure> {
    let seed = args
        .seed
        .or_else(|| {
            std::env::var("BATCHSIM_SEED")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or(1);
    let scripts: Vec<AdversaryScript> = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliFailure::trace(format!("scenario {}: {e}", path.display())))?;
            parse_scenario(&text).map_err(CliFailure::trace)?
        }
        None => AttackKind::ALL
            .iter()
            .map(|&kind| AdversaryScript { kind, target: 1 })
            .collect(),
    };

    println!("{:<14} {:>7} {:>6}  outcome", "attack", "target", "run");
    let mut mismatches = 0usize;
    for script in &scripts {
        for run in 0..args.runs {
            let outcome = run_adversary(*script, seed.wrapping_add(run));
            let expected_prefix = match script.kind {
                AttackKind::Forge | AttackKind::ReplayR3 => "dispatcher-reject",
                AttackKind::ReplayR1 => "caller-refusal",
                AttackKind::ReplayR2 => "chain-reject",
                AttackKind::SplitR4 | AttackKind::Omit => "detected-by-audit",
                AttackKind::ImpersonateCollude => "impersonator-only",
            };
            let label = outcome.label();
            let ok = label.starts_with(expected_prefix);
            if !ok {
                mismatches += 1;
            }
            println!(
                "{:<14} {:>7} {:>6}  {}{}",
                script.kind.name(),
                script.target,
                run,
                label,
                if ok { "" } else { "  [UNEXPECTED]" }
            );
        }
    }
    if mismatches > 0 {
        return Err(CliFailure::simulation(format!(
            "{mismatches} attack run(s) ended at an unexpected defense point"
        )));
    }
    Ok(())
}

fn cmd_rewrite(args: &RewriteArgs) -> Result<(), CliFailure> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliFailure::trace(format!("{}: {e}", args.input.display())))?;
    let contract = ContractIR::from_json(&text)
        .map_err(|e| CliFailure::trace(format!("{}: {e}", args.input.display())))?;
    let dispatcher = Address::from_hex(&args.dispatcher).ok_or_else(|| {
        CliFailure::config(format!("bad dispatcher address `{}`", args.dispatcher))
    })?;
    let rewritten =
        rewrite(&contract, dispatcher).map_err(|e| CliFailure::simulation(e.to_string()))?;
    let out = match &args.out {
        Some(path) => path.clone(),
        None => {
            let stem = args
                .input
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("contract");
            args.input.with_file_name(format!("{stem}_byd.json"))
        }
    };
    std::fs::write(&out, rewritten.to_json())
        .map_err(|e| CliFailure::config(format!("write {}: {e}", out.display())))?;
    println!("{} -> {}", contract.name, out.display());
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliFailure> {
    let model = GasCostModel::default();
    match &args.what {
        AnalyzeCmd::Nmin { x } => {
            let n = model
                .n_min(*x)
                .map_err(|e| CliFailure::config(e.to_string()))?;
            println!("{n}");
        }
        AnalyzeCmd::Profit { chain, x, y } => match (chain, x, y) {
            (Some(name), None, None) => {
                let chain = KNOWN_CHAINS
                    .iter()
                    .find(|c| c.name == name.to_ascii_lowercase())
                    .ok_or_else(|| CliFailure::config(format!("unknown chain `{name}`")))?;
                println!(
                    "{}",
                    generic_profitability(chain.transfer_tx, chain.per_word)
                );
            }
            (None, Some(x), Some(y)) => println!("{}", generic_profitability(*x, *y)),
            _ => {
                return Err(CliFailure::config(
                    "profit needs either --chain or both --x and --y",
                ))
            }
        },
        AnalyzeCmd::Payments { n } => {
            let gas = model
                .payment_batch_per_call(*n)
                .map_err(|e| CliFailure::config(e.to_string()))?;
            println!("{gas}");
        }
        AnalyzeCmd::Costs { x, y, nmax } => {
            if *nmax < 1 {
                return Err(CliFailure::config("nmax must be at least 1"));
            }
            println!("{:>4} {:>14} {:>14} {:>14}", "n", "b0", "b1", "ibatch");
            for n in 1..=*nmax {
                let w = WorkloadShape::new(n, *x, *y);
                println!(
                    "{n:>4} {:>14} {:>14} {:>14}",
                    model.cost_b0(&w).unwrap(),
                    model.cost_b1(&w).unwrap(),
                    model.cost_ibatch(&w).unwrap(),
                );
            }
            match model.n_min(*x) {
                Ok(n) => println!("n_min = {n}"),
                Err(e) => println!("n_min: {e}"),
            }
        }
        AnalyzeCmd::Service { u, n, x, gas_price } => {
            let batch = if *n == 0 { None } else { Some(*n) };
            let p = service_pricing(*u, batch, *x, *gas_price)
                .map_err(|e| CliFailure::config(e.to_string()))?;
            println!("v_max_gas  = {}", p.v_max_gas);
            println!("v_min_gas  = {}", p.v_min_gas);
            println!("u_min      = {}", p.u_min);
            println!("v_max_gwei = {}", p.v_max_wei);
            println!("v_min_gwei = {}", p.v_min_wei);
        }
    }
    Ok(())
}

fn run() -> Result<(), CliFailure> {
    let command = <Cli as clap::CommandFactory>::command();
    let matches = command.try_get_matches().map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            CliFailure {
                code: 0,
                message: String::new(),
            }
        }
        _ => CliFailure::config(e.to_string()),
    })?;
    let cli = <Cli as clap::FromArgMatches>::from_arg_matches(&matches)
        .map_err(|e| CliFailure::config(e.to_string()))?;
    match &cli.command {
        Command::Replay(args) => cmd_replay(
            args,
            matches
                .subcommand_matches("replay")
                .expect("replay matches"),
        ),
        Command::Bench(args) => cmd_bench(
            args,
            matches.subcommand_matches("bench").expect("bench matches"),
        ),
        Command::Attack(args) => cmd_attack(args),
        Command::Rewrite(args) => cmd_rewrite(args),
        Command::Analyze(args) => cmd_analyze(args),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            if !failure.message.is_empty() {
                eprintln!("error: {}", failure.message);
            }
            ExitCode::from(failure.code)
        }
    }
}
