//! servesim: a deterministic serving-engine simulator on the command line.
//!
//! - `run`: one engine over a workload; writes a report, prints a summary.
//! - `compare`: two engine variants under an A/B split or shadow dispatch;
//!   writes both reports plus a diff table.
//! - `gen`: seeded synthetic workload, saved as a trace CSV.
//! - `serve`: line-delimited-JSON batch protocol on a local TCP socket.
//!
//! Exit codes: 0 success; 1 configuration, workload, or I/O error; 2 engine
//! deadlock. Summaries and tables go to stdout, diagnostics to stderr.

use clap::{Args, Parser, Subcommand, ValueEnum};
use servesim_core::engine::{Engine, EngineError};
use servesim_core::experiment::{load_experiment, ExperimentConfig, WorkloadSource};
use servesim_core::gateway::{
    diff_report, dispatch_workload, GatewayError, SplitConfig, SplitMode,
};
use servesim_core::metrics::{write_report, MetricsReport, ReportFormat};
use servesim_core::server;
use servesim_core::workload::{
    load_trace_from_path, save_trace_to_path, ArrivalModel, WorkloadSpec,
};
use servesim_core::Request;
use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "servesim", version, about = "Deterministic LLM-serving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one engine over a workload and report its metrics
    Run(RunArgs),
    /// Run two engine variants (A/B split or shadow) and diff their reports
    Compare(CompareArgs),
    /// Generate a seeded workload and save it as a trace CSV
    Gen(GenArgs),
    /// Serve the line-JSON batch protocol on a local TCP socket
    Serve(ServeArgs),
}

/// Flags shared by `run` and `compare`.
#[derive(Args)]
struct IoArgs {
    /// Experiment config file (flat `key = value` lines)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,

    /// Report path for `run`, report path prefix for `compare`;
    /// overrides `output.path`
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Report format; overrides `output.format`
    #[arg(long, value_enum, value_name = "FMT")]
    format: Option<FormatArg>,

    /// Workload seed; overrides `workload.seed` (generated workloads only)
    #[arg(long)]
    seed: Option<u64>,

    /// Replay this trace CSV instead of the config's workload
    #[arg(long, value_name = "FILE")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    io: IoArgs,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    io: IoArgs,

    /// Dispatch mode; overrides `split.mode`
    #[arg(long, value_enum, value_name = "MODE")]
    mode: Option<ModeArg>,

    /// Fraction of traffic routed to variant B in [0, 1];
    /// overrides `split.b_weight`
    #[arg(long, value_name = "W")]
    b_weight: Option<f64>,
}

#[derive(Args)]
struct GenArgs {
    /// PRNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Number of requests
    #[arg(long)]
    n: usize,

    /// Poisson arrival rate per 10^6 cu; omit for all arrivals at t=0
    #[arg(long, value_name = "RATE")]
    rate: Option<f64>,

    /// Smallest prompt length in tokens
    #[arg(long, value_name = "TOKENS")]
    prompt_min: usize,

    /// Largest prompt length in tokens
    #[arg(long, value_name = "TOKENS")]
    prompt_max: usize,

    /// Smallest target output length in tokens
    #[arg(long, value_name = "TOKENS")]
    output_min: usize,

    /// Largest target output length in tokens
    #[arg(long, value_name = "TOKENS")]
    output_max: usize,

    /// Trace CSV destination
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    /// Experiment config for the two variants and split settings;
    /// defaults apply when omitted
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// TCP port on 127.0.0.1; 0 picks a free port
    #[arg(long, default_value_t = 0)]
    port: u16,

    /// Dispatch mode; overrides `split.mode`
    #[arg(long, value_enum, value_name = "MODE")]
    mode: Option<ModeArg>,

    /// Fraction of traffic routed to variant B in [0, 1];
    /// overrides `split.b_weight`
    #[arg(long, value_name = "W")]
    b_weight: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Ab,
    Shadow,
}

impl From<ModeArg> for SplitMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ab => SplitMode::AbSplit,
            ModeArg::Shadow => SplitMode::Shadow,
        }
    }
}

/// Every failure funnels into one of the two non-zero exit codes.
enum CliError {
    /// Exit 1: configuration, workload, or I/O problem.
    Usage(String),
    /// Exit 2: the engine reported a deadlock.
    Deadlock(String),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; those print to stdout and
            // succeed, while real usage errors exit 1 (2 means deadlock)
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Gen(args) => cmd_gen(args),
        Command::Serve(args) => cmd_serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Deadlock(msg)) => {
            eprintln!("deadlock: {msg}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.io.config)?;
    let requests = resolve_requests(&cfg, &args.io)?;
    let output = Engine::run_to_completion(cfg.engine.clone(), &requests).map_err(engine_err)?;
    let format = args.io.format.map(ReportFormat::from).unwrap_or(cfg.format);
    if let Some(path) = output_path(&args.io, &cfg) {
        write_file(&path, &write_report(&output.report, format))?;
    }
    print!("{}", summary(&output.report));
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.io.config)?;
    let requests = resolve_requests(&cfg, &args.io)?;
    let split = SplitConfig {
        variant_a: cfg.variant_a.clone(),
        variant_b: cfg.variant_b.clone(),
        b_weight: args.b_weight.unwrap_or(cfg.b_weight),
        mode: args.mode.map(SplitMode::from).unwrap_or(cfg.split_mode),
    };
    let output = dispatch_workload(&requests, &split).map_err(gateway_err)?;
    let diff = diff_report(&output.a.report, &output.b.report);
    let format = args.io.format.map(ReportFormat::from).unwrap_or(cfg.format);
    if let Some(prefix) = output_path(&args.io, &cfg) {
        let ext = match format {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        };
        let sibling = |suffix: &str| {
            let mut name = prefix.as_os_str().to_owned();
            name.push(suffix);
            PathBuf::from(name)
        };
        write_file(&sibling(&format!(".a.{ext}")), &write_report(&output.a.report, format))?;
        write_file(&sibling(&format!(".b.{ext}")), &write_report(&output.b.report, format))?;
        write_file(&sibling(".diff.csv"), diff.to_csv().as_bytes())?;
    }
    print!("{}", diff.render());
    Ok(())
}

fn cmd_gen(args: GenArgs) -> Result<(), CliError> {
    let spec = WorkloadSpec {
        seed: args.seed,
        n_requests: args.n,
        arrival: match args.rate {
            Some(rate_per_mcu) => ArrivalModel::Poisson { rate_per_mcu },
            None => ArrivalModel::AtZero,
        },
        prompt_len: (args.prompt_min, args.prompt_max),
        output_len: (args.output_min, args.output_max),
    };
    let requests = spec.generate().map_err(|e| CliError::Usage(e.to_string()))?;
    save_trace_to_path(&args.out, &requests)
        .map_err(|e| CliError::Usage(format!("writing {}: {e}", args.out.display())))?;
    println!("generated {} requests -> {}", requests.len(), args.out.display());
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    let split = SplitConfig {
        variant_a: cfg.variant_a,
        variant_b: cfg.variant_b,
        b_weight: args.b_weight.unwrap_or(cfg.b_weight),
        mode: args.mode.map(SplitMode::from).unwrap_or(cfg.split_mode),
    };
    split.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let listener = TcpListener::bind(("127.0.0.1", args.port))
        .map_err(|e| CliError::Usage(format!("binding 127.0.0.1:{}: {e}", args.port)))?;
    let addr = listener
        .local_addr()
        .map_err(|e| CliError::Usage(format!("reading bound address: {e}")))?;
    eprintln!("listening on {addr}");
    server::serve(listener, &split).map_err(|e| CliError::Usage(format!("serving: {e}")))
}

fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    load_experiment(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

/// Workload precedence: `--trace` flag, then the config's source. A seed
/// override only makes sense for generated workloads — a trace already pins
/// every request, so `--seed` combined with a trace is refused loudly.
fn resolve_requests(cfg: &ExperimentConfig, io: &IoArgs) -> Result<Vec<Request>, CliError> {
    let seed_on_trace =
        "--seed cannot apply to a trace replay: the trace pins every request".to_string();
    if let Some(path) = &io.trace {
        if io.seed.is_some() {
            return Err(CliError::Usage(seed_on_trace));
        }
        return load_trace_from_path(path)
            .map_err(|e| CliError::Usage(format!("trace {}: {e}", path.display())));
    }
    match cfg.resolve_workload().map_err(CliError::Usage)? {
        None => Err(CliError::Usage(
            "no workload: set workload.* keys in the config or pass --trace".to_string(),
        )),
        Some(WorkloadSource::Trace(path)) => {
            if io.seed.is_some() {
                return Err(CliError::Usage(seed_on_trace));
            }
            load_trace_from_path(&path).map_err(|e| CliError::Usage(format!("trace {path}: {e}")))
        }
        Some(WorkloadSource::Spec(mut spec)) => {
            if let Some(seed) = io.seed {
                spec.seed = seed;
            }
            spec.generate().map_err(|e| CliError::Usage(e.to_string()))
        }
    }
}

fn output_path(io: &IoArgs, cfg: &ExperimentConfig) -> Option<PathBuf> {
    io.out.clone().or_else(|| cfg.output_path.clone().map(PathBuf::from))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Usage(format!("writing {}: {e}", path.display())))
}

fn engine_err(e: EngineError) -> CliError {
    match e {
        EngineError::Deadlock(msg) => CliError::Deadlock(msg),
        other => CliError::Usage(other.to_string()),
    }
}

fn gateway_err(e: GatewayError) -> CliError {
    match e {
        GatewayError::Engine { variant, source: EngineError::Deadlock(msg) } => {
            CliError::Deadlock(format!("variant {variant}: {msg}"))
        }
        GatewayError::Engine { variant, source } => {
            CliError::Usage(format!("variant {variant}: {source}"))
        }
        other => CliError::Usage(other.to_string()),
    }
}

/// The stdout summary for `run`: one aggregate per line, fixed layout.
fn summary(report: &MetricsReport) -> String {
    let a = &report.aggregates;
    let total_preemptions: u64 = report.per_request.iter().map(|r| r.preemptions as u64).sum();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "requests      finished {}, rejected {}",
        report.per_request.len(),
        a.rejected_count
    );
    let _ = writeln!(s, "makespan      {} cu", a.makespan_cu);
    let _ = writeln!(s, "tokens        {}", a.total_output_tokens);
    let _ = writeln!(s, "throughput    {:.6} tokens/cu", a.throughput_tokens_per_cu);
    let _ = writeln!(
        s,
        "ttft cu       mean {:.1}  median {}  p99 {}",
        a.mean_ttft_cu, a.median_ttft_cu, a.p99_ttft_cu
    );
    let _ = writeln!(
        s,
        "e2e cu        mean {:.1}  median {}  p99 {}",
        a.mean_e2e_cu, a.median_e2e_cu, a.p99_e2e_cu
    );
    let _ = writeln!(
        s,
        "blocks        peak utilization {:.6}  mean internal frag {:.1} tokens",
        a.peak_block_utilization, a.mean_internal_frag_tokens
    );
    let _ = writeln!(s, "preemptions   {total_preemptions}");
    s
}
