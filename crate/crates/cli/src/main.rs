//! `retent`: evaluate, optimize and attack Markov-chain patrol strategies.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use return_entropy::graphs::{build_graph, validate_chain, GraphKind};
use return_entropy::hitting::return_time_distribution;
use return_entropy::intruder::{
    attack_plan, capture_curve, curve_to_csv, simulate_capture, IntruderParams, DEFAULT_DELTA,
};
use return_entropy::io::{load_chain, load_graph, parse_tau_range, save_chain, save_graph};
use return_entropy::optimize::{
    evaluate_all, optimize_chain, Objective, OptimizerConfig, DEFAULT_ETA_EVAL,
};
use return_entropy::{
    Error, FeasibleSetSpec, StationaryDistribution, TransitionMatrix, WeightedDigraph,
};

#[derive(Parser)]
#[command(
    name = "retent",
    version,
    about = "Markov-chain patrol strategies with maximal return-time entropy"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute every metric of a chain.
    Eval(EvalArgs),
    /// Optimize a chain for one objective.
    Optimize(OptimizeArgs),
    /// Capture probabilities of a rational intruder against one or more chains.
    Intruder(IntruderArgs),
    /// Return-time distribution of one node as CSV.
    Dist(DistArgs),
    /// Graph utilities.
    #[command(subcommand)]
    Graph(GraphCommand),
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Write a graph (built-in or file) as JSON.
    Export(ExportArgs),
}

#[derive(Args)]
struct GraphArg {
    /// Built-in graph (`ring:8`, `grid:4x4`, `complete:4`, `sf`) or a graph JSON file.
    #[arg(long)]
    graph: String,

    /// Minimum probability on every edge.
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[arg(long)]
    chain: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ETA_EVAL)]
    eta_eval: f64,
    /// Output JSON file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[arg(long, default_value = "return-entropy")]
    objective: Objective,
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    #[arg(long, default_value_t = DEFAULT_ETA_EVAL)]
    eta_eval: f64,
    #[arg(long, default_value_t = 5)]
    starts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Output JSON file; the chain is also written next to it as `<stem>.chain.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IntruderArgs {
    #[command(flatten)]
    graph: GraphArg,
    /// Chain files (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    chain: Vec<PathBuf>,
    /// Single attack duration.
    #[arg(long, conflicts_with = "tau_range")]
    tau: Option<u32>,
    /// Inclusive range of attack durations, e.g. `1..20`.
    #[arg(long)]
    tau_range: Option<String>,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    delta: f64,
    /// Also write the per-node attack plan at this duration.
    #[arg(long)]
    plan_at: Option<u32>,
    /// Monte Carlo trials at `--plan-at` (0 disables the simulation).
    #[arg(long, default_value_t = 0)]
    simulate: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[arg(long)]
    chain: PathBuf,
    #[arg(long)]
    node: usize,
    #[arg(long, default_value_t = 100)]
    horizon: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    graph: GraphArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    const IO: u8 = 1;
    const VALIDATION: u8 = 2;
    const OPTIMIZATION: u8 = 3;

    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: Self::VALIDATION,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => Self::IO,
            Error::OptimizationFailed(_) | Error::ProjectionNotConverged { .. } => {
                Self::OPTIMIZATION
            }
            _ => Self::VALIDATION,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: Self::IO,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Serialize)]
struct RunManifest {
    command: String,
    inputs: Vec<String>,
    config: Value,
    seed: Option<u64>,
    version: &'static str,
    wall_time_secs: f64,
}

struct Run {
    command: &'static str,
    start: Instant,
    inputs: Vec<String>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            start: Instant::now(),
            inputs: Vec::new(),
        }
    }

    fn write_manifest(&self, path: &Path, config: Value, seed: Option<u64>) -> CliResult {
        let manifest = RunManifest {
            command: self.command.to_string(),
            inputs: self.inputs.clone(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION"),
            wall_time_secs: self.start.elapsed().as_secs_f64(),
        };
        write_json(path, &manifest)
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n")?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_spec(arg: &GraphArg, run: &mut Run) -> CliResult<FeasibleSetSpec> {
    let (graph, pi) = resolve_graph(&arg.graph, run)?;
    Ok(FeasibleSetSpec::new(graph, pi, arg.eps)?)
}

fn resolve_graph(
    text: &str,
    run: &mut Run,
) -> CliResult<(WeightedDigraph, StationaryDistribution)> {
    run.inputs.push(text.to_string());
    if let Ok(kind) = text.parse::<GraphKind>() {
        return Ok(build_graph(kind)?);
    }
    if !Path::new(text).exists() {
        return Err(Failure::validation(format!(
            "'{text}' is neither a built-in graph nor an existing file"
        )));
    }
    let loaded = load_graph(text)?;
    if loaded.was_rescaled() {
        eprintln!(
            "warning: travel times divided by their common factor {}",
            loaded.gcd_factor
        );
    }
    Ok((loaded.graph, loaded.pi))
}

fn load_valid_chain(
    path: &Path,
    spec: &FeasibleSetSpec,
    run: &mut Run,
) -> CliResult<TransitionMatrix> {
    run.inputs.push(path.display().to_string());
    let chain = load_chain(path).map_err(|e| match e {
        Error::Io(io) => Failure::from(io),
        other => Failure::validation(format!("{}: {other}", path.display())),
    })?;
    let report = validate_chain(&chain, spec)?;
    if !report.is_feasible() {
        return Err(Failure::validation(format!(
            "{} is not a feasible chain for this graph:\n{report}",
            path.display()
        )));
    }
    Ok(chain)
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let mut run = Run::new("eval");
    let spec = load_spec(&args.graph, &mut run)?;
    let chain = load_valid_chain(&args.chain, &spec, &mut run)?;
    let metrics = evaluate_all(&chain, &spec, args.eta_eval)?;
    let text = serde_json::to_string_pretty(&metrics).expect("serializable") + "\n";
    emit(args.out.as_deref(), &text)?;
    if let Some(out) = &args.out {
        let config = json!({ "eta_eval": args.eta_eval, "eps": args.graph.eps });
        run.write_manifest(&manifest_path(out), config, None)?;
    }
    Ok(())
}

fn cmd_optimize(args: OptimizeArgs) -> CliResult {
    let mut run = Run::new("optimize");
    let spec = load_spec(&args.graph, &mut run)?;
    let config = OptimizerConfig {
        eta: args.eta,
        max_iters: args.max_iters,
        starts: args.starts,
        seed: args.seed,
        ..Default::default()
    };
    config.validate()?;
    let result = optimize_chain(args.objective, &spec, &config).map_err(|e| match e {
        Error::InvalidParameter(_) | Error::Infeasible(_) => Failure::from(e),
        other => Failure {
            code: Failure::OPTIMIZATION,
            message: other.to_string(),
        },
    })?;
    let metrics = evaluate_all(&result.chain, &spec, args.eta_eval)?;
    let body = json!({ "result": result, "metrics": metrics });
    let text = serde_json::to_string_pretty(&body).expect("serializable") + "\n";
    emit(args.out.as_deref(), &text)?;
    if let Some(out) = &args.out {
        let stem = out
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .into_owned();
        save_chain(
            out.with_file_name(format!("{stem}.chain.json")),
            &result.chain,
        )?;
        let echo = json!({
            "objective": args.objective,
            "eps": args.graph.eps,
            "eta_eval": args.eta_eval,
            "optimizer": config,
        });
        run.write_manifest(&manifest_path(out), echo, Some(args.seed))?;
    }
    Ok(())
}

fn chain_label(path: &Path, index: usize, used: &mut Vec<String>) -> String {
    let mut stem = path
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    if let Some(s) = stem.strip_suffix(".chain") {
        stem = s.to_string();
    }
    if stem.is_empty() || used.contains(&stem) {
        stem = format!("{stem}{index}");
    }
    used.push(stem.clone());
    stem
}

fn cmd_intruder(args: IntruderArgs) -> CliResult {
    let mut run = Run::new("intruder");
    let spec = load_spec(&args.graph, &mut run)?;
    let taus = match (&args.tau, &args.tau_range) {
        (Some(t), None) => vec![*t],
        (None, Some(r)) => parse_tau_range(r)?,
        (None, None) => parse_tau_range("1..20")?,
        (Some(_), Some(_)) => unreachable!("clap rejects both"),
    };
    if taus.contains(&0) {
        return Err(Failure::validation("tau must be >= 1"));
    }
    fs::create_dir_all(&args.out)?;
    let mut used = Vec::new();
    let mut outputs = Vec::new();
    for (idx, path) in args.chain.iter().enumerate() {
        let chain = load_valid_chain(path, &spec, &mut run)?;
        let label = chain_label(path, idx, &mut used);
        let (g, pi) = (&spec.graph, &spec.pi);
        let curve = capture_curve(&chain, g, pi, args.delta, &taus)?;
        let csv = args.out.join(format!("{label}.capture.csv"));
        fs::write(&csv, curve_to_csv(&curve))?;
        outputs.push(csv.display().to_string());
        if let Some(tau) = args.plan_at {
            let params = IntruderParams::new(tau, args.delta)?;
            let plan = attack_plan(&chain, g, pi, params)?;
            let total: f64 = plan
                .nodes
                .iter()
                .zip(pi.as_slice())
                .map(|(n, w)| n.capture * w)
                .sum();
            let mut body = json!({ "plan": plan, "total": total });
            if args.simulate > 0 {
                let sim = simulate_capture(&chain, g, pi, params, args.simulate, args.seed)?;
                body["simulation"] = serde_json::to_value(sim).expect("serializable");
            }
            let plan_path = args.out.join(format!("{label}.plan.json"));
            write_json(&plan_path, &body)?;
            outputs.push(plan_path.display().to_string());
        }
    }
    let config = json!({
        "taus": taus,
        "delta": args.delta,
        "plan_at": args.plan_at,
        "simulate": args.simulate,
        "eps": args.graph.eps,
        "outputs": outputs,
    });
    run.write_manifest(&args.out.join("manifest.json"), config, Some(args.seed))
}

fn cmd_dist(args: DistArgs) -> CliResult {
    let mut run = Run::new("dist");
    let spec = load_spec(&args.graph, &mut run)?;
    let chain = load_valid_chain(&args.chain, &spec, &mut run)?;
    let dist = return_time_distribution(&chain, &spec.graph, args.node, args.horizon)?;
    emit(args.out.as_deref(), &dist.to_csv())?;
    if let Some(out) = &args.out {
        let config = json!({ "node": args.node, "horizon": args.horizon });
        run.write_manifest(&manifest_path(out), config, None)?;
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> CliResult {
    let mut run = Run::new("graph export");
    let spec = load_spec(&args.graph, &mut run)?;
    match &args.out {
        Some(out) => {
            save_graph(out, &spec.graph, &spec.pi)?;
            run.write_manifest(&manifest_path(out), json!({}), None)?;
        }
        None => println!(
            "{}",
            return_entropy::io::graph_to_json(&spec.graph, &spec.pi)
        ),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            log::warn!("could not configure {threads} threads: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Eval(a) => cmd_eval(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Intruder(a) => cmd_intruder(a),
        Command::Dist(a) => cmd_dist(a),
        Command::Graph(GraphCommand::Export(a)) => cmd_export(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
