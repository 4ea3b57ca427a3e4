use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use maestro_core::bench::{self, task_schedule, TaskBundle};
use maestro_core::cstep::Strategy;
use maestro_core::doc::{self, to_canonical, DocError};
use maestro_core::graph::{to_dot, to_dot_diff};
use maestro_core::maestro::{self, MaestroError, Mode, RunSpec};
use maestro_core::protocol::serve_external_node;

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Budget(String),
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Budget(_) => EXIT_BUDGET,
            CliError::Failed(_) => EXIT_FAILURE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Invalid(m) | CliError::Budget(m) | CliError::Failed(m) => m,
        }
    }
}

impl From<DocError> for CliError {
    fn from(e: DocError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<MaestroError> for CliError {
    fn from(e: MaestroError) -> Self {
        match e {
            MaestroError::BudgetExhausted { .. } => CliError::Budget(e.to_string()),
            MaestroError::InvalidRunSpec(_) | MaestroError::Graph(_) | MaestroError::Config(_) => {
                CliError::Invalid(e.to_string())
            }
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<bench::OracleError> for CliError {
    fn from(e: bench::OracleError) -> Self {
        match e {
            bench::OracleError::Eval(_) => CliError::Failed(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

/// Joint graph and configuration optimizer for agent computation graphs.
///
/// Exit status: 0 on success, 2 on an invalid document or run spec, 3 when
/// the budget cannot pay for the first evaluation, 1 on any other failure.
#[derive(Parser, Debug)]
#[command(name = "maestro-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Optimize a design and write the run's artifacts.
    Optimize(OptimizeArgs),
    /// Score a fixed design without optimizing it.
    Eval(EvalArgs),
    /// Print a bundle's initial design as a document.
    Export(ExportArgs),
    /// Answer node-function requests on stdin/stdout.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// Built-in bundle name or bundle document path.
    #[arg(long, default_value = "constraintsat")]
    task: String,
    /// Seed for the named bundle's task generator.
    #[arg(long, default_value_t = 0)]
    task_seed: u64,
    /// Graph document replacing the bundle's graph.
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Configuration-space document replacing the bundle's space.
    #[arg(long)]
    space: Option<PathBuf>,
    /// Assignment document replacing the bundle's configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Run-spec document; flags given explicitly override its fields.
    #[arg(long)]
    run_spec: Option<PathBuf>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    iters: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    radius: Option<u32>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    explore_weight: Option<f64>,
    #[arg(long)]
    population: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "maestro-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    design: DesignArgs,
    /// Number of tasks to score, from the start of the split.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Export {
    Graph,
    Space,
    Config,
    Dot,
    Bundle,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(value_enum)]
    what: Export,
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Bundle whose node functions are served.
    #[arg(long, default_value = "constraintsat")]
    task: String,
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn load_task(task: &str, seed: u64) -> Result<(TaskBundle, doc::BundleDoc), CliError> {
    let path = Path::new(task);
    let d = if path.is_file() {
        doc::parse_bundle_doc(&read(path)?)?
    } else if bench::by_name(task, seed).is_some() {
        doc::parse_bundle_doc(&json!({ "kind": task, "seed": seed }).to_string())?
    } else {
        return Err(CliError::Invalid(format!("unknown task {task:?}")));
    };
    Ok((doc::load_bundle(&d)?, d))
}

fn load_design(args: &DesignArgs) -> Result<(TaskBundle, doc::BundleDoc), CliError> {
    let (mut bundle, mut d) = load_task(&args.task, args.task_seed)?;
    if let Some(p) = &args.graph {
        d.graph = Some(doc::parse_graph(&read(p)?)?);
    }
    if let Some(p) = &args.space {
        d.space = Some(doc::parse_space(&read(p)?)?);
    }
    if let Some(p) = &args.config {
        d.assignment = Some(doc::parse_assignment(&read(p)?)?);
    }
    if args.graph.is_some() || args.space.is_some() || args.config.is_some() {
        bundle = doc::load_bundle(&d)?;
    }
    Ok((bundle, d))
}

fn run_spec(args: &OptimizeArgs) -> Result<RunSpec, CliError> {
    let mut spec = match &args.run_spec {
        Some(p) => doc::parse_run_spec(&read(p)?)?,
        None => RunSpec::new(600, 4, 0),
    };
    if let Some(v) = args.budget {
        spec.budget = v;
    }
    if let Some(v) = args.iters {
        spec.iterations = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    if let Some(v) = args.mode {
        spec.mode = v;
    }
    if let Some(v) = args.radius {
        spec.radius = v;
    }
    if args.tau.is_some() {
        spec.tau = args.tau;
    }
    if args.kappa.is_some() {
        spec.kappa = args.kappa;
    }
    if let Some(v) = args.strategy {
        spec.strategy = v;
    }
    if let Some(v) = args.minibatch {
        spec.minibatch = v;
    }
    if let Some(v) = args.explore_weight {
        spec.cstep.explore_weight = v;
    }
    if let Some(v) = args.population {
        spec.cstep.population = v;
    }
    spec.check()?;
    Ok(spec)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

fn unix_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn optimize(args: &OptimizeArgs) -> Result<(), CliError> {
    let started = unix_seconds();
    let spec = run_spec(args)?;
    let (bundle, _) = load_design(&args.design)?;
    let ctx = bundle.edit_context();
    let outcome = maestro::run(&spec, &bundle.problem(&ctx))?;
    let state = &outcome.state;

    let test_initial = bundle.score_test(&bundle.graph, &bundle.space, &bundle.assignment, spec.seed)?;
    let test_final = bundle.score_test(&state.graph, &state.space, &state.assignment, spec.seed)?;

    fs::create_dir_all(&args.out).map_err(|e| CliError::Failed(format!("{}: {e}", args.out.display())))?;
    let out = args.out.as_path();
    write(out, "history.jsonl", &outcome.history.to_text())?;
    write(out, "run-spec.json", &to_canonical(&spec))?;
    write(out, "final-graph.json", &to_canonical(&state.graph))?;
    write(out, "final-space.json", &to_canonical(&state.space))?;
    write(out, "final-config.json", &to_canonical(&state.assignment))?;
    write(out, "diff.dot", &to_dot_diff(&bundle.graph, &state.graph))?;
    let report = json!({
        "task": bundle.name,
        "report": outcome.report,
        "iterations": outcome.iterations,
        "initial": outcome.initial_estimate,
        "final": state.estimate,
        "test": { "initial": test_initial, "final": test_final },
        "ledger": { "used": outcome.ledger.used, "cost": outcome.ledger.cost_sum },
    });
    write(out, "report.json", &to_canonical(&report))?;
    let metadata = json!({
        "tool": "maestro-forge",
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_seconds(),
    });
    write(out, "metadata.json", &to_canonical(&metadata))?;

    let summary = json!({
        "initial": outcome.initial_estimate.mean,
        "final": state.estimate.mean,
        "test_initial": test_initial.mean,
        "test_final": test_final.mean,
        "rollouts": outcome.report.rollouts,
        "accepted_edits": outcome.report.accepted_edits,
    });
    println!("{summary}");
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<(), CliError> {
    let (bundle, _) = load_design(&args.design)?;
    bundle.check()?;
    let tasks = match args.split {
        Split::Train => &bundle.train,
        Split::Test => &bundle.test,
    };
    let n = args.n.unwrap_or(tasks.len());
    if n == 0 || n > tasks.len() {
        return Err(CliError::Invalid(format!("--n must be in 1..={}", tasks.len())));
    }
    let schedule = task_schedule(&tasks[..n], args.seed);
    let est = bench::score_design(
        &bundle.registry,
        bundle.metric.as_ref(),
        &bundle.graph,
        &bundle.space,
        &bundle.assignment,
        &schedule,
    )?;
    println!(
        "{}",
        json!({ "mean": est.mean, "count": est.count, "mean_cost": est.mean_cost })
    );
    Ok(())
}

fn export(args: &ExportArgs) -> Result<(), CliError> {
    let (bundle, d) = load_design(&args.design)?;
    let text = match args.what {
        Export::Graph => to_canonical(&bundle.graph),
        Export::Space => to_canonical(&bundle.space),
        Export::Config => to_canonical(&bundle.assignment),
        Export::Dot => to_dot(&bundle.graph),
        Export::Bundle => to_canonical(&d),
    };
    print!("{text}");
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<(), CliError> {
    let (bundle, _) = load_task(&args.task, 0)?;
    let stdin = io::stdin();
    let stats = serve_external_node(BufReader::new(stdin.lock()), io::stdout().lock(), &bundle.registry)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    log::info!("served {} requests, {} errors", stats.answered, stats.errors);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAESTRO_FORGE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Optimize(a) => optimize(a),
        Command::Eval(a) => eval(a),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
