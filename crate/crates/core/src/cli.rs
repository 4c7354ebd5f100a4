//! Command implementations for the `bespoke-forge` binary.
//!
//! Every failure surfaces as a [`CliError`], which `main` prints to stderr as
//! a JSON object `{"error": {"kind", "message"}}` before exiting nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codegen::{
    build_config, emit_call_program, emit_core_program, emit_hdl, max_slots, CallProgram, CodegenError, CoprocConfig,
    HdlManifest, Slot, DEFAULT_ACCUMULATOR_BITS, REGISTER_BITS,
};
use crate::cost::{coproc_cost, monte_carlo, CoprocSpec, MonteCarloConfig};
use crate::model::{
    generate_sample_model, load_model, parse_topology, random_input, reference_inference, ModelError, QuantizedMlp,
    SampleSpec, REFERENCE_TOPOLOGIES,
};
use crate::sim::{combine, run_inference, simulate_baseline, MachineConfig, SimError, SimReport};
use crate::solver::{
    default_budget, default_candidates, solve, validate_outcome, Optimality, ProblemInstance, Selection, SolveBudget,
    SolveError, SolveMode, SolveOutcome,
};

pub const THREADS_ENV: &str = "BESPOKE_FORGE_THREADS";
/// Work limit of a reproducible run when none is given.
pub const DEFAULT_REPRODUCIBLE_WORK: u64 = 20_000_000;
pub const DEFAULT_TIME_LIMIT_S: f64 = 60.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    BudgetExceeded(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codegen(#[from] CodegenError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Usage(String),
    #[error("the input set is empty")]
    EmptyInputSet,
    #[error("solver returned an invalid schedule: {0}")]
    InvalidSchedule(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::BudgetExceeded(_) | CliError::Codegen(CodegenError::BudgetExceeded { .. }) => "BudgetExceeded",
            CliError::Solve(SolveError::Infeasible(_)) => "Infeasible",
            CliError::Solve(SolveError::TimeBudgetExceeded) => "TimeBudgetExceeded",
            CliError::Solve(SolveError::InvalidInstance(_)) => "InvalidInstance",
            CliError::Solve(SolveError::InstanceTooLarge(_)) => "InstanceTooLarge",
            CliError::Model(_) => "ModelError",
            CliError::Codegen(_) => "CodegenError",
            CliError::Sim(SimError::AccumulatorOverflow { .. }) => "AccumulatorOverflow",
            CliError::Sim(SimError::ProgramConfigMismatch(_)) => "ProgramConfigMismatch",
            CliError::Sim(_) => "SimError",
            CliError::Io { .. } => "IoError",
            CliError::Parse(_) => "ParseError",
            CliError::Usage(_) => "UsageError",
            CliError::EmptyInputSet => "EmptyInputSet",
            CliError::InvalidSchedule(_) => "InvalidSchedule",
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.kind(), "message": self.to_string()}}).to_string()
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "bespoke-forge", version, about = "Bespoke MAC co-processor compiler, simulator and cost reporter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve constant selection and scheduling, then emit HDL and programs.
    Compile(CompileArgs),
    /// Run a compiled program on the simulated machine.
    Simulate(SimulateArgs),
    /// Compare machines on the same models.
    Compare(CompareArgs),
    /// Area/power proxy of a configuration, or a Monte Carlo sweep.
    Costreport(CostArgs),
    /// Write seeded random sample models.
    Sample(SampleArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Exact,
    Heuristic,
}

impl From<ModeArg> for SolveMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => SolveMode::Exact,
            ModeArg::Heuristic => SolveMode::Heuristic,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Multiplier budget (default: as many slots as fit 64 operand bits).
    #[arg(long)]
    pub budget: Option<u32>,
    /// Candidate constants, as `lo..hi` (inclusive) or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    pub candidates: Option<String>,
    #[arg(long, value_enum, default_value = "exact")]
    pub mode: ModeArg,
    /// Wall-clock limit for the exact search, in seconds; ignored when reproducible.
    #[arg(long)]
    pub time_limit: Option<f64>,
    /// Search work limit; makes the cut-off point reproducible.
    #[arg(long)]
    pub work_limit: Option<u64>,
    /// Maximum cycles per neuron.
    #[arg(long)]
    pub horizon: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_ACCUMULATOR_BITS)]
    pub accumulator_bits: u32,
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Budget sweep `lo..hi[:step]`, one solution directory per budget.
    #[arg(long, conflicts_with = "budget")]
    pub budget_sweep: Option<String>,
    /// Seed of the reference input the call program words are packed for.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Single-threaded, work-limited, no timing data in outputs.
    #[arg(long)]
    pub reproducible: bool,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MachineArgs {
    #[arg(long, default_value_t = crate::sim::DEFAULT_CLOCK_HZ)]
    pub clock: u64,
    #[arg(long, default_value_t = crate::sim::DEFAULT_MEM_READ_CYCLES)]
    pub mem_read: u64,
    #[arg(long, default_value_t = crate::sim::DEFAULT_MEM_WRITE_CYCLES)]
    pub mem_write: u64,
    #[arg(long, default_value_t = crate::sim::DEFAULT_CORE_CPI)]
    pub core_cpi: u64,
    #[arg(long, default_value_t = crate::sim::DEFAULT_HANDSHAKE_CYCLES)]
    pub handshake: u64,
}

impl MachineArgs {
    fn apply(&self, mut m: MachineConfig) -> Result<MachineConfig> {
        if self.clock == 0 || self.mem_read == 0 || self.mem_write == 0 || self.core_cpi == 0 {
            return Err(CliError::Usage("clock and cycle costs must be at least 1".into()));
        }
        m.clock_hz = self.clock;
        m.mem_read_cycles = self.mem_read;
        m.mem_write_cycles = self.mem_write;
        m.core_cycles_per_instruction = self.core_cpi;
        m.coproc_handshake_cycles = self.handshake;
        Ok(m)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Call program written by `compile`.
    #[arg(long)]
    pub program: PathBuf,
    /// Co-processor manifest (default: `coproc_manifest.json` next to the program).
    #[arg(long)]
    pub coproc: Option<PathBuf>,
    /// JSON array of input vectors.
    #[arg(long, conflicts_with = "random")]
    pub inputs: Option<PathBuf>,
    /// Number of seeded random inputs.
    #[arg(long)]
    pub random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub machine: MachineArgs,
    #[arg(long)]
    pub reproducible: bool,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MachineKind {
    Ours,
    Flexrv,
    Semibespoke,
    #[value(name = "serv-only")]
    ServOnly,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Model files; repeat for a multi-model table.
    #[arg(long, required = true)]
    pub model: Vec<PathBuf>,
    /// Call programs, one per model; models without one are compiled on the fly.
    #[arg(long)]
    pub program: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "ours,flexrv,semibespoke,serv-only")]
    pub machine: Vec<MachineKind>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub machine_costs: MachineArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub reproducible: bool,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Co-processor manifest to cost; without it a Monte Carlo sweep runs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "4,8,12,16")]
    pub counts: Vec<u32>,
    #[arg(long, default_value_t = 200)]
    pub samples: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub activation_bits: u32,
    #[arg(long, default_value_t = DEFAULT_ACCUMULATOR_BITS)]
    pub accumulator_bits: u32,
    #[arg(long)]
    pub reproducible: bool,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Topology such as `63-9-3`; omit to write every reference topology.
    #[arg(long)]
    pub topology: Option<String>,
    #[arg(long)]
    pub activation_bits: Option<u32>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// Parses and runs the command line; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprintln!("{}", CliError::Usage(e.to_string().trim_end().to_string()).to_json());
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let reproducible = match &cli.command {
        Command::Compile(a) => a.reproducible,
        Command::Simulate(a) => a.reproducible,
        Command::Compare(a) => a.reproducible,
        Command::Costreport(a) => a.reproducible,
        Command::Sample(_) => true,
    };
    let threads = thread_count(reproducible)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Compile(a) => cmd_compile(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Costreport(a) => cmd_costreport(&a),
        Command::Sample(a) => cmd_sample(&a),
    })
}

/// 1 in reproducible mode, else the environment cap or the machine's parallelism.
fn thread_count(reproducible: bool) -> Result<usize> {
    if reproducible {
        return Ok(1);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn read_model(path: &Path) -> Result<(QuantizedMlp, String)> {
    let text = read(path)?;
    let model = load_model(&text)?;
    Ok((model, sha256_hex(text.as_bytes())))
}

/// Parses `lo..hi` (inclusive) or a comma list of integers.
pub fn parse_candidates(s: &str) -> Result<Vec<i32>> {
    let bad = || CliError::Parse(format!("invalid candidate set {s:?}"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: i32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: i32 = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect()
}

/// Parses `lo..hi[:step]` into the inclusive list of budgets.
pub fn parse_sweep(s: &str) -> Result<Vec<u32>> {
    let bad = || CliError::Parse(format!("invalid budget sweep {s:?}, expected lo..hi[:step]"));
    let (range, step) = match s.split_once(':') {
        Some((r, st)) => (r, st.trim().parse::<u32>().map_err(|_| bad())?),
        None => (s, 1),
    };
    let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
    let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
    if step == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).step_by(step as usize).collect())
}

struct SolverSetup {
    candidates: Vec<i32>,
    mode: SolveMode,
    budget: SolveBudget,
    horizon: Option<u32>,
}

fn solver_setup(args: &SolverArgs, model: &QuantizedMlp, reproducible: bool) -> Result<SolverSetup> {
    let candidates = match &args.candidates {
        Some(s) => parse_candidates(s)?,
        None => default_candidates(model.weight_bits),
    };
    let budget = if reproducible {
        SolveBudget::work(args.work_limit.unwrap_or(DEFAULT_REPRODUCIBLE_WORK))
    } else {
        let secs = args.time_limit.unwrap_or(DEFAULT_TIME_LIMIT_S);
        if !(secs.is_finite() && secs >= 0.0) {
            return Err(CliError::Usage(format!("--time-limit must be a nonnegative number of seconds, got {secs}")));
        }
        SolveBudget { time_limit: Some(Duration::from_secs_f64(secs)), work_limit: args.work_limit }
    };
    Ok(SolverSetup { candidates, mode: args.mode.into(), budget, horizon: args.horizon })
}

fn check_budget(budget: u32, activation_bits: u32) -> Result<()> {
    let max = max_slots(activation_bits);
    if budget == 0 || budget > max {
        return Err(CliError::BudgetExceeded(format!(
            "BudgetExceeded: budget {budget} must be between 1 and {max} for {activation_bits}-bit activations ({REGISTER_BITS} operand bits)"
        )));
    }
    Ok(())
}

fn solve_model(model: &QuantizedMlp, setup: &SolverSetup, budget: u32, reproducible: bool) -> Result<(ProblemInstance, SolveOutcome)> {
    check_budget(budget, model.activation_bits)?;
    let instance = ProblemInstance::from_model(model, &setup.candidates, budget, setup.horizon);
    let mut outcome = solve(&instance, setup.mode, setup.budget)?;
    if reproducible {
        outcome.stats.wall_time_ms = None;
    }
    validate_outcome(&instance, &outcome).map_err(|v| CliError::InvalidSchedule(format!("{v:?}")))?;
    Ok((instance, outcome))
}

/// Reference input the call program is packed for.
fn binding_input(model: &QuantizedMlp, seed: u64) -> Vec<i32> {
    random_input(model, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Serialize)]
struct OutputFile {
    file: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    model: serde_json::Value,
    solver: serde_json::Value,
    seed: u64,
    reproducible: bool,
    machines: Vec<&'a MachineConfig>,
    outputs: Vec<OutputFile>,
}

/// Artifacts of one solved budget.
pub struct CompiledArtifacts {
    pub outcome: SolveOutcome,
    pub config: CoprocConfig,
    pub program: CallProgram,
}

fn emit_artifacts(
    dir: &Path,
    model: &QuantizedMlp,
    outcome: &SolveOutcome,
    accumulator_bits: u32,
    seed: u64,
) -> Result<(CompiledArtifacts, Vec<PathBuf>)> {
    let config = build_config(&outcome.selection, model.activation_bits, accumulator_bits)?;
    let program = emit_call_program(&outcome.schedule, &config, model, &binding_input(model, seed))?;
    let hdl = emit_hdl(&config);
    let files = vec![
        write(dir, "solution.json", &outcome.to_json())?,
        write(dir, "coproc.v", &hdl.text)?,
        write(dir, "coproc_manifest.json", &crate::canonical_json(&hdl.manifest))?,
        write(dir, "program.json", &program.to_json())?,
        write(dir, "core_program.c", &emit_core_program(&program, model))?,
    ];
    Ok((CompiledArtifacts { outcome: outcome.clone(), config, program }, files))
}

fn solver_json(args: &SolverArgs, setup: &SolverSetup, budgets: &[u32]) -> serde_json::Value {
    json!({
        "mode": setup.mode,
        "budgets": budgets,
        "candidates": setup.candidates,
        "horizon": setup.horizon,
        "time_limit_s": setup.budget.time_limit.map(|d| d.as_secs_f64()),
        "work_limit": setup.budget.work_limit,
        "accumulator_bits": args.accumulator_bits,
    })
}

pub fn cmd_compile(args: &CompileArgs) -> Result<()> {
    let (model, model_hash) = read_model(&args.model)?;
    let setup = solver_setup(&args.solver, &model, args.reproducible)?;
    let budgets = match &args.budget_sweep {
        Some(s) => parse_sweep(s)?,
        None => vec![args.solver.budget.unwrap_or_else(|| default_budget(model.activation_bits))],
    };
    for &b in &budgets {
        check_budget(b, model.activation_bits)?;
    }
    let mut outcomes: Vec<SolveOutcome> = budgets
        .par_iter()
        .map(|&b| solve_model(&model, &setup, b, args.reproducible).map(|(_, o)| o))
        .collect::<Result<_>>()?;
    // a schedule for a smaller budget is also valid for a larger one
    for k in 1..outcomes.len() {
        if outcomes[k].objective > outcomes[k - 1].objective {
            let mut carried = outcomes[k - 1].clone();
            carried.optimality = match setup.mode {
                SolveMode::Heuristic => Optimality::Heuristic,
                SolveMode::Exact => Optimality::TimedOutBest,
            };
            carried.stats = outcomes[k].stats.clone();
            outcomes[k] = carried;
        }
    }

    let mut files = Vec::new();
    let mut sweep = Vec::new();
    for (&b, outcome) in budgets.iter().zip(&outcomes) {
        let dir = if args.budget_sweep.is_some() { args.out_dir.join(format!("budget_{b}")) } else { args.out_dir.clone() };
        let (_, written) = emit_artifacts(&dir, &model, outcome, args.solver.accumulator_bits, args.seed)?;
        for p in written {
            files.push(p.strip_prefix(&args.out_dir).map_or_else(|_| p.clone(), Path::to_path_buf));
        }
        sweep.push(json!({"budget": b, "objective": outcome.objective, "optimality": outcome.optimality}));
        println!("budget {b}: L = {} ({:?})", outcome.objective, outcome.optimality);
    }
    if args.budget_sweep.is_some() {
        files.push(PathBuf::from(file_name(&write(&args.out_dir, "sweep.json", &crate::canonical_json(&sweep))?)));
    }
    let outputs = files
        .iter()
        .map(|rel| {
            let bytes = fs::read(args.out_dir.join(rel)).map_err(|e| io_err(rel, e))?;
            Ok(OutputFile { file: rel.to_string_lossy().replace('\\', "/"), sha256: sha256_hex(&bytes) })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        tool: "bespoke-forge",
        version: env!("CARGO_PKG_VERSION"),
        command: "compile",
        model: json!({"file": file_name(&args.model), "name": model.name, "sha256": model_hash}),
        solver: solver_json(&args.solver, &setup, &budgets),
        seed: args.seed,
        reproducible: args.reproducible,
        machines: vec![],
        outputs,
    };
    write(&args.out_dir, "manifest.json", &crate::canonical_json(&manifest))?;
    Ok(())
}

/// Rebuilds a co-processor configuration from an HDL manifest.
pub fn config_from_manifest(m: &HdlManifest) -> Result<CoprocConfig> {
    let param = |k: &str| m.parameters.get(k).copied().ok_or_else(|| CliError::Parse(format!("manifest lacks {k}")));
    let selection = Selection::from_multiset(&m.slots.iter().map(|s: &Slot| s.constant).collect::<Vec<_>>());
    let config = build_config(&selection, param("ACT_BITS")?, param("ACC_BITS")?)?;
    if config.slots != m.slots {
        return Err(CliError::Parse("manifest slot table is not canonical".into()));
    }
    Ok(config)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct Aggregate<'a> {
    model: &'a str,
    machine: &'a MachineConfig,
    inputs: usize,
    mean_cycles: f64,
    mean_wall_time_s: f64,
    mean_coproc_calls: f64,
    reference_mismatches: usize,
    reports: &'a [SimReport],
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let (model, _) = read_model(&args.model)?;
    let program: CallProgram = read_json(&args.program)?;
    let coproc_path = args
        .coproc
        .clone()
        .unwrap_or_else(|| args.program.with_file_name("coproc_manifest.json"));
    let config = config_from_manifest(&read_json(&coproc_path)?)?;
    let machine = args.machine.apply(MachineConfig::ours(config))?;
    let inputs: Vec<Vec<i32>> = match (&args.inputs, args.random) {
        (Some(p), _) => read_json(p)?,
        (None, Some(n)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            (0..n).map(|_| random_input(&model, &mut rng)).collect()
        }
        (None, None) => vec![program.input.clone()],
    };
    if inputs.is_empty() {
        return Err(CliError::EmptyInputSet);
    }
    let reports: Vec<SimReport> = inputs
        .par_iter()
        .map(|x| run_inference(&model, &program, &machine, x).map_err(CliError::from))
        .collect::<Result<_>>()?;
    let mismatches = reports
        .iter()
        .zip(&inputs)
        .map(|(r, x)| reference_inference(&model, x).map(|i| usize::from(i.outputs != r.outputs)))
        .sum::<std::result::Result<usize, _>>()?;
    let n = reports.len() as f64;
    let agg = Aggregate {
        model: &model.name,
        machine: &machine,
        inputs: reports.len(),
        mean_cycles: reports.iter().map(|r| r.total_cycles as f64).sum::<f64>() / n,
        mean_wall_time_s: reports.iter().map(|r| r.wall_time_s).sum::<f64>() / n,
        mean_coproc_calls: reports.iter().map(|r| r.coproc_calls as f64).sum::<f64>() / n,
        reference_mismatches: mismatches,
        reports: &reports,
    };
    write(&args.out_dir, "sim_report.json", &crate::canonical_json(&agg))?;
    println!(
        "{} input(s): mean {:.1} cycles, {:.6} s at {} Hz, {} mismatch(es) against the reference",
        agg.inputs, agg.mean_cycles, agg.mean_wall_time_s, machine.clock_hz, mismatches
    );
    Ok(())
}

fn machine_for(kind: MachineKind, model: &QuantizedMlp, program: &CallProgram, config: &CoprocConfig) -> MachineConfig {
    let _ = program;
    match kind {
        MachineKind::Ours => MachineConfig::ours(config.clone()),
        MachineKind::Flexrv => MachineConfig::flexrv(),
        MachineKind::Semibespoke => MachineConfig::semibespoke(model.activation_bits),
        MachineKind::ServOnly => MachineConfig::serv_only(),
    }
}

pub fn cmd_compare(args: &CompareArgs) -> Result<()> {
    if args.program.len() > args.model.len() {
        return Err(CliError::Usage("more --program than --model arguments".into()));
    }
    if args.machine.len() < 2 {
        return Err(CliError::Usage("compare needs at least two machines".into()));
    }
    let groups: Vec<Vec<SimReport>> = args
        .model
        .par_iter()
        .enumerate()
        .map(|(k, path)| {
            let (model, _) = read_model(path)?;
            let (program, config) = match args.program.get(k) {
                Some(p) => {
                    let program: CallProgram = read_json(p)?;
                    let config = config_from_manifest(&read_json(&p.with_file_name("coproc_manifest.json"))?)?;
                    (program, config)
                }
                None => {
                    let setup = solver_setup(&args.solver, &model, args.reproducible)?;
                    let budget = args.solver.budget.unwrap_or_else(|| default_budget(model.activation_bits));
                    let (_, outcome) = solve_model(&model, &setup, budget, args.reproducible)?;
                    let config = build_config(&outcome.selection, model.activation_bits, args.solver.accumulator_bits)?;
                    let program = emit_call_program(&outcome.schedule, &config, &model, &binding_input(&model, args.seed))?;
                    (program, config)
                }
            };
            let input = program.input.clone();
            args.machine
                .iter()
                .map(|&kind| {
                    let m = args.machine_costs.apply(machine_for(kind, &model, &program, &config))?;
                    let r = match kind {
                        MachineKind::Ours => run_inference(&model, &program, &m, &input)?,
                        _ => simulate_baseline(&model, &m, &input)?,
                    };
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let table = combine(&groups)?;
    write(&args.out_dir, "comparison.json", &table.to_json())?;
    let text = table.to_text();
    write(&args.out_dir, "comparison.txt", &text)?;
    print!("{text}");
    Ok(())
}

pub fn cmd_costreport(args: &CostArgs) -> Result<()> {
    match &args.config {
        Some(path) => {
            let config = config_from_manifest(&read_json(path)?)?;
            let estimate = coproc_cost(&CoprocSpec::Bespoke(config));
            let p = write(&args.out_dir, "coproc_cost.json", &crate::canonical_json(&estimate))?;
            println!("area {:.1} units, power {:.1} units -> {}", estimate.area_units, estimate.power_units, p.display());
        }
        None => {
            if args.samples == 0 {
                return Err(CliError::Usage("--samples must be at least 1".into()));
            }
            let cfg = MonteCarloConfig {
                counts: args.counts.clone(),
                samples: args.samples,
                seed: args.seed,
                activation_bits: args.activation_bits,
                accumulator_bits: args.accumulator_bits,
                reference: crate::sim::semibespoke_multipliers(args.activation_bits),
                ..MonteCarloConfig::default()
            };
            let report = monte_carlo(&cfg);
            write(&args.out_dir, "cost_summary.json", &report.to_json())?;
            write(&args.out_dir, "cost_summary.csv", &report.to_csv())?;
            for s in &report.summaries {
                println!(
                    "{:>3} multipliers: area median {:.1} [{:.1}, {:.1}], {:.0}% within the reference {:.1}",
                    s.multipliers,
                    s.area.median,
                    s.area.min,
                    s.area.max,
                    100.0 * s.at_most_reference,
                    report.reference.area_units
                );
            }
        }
    }
    Ok(())
}

pub fn cmd_sample(args: &SampleArgs) -> Result<()> {
    let specs: Vec<SampleSpec> = match &args.topology {
        Some(t) => {
            let topo = parse_topology(t)?;
            vec![SampleSpec::new(&topo, args.activation_bits.unwrap_or(4), args.seed)]
        }
        None => REFERENCE_TOPOLOGIES
            .iter()
            .map(|&(name, topo, bits)| {
                let mut s = SampleSpec::new(topo, args.activation_bits.unwrap_or(bits), args.seed);
                s.name = name.to_string();
                s
            })
            .collect(),
    };
    for spec in specs {
        let model = generate_sample_model(&spec)?;
        let file = format!("{}.json", spec.name.replace(|c: char| !c.is_ascii_alphanumeric() && c != '-', "_"));
        let p = write(&args.out_dir, &file, &model.to_canonical_json())?;
        println!("{}", p.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_syntax() {
        assert_eq!(parse_candidates("-2..1").unwrap(), vec![-2, -1, 0, 1]);
        assert_eq!(parse_candidates("1,-1, 3").unwrap(), vec![1, -1, 3]);
        assert!(parse_candidates("3..1").is_err());
        assert!(parse_candidates("a").is_err());
    }

    #[test]
    fn sweep_syntax() {
        assert_eq!(parse_sweep("4..16:4").unwrap(), vec![4, 8, 12, 16]);
        assert_eq!(parse_sweep("1..3").unwrap(), vec![1, 2, 3]);
        assert!(parse_sweep("4..16:0").is_err());
    }

    #[test]
    fn budget_limits() {
        assert_eq!(check_budget(0, 4).unwrap_err().kind(), "BudgetExceeded");
        assert_eq!(check_budget(17, 4).unwrap_err().kind(), "BudgetExceeded");
        assert!(check_budget(16, 4).is_ok());
        assert!(check_budget(13, 5).is_err());
    }

    #[test]
    fn error_json_shape() {
        let v: serde_json::Value = serde_json::from_str(&CliError::EmptyInputSet.to_json()).unwrap();
        assert_eq!(v["error"]["kind"], "EmptyInputSet");
    }
}
