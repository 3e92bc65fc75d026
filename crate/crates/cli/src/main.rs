//! `acqlab` — command-line front end.
//!
//! Every subcommand writes machine-readable output (JSON or CSV) to stdout or
//! to the files it is pointed at. Failures print one JSON object on stderr and
//! exit with 2 (invalid input), 3 (infeasible, assumption failure, exhausted
//! horizon) or 4 (numerical failure). `verify-ic` exits with 1 when the
//! mechanism is well formed but not incentive compatible.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acqlab::agent::{self, TieBreak};
use acqlab::experiment::{self, Aggregate, BatchContext, SeedResult};
use acqlab::game;
use acqlab::generate::{self, GenKind, GenOptions};
use acqlab::mechanism::AnyMechanism;
use acqlab::offline;
use acqlab::{Dims, Error, GameInstance, LearnerSettings, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "acqlab", version, about = "Optimal incentive-compatible mechanisms for multi-agent information acquisition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes the two-agent instance on which correlated payments strictly beat uncorrelated ones.
    GenCounterexample {
        /// Cost of the informative action, in (0, 1/24].
        #[arg(long = "K", default_value_t = 1.0 / 24.0)]
        k_cost: f64,
        /// Payment cap M.
        #[arg(long, default_value_t = 1.0)]
        budget: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Writes a seeded random instance.
    GenRandom {
        /// Signal structure.
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Cardinalities n,k,l,m,d.
        #[arg(long, value_parser = parse_dims)]
        dims: Dims,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Reject instances whose state-posterior separation is below this.
        #[arg(long, default_value_t = 0.0)]
        min_iota: f64,
        /// Reject instances whose signal-posterior separation is below this.
        #[arg(long, default_value_t = 0.0)]
        min_ell: f64,
        /// Costs are drawn uniformly from [0, cost-scale].
        #[arg(long, default_value_t = 1.0)]
        cost_scale: f64,
        /// Dirichlet concentration of the signal rows.
        #[arg(long, default_value_t = 1.0)]
        concentration: f64,
        /// Payment cap M.
        #[arg(long, default_value_t = 1.0)]
        budget: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Reports structural and peer-independence violations; exits 2 when any is found.
    Validate {
        #[command(flatten)]
        instance: InstanceArg,
    },
    /// Solves the mechanism-design LP for the optimal correlated mechanism.
    Solve {
        #[command(flatten)]
        instance: InstanceArg,
        /// Also writes the LP in CPLEX LP format to this file.
        #[arg(long)]
        lp_dump: Option<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Computes the optimal uncorrelated mechanism.
    SolveUncorr {
        #[command(flatten)]
        instance: InstanceArg,
        #[command(flatten)]
        out: OutArg,
    },
    /// Checks the incentive constraints of a correlated mechanism; exits 0 iff they hold.
    VerifyIc {
        #[command(flatten)]
        instance: InstanceArg,
        /// Mechanism file, as written by `solve`.
        #[arg(long)]
        mechanism: PathBuf,
        /// Slack below which a constraint counts as violated.
        #[arg(long, default_value_t = agent::DEFAULT_IC_TOLERANCE)]
        tolerance: f64,
    },
    /// Builds the strictly incentivizing scoring rules and their common margin.
    BuildGamma {
        #[command(flatten)]
        instance: InstanceArg,
        /// Payment cap; defaults to the instance's.
        #[arg(long)]
        budget: Option<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Runs the online learner over a batch of seeds.
    RunOnline(RunOnlineArgs),
    /// Turns `run-online` output directories into a long-format CSV of (T, seed, R^T, bound).
    Report {
        /// Output directories of `run-online`.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        out: OutArg,
    },
}

#[derive(Debug, Args)]
struct InstanceArg {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
}

impl InstanceArg {
    fn load(&self) -> Result<GameInstance> {
        game::load(&self.instance)
    }
}

#[derive(Debug, Args)]
struct OutArg {
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArg {
    fn emit(&self, text: &str) -> Result<()> {
        match &self.out {
            Some(path) => write_file(path, text.as_bytes()),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).map_err(|source| Error::Io { path: "<stdout>".into(), source })
            }
        }
    }
}

#[derive(Debug, Args)]
struct RunOnlineArgs {
    #[command(flatten)]
    instance: InstanceArg,
    /// Learner settings JSON (`T`, `N1`, `N2`, `N3`, `delta`, ...).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Horizon; overrides the configuration file.
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', conflicts_with = "seed_range")]
    seeds: Vec<u64>,
    /// Seed range `a..b` (end excluded) or `a..=b`.
    #[arg(long, value_parser = parse_seed_range)]
    seed_range: Option<SeedRange>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Refuse to commit a mechanism that is not incentive compatible on the true instance.
    #[arg(long)]
    strict_ic: bool,
    /// How simulated agents break ties.
    #[arg(long, value_enum, default_value_t = TieBreakArg::Lexicographic)]
    tie_break: TieBreakArg,
    /// Quantile levels of R^T in the summary.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.5, 0.9])]
    quantiles: Vec<f64>,
    /// Skip the per-seed trace CSVs.
    #[arg(long)]
    no_traces: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KindArg {
    Pis,
    General,
}

impl From<KindArg> for GenKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Pis => GenKind::Pis,
            KindArg::General => GenKind::General,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TieBreakArg {
    Lexicographic,
    PrincipalFavorable,
}

impl From<TieBreakArg> for TieBreak {
    fn from(t: TieBreakArg) -> Self {
        match t {
            TieBreakArg::Lexicographic => TieBreak::Lexicographic,
            TieBreakArg::PrincipalFavorable => TieBreak::PrincipalFavorable,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct SeedRange {
    start: u64,
    end: u64,
}

fn parse_dims(text: &str) -> std::result::Result<Dims, String> {
    let parts: Vec<usize> = text.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}"))).collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [n, k, l, m, d] => Dims::new(n, k, l, m, d).map_err(|e| e.to_string()),
        _ => Err(format!("expected five comma-separated values n,k,l,m,d, got {}", parts.len())),
    }
}

fn parse_seed_range(text: &str) -> std::result::Result<SeedRange, String> {
    let (a, b, inclusive) = match text.split_once("..=") {
        Some((a, b)) => (a, b, true),
        None => {
            let (a, b) = text.split_once("..").ok_or_else(|| format!("expected `a..b` or `a..=b`, got `{text}`"))?;
            (a, b, false)
        }
    };
    let start: u64 = a.trim().parse().map_err(|e| format!("range start: {e}"))?;
    let end: u64 = b.trim().parse().map_err(|e| format!("range end: {e}"))?;
    let end = if inclusive { end.checked_add(1).ok_or("range end overflows")? } else { end };
    if end <= start {
        return Err(format!("empty seed range `{text}`"));
    }
    Ok(SeedRange { start, end })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn pretty(value: &impl Serialize) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    text.push('\n');
    text
}

/// The `summary.json` written by `run-online` and read back by `report`.
#[derive(Debug, Serialize, Deserialize)]
struct RunSummary {
    instance: String,
    settings: LearnerSettings,
    tie_break: TieBreak,
    optimum: f64,
    bound: f64,
    aggregate: Aggregate,
    seeds: Vec<SeedResult>,
}

const SUMMARY_FILE: &str = "summary.json";

fn trace_file_name(seed: u64) -> String {
    format!("trace_seed_{seed}.csv")
}

/// Runs a command and returns the process exit code for a successful run.
fn execute(cmd: Command) -> Result<u8> {
    match cmd {
        Command::GenCounterexample { k_cost, budget, out } => {
            out.emit(&generate::gen_counterexample(k_cost, budget)?.to_json())?;
        }
        Command::GenRandom { kind, dims, seed, min_iota, min_ell, cost_scale, concentration, budget, out } => {
            let opts = GenOptions { cost_scale, concentration, budget, ..GenOptions::default() };
            out.emit(&generate::gen_random(kind.into(), dims, seed, min_iota, min_ell, &opts)?.to_json())?;
        }
        Command::Validate { instance } => {
            let text = fs::read_to_string(&instance.instance).map_err(|source| Error::Io { path: instance.instance.display().to_string(), source })?;
            let inst = GameInstance::from_json_str(&text, &instance.instance.display().to_string())?;
            let report = inst.validate();
            print!("{}", pretty(&report));
            return Ok(if report.is_valid() { 0 } else { 2 });
        }
        Command::Solve { instance, lp_dump, out } => {
            let inst = instance.load()?;
            let d = inst.dims();
            if let Some(path) = lp_dump {
                let (prog, _) = offline::build_lp(&d, inst.utility(), inst.joint_tables(), &offline::true_cost_differences(&inst), 0.0, inst.budget())?;
                write_file(&path, prog.to_lp_format().as_bytes())?;
            }
            let (mech, value) = offline::solve_offline_optimal(&inst)?;
            out.emit(&pretty(&serde_json::json!({ "value": value, "mechanism": mech.to_json(&d) })))?;
        }
        Command::SolveUncorr { instance, out } => {
            let inst = instance.load()?;
            let (mech, value) = offline::solve_optimal_uncorrelated(&inst)?;
            out.emit(&pretty(&serde_json::json!({ "value": value, "mechanism": mech.to_json(&inst.dims()) })))?;
        }
        Command::VerifyIc { instance, mechanism, tolerance } => {
            let inst = instance.load()?;
            let mech = match load_mechanism(&mechanism, &inst.dims())? {
                AnyMechanism::Correlated(m) => m,
                AnyMechanism::Uncorrelated(_) => {
                    return Err(Error::InvalidArgument("verify-ic checks correlated mechanisms; got an uncorrelated one".into()));
                }
            };
            mech.check(&inst.dims(), inst.budget())?;
            let report = agent::verify_ic(&inst, &mech)?;
            let ic = report.is_ic(tolerance);
            print!("{}", pretty(&serde_json::json!({ "ic": ic, "tolerance": tolerance, "min_slack": report.min_slack, "agents": report.agents })));
            return Ok(if ic { 0 } else { 1 });
        }
        Command::BuildGamma { instance, budget, out } => {
            let inst = instance.load()?;
            let rules = offline::build_incentivizing_rules(&inst, budget.unwrap_or(inst.budget()))?;
            let d = inst.dims();
            let nested: Vec<Vec<Vec<Vec<f64>>>> =
                rules.rules.iter().map(|per_agent| per_agent.iter().map(|r| r.chunks(d.m).map(<[f64]>::to_vec).collect()).collect()).collect();
            out.emit(&pretty(&serde_json::json!({ "margin": rules.margin, "margins": rules.margins, "rules": nested })))?;
        }
        Command::RunOnline(args) => run_online(args)?,
        Command::Report { inputs, out } => {
            let mut csv = String::from("T,seed,regret,bound\n");
            for dir in &inputs {
                let path = dir.join(SUMMARY_FILE);
                let text = fs::read_to_string(&path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
                let summary: RunSummary = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    source_name: path.display().to_string(),
                    line: e.line(),
                    column: e.column(),
                    message: e.to_string(),
                })?;
                for r in &summary.seeds {
                    csv.push_str(&format!("{},{},{},{}\n", r.horizon, r.seed, r.regret, r.bound));
                }
            }
            out.emit(&csv)?;
        }
    }
    Ok(0)
}

fn load_mechanism(path: &Path, dims: &Dims) -> Result<AnyMechanism> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    // `solve` wraps the mechanism together with its value.
    let mech = value.get("mechanism").unwrap_or(&value);
    AnyMechanism::from_json(mech, dims)
}

fn run_online(args: RunOnlineArgs) -> Result<()> {
    let mut settings = match (&args.config, args.horizon) {
        (Some(path), _) => LearnerSettings::load(path)?,
        (None, Some(horizon)) => LearnerSettings::with_horizon(horizon),
        (None, None) => return Err(Error::InvalidArgument("run-online needs --config or --T".into())),
    };
    if let Some(horizon) = args.horizon {
        settings.horizon = horizon;
    }
    settings.strict_ic |= args.strict_ic;
    let seeds: Vec<u64> = match args.seed_range {
        Some(r) => (r.start..r.end).collect(),
        None if args.seeds.is_empty() => vec![settings.seed],
        None => args.seeds.clone(),
    };
    let spec = experiment::ExperimentSpec {
        instance: args.instance.instance.clone(),
        settings: settings.clone(),
        seeds,
        out_dir: args.out.clone(),
        per_seed_traces: !args.no_traces,
        quantiles: args.quantiles.clone(),
    };
    spec.check()?;
    let inst = args.instance.load()?;
    let ctx = BatchContext::new(inst, &spec.settings)?.with_tie_break(args.tie_break.into());
    fs::create_dir_all(&spec.out_dir).map_err(|source| Error::Io { path: spec.out_dir.display().to_string(), source })?;
    let runs = experiment::run_batch(&ctx, &spec.seeds, experiment::worker_count(), spec.per_seed_traces)?;
    let dims = ctx.instance.dims();
    for (summary, trace) in &runs {
        if let Some(trace) = trace {
            let path = spec.out_dir.join(trace_file_name(summary.seed));
            let mut buf = Vec::new();
            trace.write_csv(&dims, &mut buf)?;
            write_file(&path, &buf)?;
        }
    }
    let results: Vec<SeedResult> = runs.into_iter().map(|(s, _)| s).collect();
    let summary = RunSummary {
        instance: spec.instance.display().to_string(),
        settings: spec.settings,
        tie_break: ctx.tie_break,
        optimum: ctx.optimum,
        bound: ctx.bound,
        aggregate: experiment::aggregate(&results, &spec.quantiles),
        seeds: results,
    };
    write_file(&spec.out_dir.join(SUMMARY_FILE), pretty(&summary).as_bytes())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code }));
            ExitCode::from(code as u8)
        }
    }
}
