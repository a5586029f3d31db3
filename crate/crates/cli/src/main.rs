//! `nlha`: command-line front end.
//!
//! Exit codes: 0 safe or success, 1 unsafe or refuted, 2 unknown,
//! 3 usage or parse error, 4 internal or simulation error.

use std::fs;
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use nlha_core::abstraction::build_lha;
use nlha_core::cegar::{cegar_check, report, CegarConfig, CegarError, Outcome};
use nlha_core::par::Exec;
use nlha_core::refinement::{Metric, Strategy, StrategyKind};
use nlha_core::report::{trace_from_json, TraceJson};
use nlha_core::simulation::{simulate_hybrid_path, validate_counterexample, SimConfig, SimError, Trajectory};
use nlha_core::{parse_model, HybridAutomaton, Path};

const SAFE: u8 = 0;
const UNSAFE: u8 = 1;
const UNKNOWN: u8 = 2;
const USAGE: u8 = 3;
const INTERNAL: u8 = 4;

#[derive(Parser)]
#[command(name = "nlha", version, about = "Safety checking of nonlinear hybrid automata by abstraction refinement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the refinement loop and print the verdict as JSON.
    Check(CheckArgs),
    /// Write the initial interval-rate abstraction in model format.
    Abstract {
        /// Model file
        model: PathBuf,
        /// Output file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate one path with given dwell times.
    Simulate(SimulateArgs),
    /// Replay a trace JSON file robustly and print the validation result.
    Validate {
        /// Model file
        model: PathBuf,
        /// Trace JSON, either bare or the report of `check`.
        #[arg(long)]
        trace: PathBuf,
        #[command(flatten)]
        sim: SimArgs,
    },
}

#[derive(Args)]
struct SimArgs {
    /// Integration tube bound.
    #[arg(long, default_value_t = 1e-6)]
    eps_sim: f64,
    /// Robustness margin for guards and invariants.
    #[arg(long, default_value_t = 1e-4)]
    eps_robust: f64,
    /// Integration step.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
}

impl SimArgs {
    fn config(&self) -> SimConfig {
        SimConfig { step: self.step, eps_sim: self.eps_sim, eps_robust: self.eps_robust, ..SimConfig::default() }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Abs,
    Diff,
    Ratio,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclid,
    Manhattan,
}

#[derive(Args)]
struct CheckArgs {
    /// Model file
    model: PathBuf,
    /// Refinement iterations before giving up
    #[arg(long, default_value_t = 50)]
    max_iters: usize,
    /// Longest path searched; safe verdicts hold up to this depth.
    #[arg(long, default_value_t = 12)]
    max_depth: usize,
    /// Most path LPs per search.
    #[arg(long, default_value_t = 200_000)]
    max_paths: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::Abs)]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value_t = MetricArg::Euclid)]
    metric: MetricArg,
    /// Threshold on the refinement statistic.
    #[arg(long, default_value_t = 0.1)]
    eps_refine: f64,
    #[command(flatten)]
    sim: SimArgs,
    /// Check paths one at a time instead of in parallel.
    #[arg(long)]
    sequential: bool,
    /// Write the counterexample trajectory as CSV, with jumps in `<file>.jumps.json`.
    #[arg(long)]
    trajectory_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model file
    model: PathBuf,
    /// Comma-separated location names visited after the initial location.
    #[arg(long, value_delimiter = ',', required = true)]
    path: Vec<String>,
    /// Comma-separated dwell times, one per location in `--path`.
    #[arg(long, value_delimiter = ',', required = true)]
    durations: Vec<f64>,
    /// Valuation on leaving the initial location, `x=1,y=2`; missing variables are 0.
    #[arg(long, default_value = "")]
    x0: String,
    /// Write the trajectory as CSV, with jumps in `<file>.jumps.json`.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    sim: SimArgs,
}

/// A failure with its exit code; the message goes to stderr and, for
/// codes other than usage, a JSON error to stdout.
struct Fail(u8, String);

type CmdResult = Result<u8, Fail>;

fn usage(msg: impl Into<String>) -> Fail {
    Fail(USAGE, msg.into())
}

fn internal(msg: impl Into<String>) -> Fail {
    Fail(INTERNAL, msg.into())
}

/// A closed stdout (as in `nlha check m.ha | head`) is not an error.
fn print_json(v: &Value) {
    let text = serde_json::to_string_pretty(v).expect("json value serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load(path: &FsPath) -> Result<HybridAutomaton, Fail> {
    let src = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    parse_model(&src).map_err(|e| usage(format!("{}:{e}", path.display())))
}

fn write_trajectory(path: &FsPath, h: &HybridAutomaton, t: &Trajectory) -> Result<(), Fail> {
    fs::write(path, t.to_csv(h)).map_err(|e| internal(format!("{}: {e}", path.display())))?;
    let mut side = path.as_os_str().to_owned();
    side.push(".jumps.json");
    let text = serde_json::to_string_pretty(&t.jumps_json(h)).expect("json value serializes");
    fs::write(&side, text + "\n").map_err(|e| internal(format!("{}: {e}", PathBuf::from(&side).display())))
}

fn check(a: &CheckArgs) -> CmdResult {
    let h = load(&a.model)?;
    let kind = match a.strategy {
        StrategyArg::Abs => StrategyKind::Abs,
        StrategyArg::Diff => StrategyKind::Diff,
        StrategyArg::Ratio => StrategyKind::Ratio,
    };
    let cfg = CegarConfig {
        max_iterations: a.max_iters,
        max_depth: a.max_depth,
        max_paths: a.max_paths,
        strategy: Strategy { kind, threshold: a.eps_refine },
        metric: match a.metric {
            MetricArg::Euclid => Metric::Euclidean,
            MetricArg::Manhattan => Metric::Manhattan,
        },
        sim: a.sim.config(),
        exec: if a.sequential { Exec::Sequential } else { Exec::default() },
    };
    let v = match cegar_check(&h, &cfg) {
        Ok(v) => v,
        Err(CegarError::Config(m)) => return Err(usage(m)),
        Err(e) => return Err(internal(e.to_string())),
    };
    let mut csv = None;
    if let (Outcome::Unsafe(c), Some(p)) = (&v.outcome, &a.trajectory_csv) {
        write_trajectory(p, &h, &c.validation.trajectory)?;
        csv = Some(p.display().to_string());
    }
    print_json(&report(&v, &h, csv.as_deref()));
    Ok(match v.outcome {
        Outcome::Safe { depth, complete } => {
            let scope = if complete { "at any depth".to_string() } else { format!("up to depth {depth}") };
            eprintln!("safe {scope}");
            SAFE
        }
        Outcome::Unsafe(c) => {
            eprintln!("unsafe via {}", c.abstract_path.join(" -> "));
            UNSAFE
        }
        Outcome::Unknown { reason, detail } => {
            eprintln!("unknown ({}): {detail}", reason.as_str());
            UNKNOWN
        }
    })
}

fn abstract_cmd(model: &FsPath, out: &FsPath) -> CmdResult {
    let h = load(model)?;
    let a = build_lha(&h).map_err(|e| internal(e.to_string()))?;
    fs::write(out, a.dump()).map_err(|e| internal(format!("{}: {e}", out.display())))?;
    print_json(&json!({"locations": a.lha.locations.len(), "transitions": a.lha.transitions.len(), "out": out.display().to_string()}));
    Ok(SAFE)
}

fn parse_valuation(h: &HybridAutomaton, s: &str) -> Result<Vec<f64>, Fail> {
    let mut x = vec![0.0; h.nvars()];
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) = part.split_once('=').ok_or_else(|| usage(format!("--x0: expected name=value, got `{part}`")))?;
        let v = h.var_by_name(name.trim()).ok_or_else(|| usage(format!("--x0: unknown variable {}", name.trim())))?;
        x[v.0] = value.trim().parse().map_err(|_| usage(format!("--x0: bad number `{}`", value.trim())))?;
    }
    Ok(x)
}

/// Follows location names from the initial location, taking the first
/// declared transition to each.
fn resolve_path(h: &HybridAutomaton, names: &[String]) -> Result<Path, Fail> {
    let mut at = h.initial;
    let mut ts = Vec::with_capacity(names.len());
    for n in names {
        let t = h
            .outgoing(at)
            .find(|t| h.location(h.transition(*t).target).name == *n)
            .ok_or_else(|| usage(format!("--path: no transition from {} to {n}", h.location(at).name)))?;
        ts.push(t);
        at = h.transition(t).target;
    }
    Ok(Path::new(ts))
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    let h = load(&a.model)?;
    let path = resolve_path(&h, &a.path)?;
    let x0 = parse_valuation(&h, &a.x0)?;
    let result = simulate_hybrid_path(&h, &path, &x0, &a.durations, &a.sim.config());
    let (traj, failure) = match result {
        Ok(t) => (t, None),
        Err(SimError::Precondition(m)) => return Err(usage(m)),
        Err(SimError::Failed { failure, trajectory }) => (trajectory, Some(failure)),
    };
    if let Some(p) = &a.csv {
        write_trajectory(p, &h, &traj)?;
    }
    let mut out = json!({
        "status": if failure.is_some() { "failed" } else { "ok" },
        "samples": traj.sample_count(),
        "end_time": traj.end_time(),
        "jumps": traj.jumps_json(&h),
    });
    if let Some(f) = &failure {
        out["failure"] = f.to_json(&h);
        eprintln!("{}", f.describe(&h));
    }
    print_json(&out);
    Ok(if failure.is_some() { INTERNAL } else { SAFE })
}

fn validate(model: &FsPath, trace: &FsPath, sim: &SimArgs) -> CmdResult {
    let h = load(model)?;
    let text = fs::read_to_string(trace).map_err(|e| usage(format!("{}: {e}", trace.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", trace.display())))?;
    if let Some(inner) = doc.get_mut("trace") {
        doc = inner.take();
    }
    let tj: TraceJson = serde_json::from_value(doc).map_err(|e| usage(format!("{}: {e}", trace.display())))?;
    let tr = trace_from_json(&h, &tj).map_err(|e| usage(format!("{}: {e}", trace.display())))?;
    let v = validate_counterexample(&h, &tr, &sim.config()).map_err(|e| match e {
        SimError::Precondition(m) => usage(m),
        e => internal(e.to_string()),
    })?;
    if let Some(f) = v.first_failure() {
        eprintln!("{}", f.describe(&h));
    }
    print_json(&v.to_json(&h));
    Ok(if v.is_validated() { SAFE } else { UNSAFE })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { SAFE });
        }
    };
    let result = match &cli.command {
        Command::Check(a) => check(a),
        Command::Abstract { model, out } => abstract_cmd(model, out),
        Command::Simulate(a) => simulate(a),
        Command::Validate { model, trace, sim } => validate(model, trace, sim),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            if code != USAGE {
                print_json(&json!({ "error": msg }));
            }
            ExitCode::from(code)
        }
    }
}
