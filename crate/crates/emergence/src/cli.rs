//! Command line interface.
//!
//! Every subcommand loads a scenario from a JSON file or a built-in preset,
//! optionally patched with `--set path=value` overrides, and prints
//! machine-readable output: pretty JSON on stdout for reports, CSV for
//! traces and sweeps.
//!
//! Exit codes: 0 on success, 1 on configuration or runtime errors, 2 when
//! `--require-certified` is set and a hypothesis fails at the initial state
//! (and for usage errors), 3 when a certified envelope or probability bound
//! is violated by the observed data.

use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{EmergenceError, Result};
use crate::harness::{
    build_scenario, monte_carlo, preset, run_single, set_json_path, sweep, Scenario,
    ScenarioConfig, SweepSpec, Verdict,
};
use crate::systems::{detect_emergence, Block, Horizon, RunOptions, Trajectory};
use crate::theory::verify_trajectory;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_UNCERTIFIED: i32 = 2;
pub const EXIT_VIOLATED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "emergence",
    version,
    about = "Simulation and certified-bound checks for noisy multi-agent emergence"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resolve a scenario and print its constants, hypothesis checks and
    /// certified bound.
    Constants(ConstantsArgs),
    /// Run one trajectory and replay every applicable envelope against it.
    Check(CheckArgs),
    /// Run one trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate the certified event frequency over independent trials.
    Montecarlo(MonteCarloArgs),
    /// Run a Monte Carlo estimate at every point of a parameter grid.
    Sweep(SweepArgs),
}

/// Where the scenario comes from, plus dotted-path overrides applied to the
/// raw JSON before it is parsed.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario configuration JSON file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in scenario: flocking, language, flocking-continuous,
    /// language-continuous.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[command(flatten)]
    source: Source,
    /// Override a configuration field, e.g. --set system.h=0.01 or
    /// --set noise.primary.spec.radius=0.2. The value is parsed as JSON,
    /// falling back to a string.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut value = match (&self.source.config, &self.source.preset) {
            (Some(path), None) => serde_json::from_str(&fs::read_to_string(path)?)?,
            (None, Some(name)) => serde_json::to_value(preset(name)?)?,
            _ => unreachable!("clap enforces exactly one source"),
        };
        for entry in &self.overrides {
            let (path, raw) = entry.split_once('=').ok_or_else(|| {
                EmergenceError::Config(format!("override '{entry}' must have the form path=value"))
            })?;
            let parsed = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            set_json_path(&mut value, path, parsed)?;
        }
        Ok(serde_json::from_value(value)?)
    }

    fn build(&self) -> Result<Scenario> {
        build_scenario(self.load()?)
    }
}

#[derive(Debug, Args)]
struct ConstantsArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Which trial's noise substream to run.
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Exit with status 2 when a hypothesis fails at the initial state.
    #[arg(long)]
    require_certified: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0)]
    trial: u64,
    /// Write the trace CSV here and print a JSON summary instead.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MonteCarloArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 256)]
    trials: u64,
    /// Exit with status 2 when a hypothesis fails at the initial state.
    #[arg(long)]
    require_certified: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Sweep grid JSON: {"parameters": {"system.h": [..], ...}, "trials": n}.
    #[arg(long, value_name = "PATH")]
    grid: PathBuf,
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

fn horizon_json(horizon: Horizon) -> serde_json::Value {
    match horizon {
        Horizon::Steps(steps) => serde_json::json!({"kind": "steps", "steps": steps}),
        Horizon::Time { t_end, dt } => {
            serde_json::json!({"kind": "time", "t_end": t_end, "dt": dt})
        }
    }
}

fn scenario_json(scenario: &Scenario) -> serde_json::Value {
    serde_json::json!({
        "name": scenario.config.name,
        "variant": scenario.dynamics.variant,
        "initial_x_norm": scenario.initial_x_norm,
        "initial_y_norm": scenario.initial_y_norm,
        "constants": scenario.constants,
        "scalar_hypotheses": scenario.scalar_hypotheses,
        "operator_hypotheses": scenario.operator_hypotheses,
        "certified": scenario.certified(),
        "bound": scenario.bound,
        "horizon": horizon_json(scenario.horizon),
        "notes": scenario.notes,
    })
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn trace_csv(trajectory: &Trajectory) -> String {
    let mut out = String::from(
        "step,time,x_norm,y_norm,coercivity_x_eq,coercivity_y_eq,noise_primary_norm,\
         noise_secondary_norm,clipped_primary,clipped_secondary\n",
    );
    for p in &trajectory.points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.step,
            p.time,
            p.x_norm,
            p.y_norm,
            p.coercivity_x_eq.map(|v| v.to_string()).unwrap_or_default(),
            p.coercivity_y_eq.map(|v| v.to_string()).unwrap_or_default(),
            p.noise_primary_norm,
            p.noise_secondary_norm,
            p.clipped_primary,
            p.clipped_secondary,
        ));
    }
    out
}

fn run_constants(args: &ConstantsArgs) -> Result<i32> {
    let scenario = args.scenario.build()?;
    print_json(&scenario_json(&scenario))?;
    Ok(EXIT_OK)
}

fn run_check(args: &CheckArgs) -> Result<i32> {
    let scenario = args.scenario.build()?;
    let opts = RunOptions {
        record_operators: true,
        record_states: true,
        ..RunOptions::default()
    };
    let trajectory = run_single(&scenario, args.trial, &opts)?;
    let report = verify_trajectory(&trajectory, &scenario.config.system, &scenario.constants)?;
    let violated = report.violated;
    print_json(&serde_json::json!({
        "scenario": scenario_json(&scenario),
        "trial": args.trial,
        "report": report,
    }))?;
    if violated {
        return Ok(EXIT_VIOLATED);
    }
    if args.require_certified && !scenario.certified() {
        return Ok(EXIT_UNCERTIFIED);
    }
    Ok(EXIT_OK)
}

fn run_simulate(args: &SimulateArgs) -> Result<i32> {
    let scenario = args.scenario.build()?;
    let opts = RunOptions {
        record_operators: true,
        ..RunOptions::default()
    };
    let trajectory = run_single(&scenario, args.trial, &opts)?;
    let csv = trace_csv(&trajectory);
    match &args.out {
        Some(path) => {
            fs::write(path, &csv)?;
            let x_em = scenario
                .config
                .targets
                .mu
                .map(|mu| detect_emergence(&trajectory, Block::X, mu));
            let y_em = scenario
                .config
                .targets
                .nu
                .map(|nu| detect_emergence(&trajectory, Block::Y, nu));
            let last = trajectory.points.last();
            print_json(&serde_json::json!({
                "name": scenario.config.name,
                "trial": args.trial,
                "points": trajectory.points.len(),
                "trace": path,
                "final_x_norm": last.map(|p| p.x_norm),
                "final_y_norm": last.map(|p| p.y_norm),
                "x_emergence": x_em,
                "y_emergence": y_em,
            }))?;
        }
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

fn run_montecarlo(args: &MonteCarloArgs) -> Result<i32> {
    let scenario = args.scenario.build()?;
    let report = monte_carlo(&scenario, args.trials)?;
    let verdict = report.verdict;
    print_json(&serde_json::to_value(&report)?)?;
    if verdict == Verdict::Violated {
        return Ok(EXIT_VIOLATED);
    }
    if args.require_certified && verdict == Verdict::Inapplicable {
        return Ok(EXIT_UNCERTIFIED);
    }
    Ok(EXIT_OK)
}

fn run_sweep(args: &SweepArgs) -> Result<i32> {
    let base = serde_json::to_value(args.scenario.load()?)?;
    let spec: SweepSpec = serde_json::from_str(&fs::read_to_string(&args.grid)?)?;
    let csv = sweep(&base, &spec)?;
    match &args.out {
        Some(path) => fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(EXIT_OK)
}

/// Parses the process arguments, runs the subcommand and returns the exit
/// code. Errors print to stderr and map to exit code 1; clap handles usage
/// errors itself with exit code 2.
pub fn main_entry() -> i32 {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Constants(args) => run_constants(args),
        Command::Check(args) => run_check(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Montecarlo(args) => run_montecarlo(args),
        Command::Sweep(args) => run_sweep(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
