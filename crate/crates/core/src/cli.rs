//! Command-line interface: solving, pricing, mechanism runs, reliability
//! queries, scenario execution, and golden-table reproduction.
//!
//! Exit status: 0 on success, 1 when no feasible contract set exists, 2 on
//! input or validation errors. Every command logs the resolved seed to the
//! error stream; omitting `--seed` means seed 0, never wall-clock entropy.

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crate::agents::{AgentModel, ReductionDistribution};
use crate::allocation::{
    clarke_rewards_fast, solve, verify_market_clearing, AllocationError, BidMatrix, RewardVector,
};
use crate::contracts::{Contract, ReserveSchedule};
use crate::mechanisms::{
    expected_dr_sce, run_dr_sce, run_dr_vcg, MechanismError, MechanismOutcome,
};
use crate::reliability::{success_prob_exact, success_prob_mc, ReliabilityError};
use crate::simulate::{
    fmt_sig, reproduce_running_example, reproduce_worked_tables, run_scenario, Scenario,
    SimulateError,
};

#[derive(Parser)]
#[command(
    name = "drvcg",
    version,
    about = "Demand-response auction engine: contract selection, VCG pricing, reliability, simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a bid matrix: cheapest contract set covering the target
    Solve {
        /// Bid matrix JSON ({agents, menus, reserve?})
        #[arg(long)]
        input: PathBuf,
        /// Coverage target in allocation units
        #[arg(long)]
        target: u32,
        /// Output path (stdout when omitted)
        #[arg(long)]
        output: Option<PathBuf>,
        /// Emit CSV rows (agent_id, contract_ell, bid, reward) instead of JSON
        #[arg(long)]
        csv: bool,
    },
    /// Run the contract auction on agent models
    Vcg {
        /// Run spec JSON ({agents, contracts, reserve?, m, gamma?, unit})
        #[arg(long)]
        input: PathBuf,
        /// Safety margin override
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Emit a CSV row (mechanism, M, gamma, expense, reliability,
        /// external_cost, n_selected) instead of JSON
        #[arg(long)]
        csv: bool,
    },
    /// Run the pay-per-kWh baseline
    Sce {
        /// Run spec JSON ({agents, reserve, m, gamma?})
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        /// Selection-order seed
        #[arg(long)]
        seed: Option<u64>,
        /// Average over selection orders instead of drawing one
        #[arg(long)]
        expected: bool,
        /// Sampled orders for large populations in --expected mode
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Emit a CSV row instead of JSON (single-order runs only)
        #[arg(long, conflicts_with = "expected")]
        csv: bool,
    },
    /// Success probability of a selection
    Reliability {
        /// Selection JSON ({selected: [dists], reserve}) or a mechanism
        /// outcome emitted by `vcg`/`sce`
        #[arg(long)]
        input: PathBuf,
        /// Evaluation threshold in kWh
        #[arg(long)]
        target: f64,
        /// Exact convolution (default)
        #[arg(long, conflicts_with = "mc")]
        exact: bool,
        /// Monte Carlo with the given sample count
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Convolution grid in kWh
        #[arg(long)]
        resolution: Option<f64>,
    },
    /// Run a scenario sweep and write the CSV result table
    Simulate {
        /// Scenario JSON
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Master seed override
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the JSON summary (defaults to the CSV path with a
        /// .json extension when --output is given)
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Print a golden table as CSV
    Reproduce {
        /// Which table: "1", "2", or "example1"
        #[arg(long)]
        table: String,
    },
    /// Market-clearing diagnostic for a bid matrix
    Verify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        target: u32,
    },
}

enum CliError {
    Infeasible(String),
    Input(String),
}

impl From<AllocationError> for CliError {
    fn from(e: AllocationError) -> Self {
        match e {
            AllocationError::Infeasible => CliError::Infeasible(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<MechanismError> for CliError {
    fn from(e: MechanismError) -> Self {
        match e {
            MechanismError::Infeasible => CliError::Infeasible(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ReliabilityError> for CliError {
    fn from(e: ReliabilityError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::Mechanism(MechanismError::Infeasible) => {
                CliError::Infeasible("no feasible contract set in a scenario instance".into())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Parses argv and executes; returns the process exit status.
pub fn dispatch<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.exit_code() == 0 { 0 } else { 2 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Infeasible(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

pub fn run() -> ExitCode {
    dispatch(std::env::args_os())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))
}

fn write_output(output: Option<&Path>, content: &str) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn log_seed(seed: u64) {
    eprintln!("seed: {seed}");
}

/// Thread pool sized by available parallelism, capped by DRVCG_THREADS.
fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    if let Ok(v) = std::env::var("DRVCG_THREADS") {
        match v.parse::<usize>() {
            Ok(k) if k >= 1 => threads = threads.min(k),
            _ => {
                return Err(CliError::Input(format!(
                    "DRVCG_THREADS must be a positive integer, got {v:?}"
                )))
            }
        }
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Input(e.to_string()))
}

/// Input for `vcg`: everything one auction run needs.
#[derive(Deserialize)]
struct VcgSpec {
    agents: Vec<AgentModel>,
    contracts: Vec<Contract>,
    #[serde(default)]
    reserve: Option<ReserveSchedule>,
    m: f64,
    #[serde(default = "default_gamma")]
    gamma: f64,
    unit: f64,
}

/// Input for `sce`.
#[derive(Deserialize)]
struct SceSpec {
    agents: Vec<AgentModel>,
    reserve: ReserveSchedule,
    m: f64,
    #[serde(default = "default_gamma")]
    gamma: f64,
}

fn default_gamma() -> f64 {
    1.0
}

/// Bare selection input for `reliability`.
#[derive(Deserialize)]
struct SelectionSpec {
    selected: Vec<ReductionDistribution>,
    #[serde(default)]
    reserve: f64,
}

#[derive(Serialize)]
struct SolveOutput {
    assignment: crate::allocation::Assignment,
    sum_of_bids: f64,
    /// Clarke rewards, when every leave-one-out problem is feasible.
    rewards: Option<RewardVector>,
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Solve {
            input,
            target,
            output,
            csv,
        } => {
            log_seed(0);
            let bids: BidMatrix = read_json(&input)?;
            let (assignment, sum_of_bids) = solve(&bids, target)?;
            let rewards = match clarke_rewards_fast(&bids, target) {
                Ok((_, _, r)) => Some(r),
                Err(AllocationError::Infeasible) => None,
                Err(e) => return Err(e.into()),
            };
            let content = if csv {
                let mut s = String::from("agent_id,contract_ell,bid,reward\n");
                for pair in &assignment.pairs {
                    let reward = rewards.as_ref().map_or(0.0, |r| r.0[pair.agent]);
                    s.push_str(&format!(
                        "{},{},{},{}\n",
                        pair.agent_id,
                        pair.ell,
                        fmt_sig(pair.bid),
                        fmt_sig(reward)
                    ));
                }
                s
            } else {
                to_json(&SolveOutput {
                    assignment,
                    sum_of_bids,
                    rewards,
                })?
            };
            write_output(output.as_deref(), &content)
        }
        Command::Vcg {
            input,
            gamma,
            output,
            csv,
        } => {
            log_seed(0);
            let spec: VcgSpec = read_json(&input)?;
            validate_agents(&spec.agents)?;
            validate_contracts(&spec.contracts)?;
            if let Some(r) = &spec.reserve {
                r.validate().map_err(|e| CliError::Input(e.to_string()))?;
            }
            let gamma = gamma.unwrap_or(spec.gamma);
            let outcome = run_dr_vcg(
                &spec.agents,
                &spec.contracts,
                spec.reserve.as_ref(),
                spec.m,
                gamma,
                spec.unit,
            )?;
            let content = if csv {
                outcome_csv(&outcome)?
            } else {
                to_json(&outcome)?
            };
            write_output(output.as_deref(), &content)
        }
        Command::Sce {
            input,
            gamma,
            seed,
            expected,
            samples,
            output,
            csv,
        } => {
            let seed = seed.unwrap_or(0);
            log_seed(seed);
            let spec: SceSpec = read_json(&input)?;
            validate_agents(&spec.agents)?;
            spec.reserve
                .validate()
                .map_err(|e| CliError::Input(e.to_string()))?;
            let gamma = gamma.unwrap_or(spec.gamma);
            let content = if expected {
                let exp = expected_dr_sce(
                    &spec.agents,
                    &spec.reserve,
                    spec.m,
                    gamma,
                    seed,
                    samples.unwrap_or(200),
                )?;
                to_json(&exp)?
            } else {
                let mut order: Vec<usize> = (0..spec.agents.len()).collect();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                let outcome = run_dr_sce(&spec.agents, &spec.reserve, spec.m, gamma, &order)?;
                if csv {
                    outcome_csv(&outcome)?
                } else {
                    to_json(&outcome)?
                }
            };
            write_output(output.as_deref(), &content)
        }
        Command::Reliability {
            input,
            target,
            exact: _,
            mc,
            seed,
            resolution,
        } => {
            let seed = seed.unwrap_or(0);
            log_seed(seed);
            let (selected, reserve) = read_selection(&input)?;
            let result = match mc {
                Some(samples) => success_prob_mc(&selected, reserve, target, samples, seed)?,
                None => success_prob_exact(&selected, reserve, target, resolution.unwrap_or(1.0))?,
            };
            println!("{}", to_json(&result)?.trim_end());
            Ok(())
        }
        Command::Simulate {
            input,
            output,
            seed,
            summary,
        } => {
            let mut scenario: Scenario = read_json(&input)?;
            if let Some(s) = seed {
                scenario.master_seed = s;
            }
            log_seed(scenario.master_seed);
            let pool = thread_pool()?;
            let table = pool.install(|| run_scenario(&scenario))?;
            write_output(output.as_deref(), &table.to_csv())?;
            let summary_path =
                summary.or_else(|| output.as_ref().map(|p| p.with_extension("json")));
            if let Some(path) = summary_path {
                let doc = serde_json::json!({
                    "scenario": scenario,
                    "rows": table.rows,
                });
                write_output(Some(&path), &to_json(&doc)?)?;
            }
            Ok(())
        }
        Command::Reproduce { table } => {
            log_seed(0);
            match table.as_str() {
                "1" => print!("{}", reproduce_worked_tables()?.table1_csv()),
                "2" => print!("{}", reproduce_worked_tables()?.table2_csv()),
                "example1" => print!("{}", reproduce_running_example()?.to_csv()),
                other => {
                    return Err(CliError::Input(format!(
                        "unknown table {other:?}; expected 1, 2, or example1"
                    )))
                }
            }
            Ok(())
        }
        Command::Verify { input, target } => {
            log_seed(0);
            let bids: BidMatrix = read_json(&input)?;
            let report = verify_market_clearing(&bids, target)?;
            if report.is_clean() {
                println!(
                    "market clearing: no violations (tolerance {})",
                    report.tolerance
                );
            } else {
                println!("market clearing: {} violation(s)", report.violations.len());
                for v in &report.violations {
                    println!("  agent {} ({}): {}", v.agent, v.agent_id, v.detail);
                }
            }
            Ok(())
        }
    }
}

/// One outcome as a CSV document; reliability comes from exact convolution
/// at a 1 kWh grid.
fn outcome_csv(outcome: &MechanismOutcome) -> Result<String, CliError> {
    let reliability = success_prob_exact(
        &outcome.selected_dists(),
        outcome.reserve_kwh,
        outcome.m_eval,
        1.0,
    )?
    .probability;
    Ok(format!(
        "mechanism,m,gamma,expense,reliability,external_cost,n_selected\n{}\n",
        outcome.csv_row(reliability)
    ))
}

fn validate_agents(agents: &[AgentModel]) -> Result<(), CliError> {
    for a in agents {
        for level in &a.levels {
            if !level.cost.is_finite() || level.cost < 0.0 {
                return Err(CliError::Input(format!(
                    "agent {}: level cost must be finite and nonnegative",
                    a.id
                )));
            }
            level
                .outcome
                .validate()
                .map_err(|e| CliError::Input(format!("agent {}: {e}", a.id)))?;
        }
    }
    Ok(())
}

fn validate_contracts(contracts: &[Contract]) -> Result<(), CliError> {
    for c in contracts {
        c.validate()
            .map_err(|e| CliError::Input(format!("contract {}: {e}", c.id)))?;
    }
    Ok(())
}

/// Accepts either a bare selection or a full mechanism outcome.
fn read_selection(path: &Path) -> Result<(Vec<ReductionDistribution>, f64), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(outcome) = serde_json::from_str::<MechanismOutcome>(&text) {
        return Ok((outcome.selected_dists(), outcome.reserve_kwh));
    }
    let spec: SelectionSpec = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))?;
    for d in &spec.selected {
        d.validate().map_err(CliError::Input)?;
    }
    Ok((spec.selected, spec.reserve))
}
