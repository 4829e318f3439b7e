//! End-to-end checks of the command-line interface: exit codes, JSON
//! round-trips between commands, and byte-stable output.

use std::path::Path;
use std::process::{Command, Output};

use drvcg::agents::{AgentModel, EffortLevel, ReductionDistribution};
use drvcg::allocation::{BidMatrix, MenuEntry};
use drvcg::contracts::{Contract, ReserveSchedule};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_drvcg")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_with_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(bin())
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// The three-bidder single-contract matrix, as a fixture file.
fn example_bids(path: &Path) {
    let bids = BidMatrix::new(
        vec!["a1".into(), "a2".into(), "a3".into()],
        vec![
            vec![MenuEntry {
                ell: 1,
                bid: 0.0,
                tag: 0,
            }],
            vec![MenuEntry {
                ell: 1,
                bid: 5.0,
                tag: 0,
            }],
            vec![MenuEntry {
                ell: 1,
                bid: 15.0,
                tag: 0,
            }],
        ],
    )
    .unwrap();
    write_json(path, &bids);
}

#[test]
fn solve_example_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bids.json");
    example_bids(&input);

    let out = run(&["solve", "--input", input.to_str().unwrap(), "--target", "2"]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["sum_of_bids"].as_f64().unwrap(), 5.0);
    assert_eq!(parsed["assignment"]["pairs"].as_array().unwrap().len(), 2);
    assert_eq!(parsed["rewards"][0].as_f64().unwrap(), 15.0);

    let out = run(&[
        "solve",
        "--input",
        input.to_str().unwrap(),
        "--target",
        "2",
        "--csv",
    ]);
    assert!(out.status.success());
    let csv = stdout(&out);
    assert!(csv.starts_with("agent_id,contract_ell,bid,reward\n"));
    assert!(csv.contains("a1,1,0,15"));
    assert!(csv.contains("a2,1,5,15"));
}

#[test]
fn solve_infeasible_exits_1_and_bad_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bids.json");
    example_bids(&input);

    let out = run(&["solve", "--input", input.to_str().unwrap(), "--target", "9"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["solve", "--input", "/nonexistent.json", "--target", "1"]);
    assert_eq!(out.status.code(), Some(2));

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{not json").unwrap();
    let out = run(&[
        "solve",
        "--input",
        garbage.to_str().unwrap(),
        "--target",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // unknown flags are errors
    let out = run(&[
        "solve",
        "--input",
        input.to_str().unwrap(),
        "--target",
        "1",
        "--bogus",
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["reproduce", "--table", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn vcg_outcome_feeds_reliability() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("vcg.json");
    let output = dir.path().join("outcome.json");

    let spec = serde_json::json!({
        "agents": [
            AgentModel::new("a1", vec![EffortLevel { cost: 0.0, outcome: ReductionDistribution::Bernoulli { q: 100.0, p: 1.0 } }]),
            AgentModel::new("a2", vec![EffortLevel { cost: 0.0, outcome: ReductionDistribution::Bernoulli { q: 100.0, p: 0.9 } }]),
            AgentModel::new("a3", vec![EffortLevel { cost: 0.0, outcome: ReductionDistribution::Bernoulli { q: 100.0, p: 0.7 } }]),
        ],
        "contracts": [Contract::fixed(100.0, 50.0).unwrap()],
        "m": 200.0,
        "unit": 100.0,
    });
    write_json(&input, &spec);

    let out = run(&[
        "vcg",
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let outcome: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&output).unwrap()).unwrap();
    assert_eq!(outcome["expected_total_expense"].as_f64().unwrap(), 25.0);

    // the emitted outcome is directly consumable by `reliability`
    let out = run(&[
        "reliability",
        "--input",
        output.to_str().unwrap(),
        "--target",
        "200",
        "--exact",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((parsed["probability"].as_f64().unwrap() - 0.9).abs() < 1e-9);

    // seed is logged to stderr
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed: 0"));
}

#[test]
fn sce_expected_matches_worked_average() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("sce.json");
    let spec = serde_json::json!({
        "agents": [
            AgentModel::new("a1", vec![EffortLevel { cost: 0.0, outcome: ReductionDistribution::Uniform { lo: 100.0, hi: 200.0 } }]),
            AgentModel::new("a2", vec![EffortLevel { cost: 0.0, outcome: ReductionDistribution::Uniform { lo: 50.0, hi: 250.0 } }]),
        ],
        "reserve": ReserveSchedule::Linear { slope: 0.5 },
        "m": 50.0,
    });
    write_json(&input, &spec);

    let out = run(&["sce", "--input", input.to_str().unwrap(), "--expected"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!((parsed["expected_expense"].as_f64().unwrap() - 72.65625).abs() < 1e-9);

    // a single drawn order is a plain outcome, re-readable by `reliability`
    let outcome_path = dir.path().join("sce-outcome.json");
    let out = run(&[
        "sce",
        "--input",
        input.to_str().unwrap(),
        "--seed",
        "3",
        "--output",
        outcome_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&outcome_path).unwrap()).unwrap();
    assert_eq!(parsed["mechanism"].as_str().unwrap(), "sce");
    assert_eq!(parsed["selected"].as_array().unwrap().len(), 1);

    let out = run(&[
        "reliability",
        "--input",
        outcome_path.to_str().unwrap(),
        "--target",
        "100",
        "--mc",
        "4000",
    ]);
    assert!(out.status.success());
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let p = parsed["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn reproduce_tables_are_stable() {
    let a = run(&["reproduce", "--table", "1"]);
    let b = run(&["reproduce", "--table", "1"]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    let csv = stdout(&a);
    assert!(csv.contains("300,{a1 a2},37.5,150,150,75,75,112.5"));
    assert!(csv.contains("1000,{a1 a2}+700,387.5,150,150,75,75,462.5"));

    let t2 = stdout(&run(&["reproduce", "--table", "2"]));
    assert!(t2.contains("400,2,100,195.312"));

    let ex = stdout(&run(&["reproduce", "--table", "example1"]));
    assert!(ex.contains("sb_star,5"));
    assert!(ex.contains("failure_prob,0.1"));
}

#[test]
fn verify_reports_clean_market() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bids.json");
    example_bids(&input);
    let out = run(&[
        "verify",
        "--input",
        input.to_str().unwrap(),
        "--target",
        "2",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("no violations"));
}

#[test]
fn simulate_is_byte_identical_across_seeded_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("scenario.json");
    let scenario = serde_json::json!({
        "population": { "n": 30, "t_levels": 1,
            "capacity": { "exponent": 1.0, "support_max": 80, "scale": 10.0 } },
        "m": 1000.0,
        "gamma_grid": [1.0, 1.5, 2.0],
        "contracts": { "step": 10.0, "max": 800.0, "family": "sce" },
        "reserve": { "kind": "linear", "slope": 0.5 },
        "instances": 3,
        "mc_samples": 300,
        "master_seed": 11,
    });
    write_json(&input, &scenario);

    let single = run_with_env(
        &["simulate", "--input", input.to_str().unwrap()],
        "DRVCG_THREADS",
        "1",
    );
    assert!(
        single.status.success(),
        "{}",
        String::from_utf8_lossy(&single.stderr)
    );
    let multi = run_with_env(
        &["simulate", "--input", input.to_str().unwrap()],
        "DRVCG_THREADS",
        "3",
    );
    assert!(multi.status.success());
    assert_eq!(stdout(&single), stdout(&multi));

    let again = run_with_env(
        &["simulate", "--input", input.to_str().unwrap()],
        "DRVCG_THREADS",
        "2",
    );
    assert_eq!(stdout(&single), stdout(&again));
    assert!(stdout(&single).starts_with(drvcg::simulate::RESULT_CSV_HEADER));

    // a different master seed changes the table
    let other = run(&[
        "simulate",
        "--input",
        input.to_str().unwrap(),
        "--seed",
        "12",
    ]);
    assert!(other.status.success());
    assert_ne!(stdout(&single), stdout(&other));
}
