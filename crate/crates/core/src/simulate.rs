//! Scenario simulation: synthetic populations, safety-margin sweeps for both
//! mechanisms, CSV result tables, and reproduction of the worked numeric
//! examples.
//!
//! Everything is deterministic given (scenario, master seed): per-instance
//! seeds are derived by a fixed mixing function, instances are independent
//! work units, and aggregation is done in instance order regardless of how
//! many threads computed them.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentModel, EffortLevel, ReductionDistribution};
use crate::contracts::{contract_grid, Contract, ContractFamily, ReserveSchedule};
use crate::mechanisms::{
    expected_dr_sce, run_dr_vcg, sce_optimal_bid, MechanismError, SceBidDecision, VcgMarket,
};
use crate::reliability::{success_prob_exact, success_prob_mc, ReliabilityError};

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Reliability(#[from] ReliabilityError),
}

/// Formats money and probabilities with six significant digits, trimming
/// trailing zeros; quantities print as exact integers. Keeps CSV output
/// byte-stable for golden-file comparisons.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// splitmix64 step, used to derive independent seeds from (master, stream)
/// without any randomized std hasher.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Capacity draw: a finite zeta distribution on {1..support_max} with the
/// given exponent, scaled to kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfSpec {
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    #[serde(default = "default_support_max")]
    pub support_max: u32,
    #[serde(default = "default_scale")]
    pub scale: f64,
}

fn default_exponent() -> f64 {
    1.0
}
fn default_support_max() -> u32 {
    500
}
fn default_scale() -> f64 {
    10.0
}

impl Default for ZipfSpec {
    fn default() -> Self {
        ZipfSpec {
            exponent: default_exponent(),
            support_max: default_support_max(),
            scale: default_scale(),
        }
    }
}

struct ZipfSampler {
    cumulative: Vec<f64>,
    scale: f64,
}

impl ZipfSampler {
    fn new(spec: &ZipfSpec) -> ZipfSampler {
        let mut cumulative = Vec::with_capacity(spec.support_max as usize);
        let mut acc = 0.0;
        for k in 1..=spec.support_max {
            acc += (k as f64).powf(-spec.exponent);
            cumulative.push(acc);
        }
        let total = acc;
        for c in &mut cumulative {
            *c /= total;
        }
        ZipfSampler {
            cumulative,
            scale: spec.scale,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let idx = self.cumulative.partition_point(|&c| c < u);
        (idx.min(self.cumulative.len() - 1) + 1) as f64 * self.scale
    }
}

/// Population generator: `n` agents, each with `t_levels` effort levels of
/// Zipf-distributed capacity, a shared per-agent reliability, and a unit
/// cost drawn per level and multiplied by that level's capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub n: usize,
    #[serde(default = "default_t_levels")]
    pub t_levels: usize,
    #[serde(default)]
    pub capacity: ZipfSpec,
    #[serde(default = "default_reliability")]
    pub reliability: (f64, f64),
    #[serde(default = "default_unit_cost")]
    pub unit_cost: (f64, f64),
}

fn default_t_levels() -> usize {
    1
}
fn default_reliability() -> (f64, f64) {
    (0.7, 1.0)
}
fn default_unit_cost() -> (f64, f64) {
    (0.2, 1.0)
}

/// Draws a population, deterministic per seed. Draw order per agent: the
/// reliability first, then per level its capacity and unit cost. Levels are
/// sorted by capacity ascending.
pub fn sample_population(spec: &PopulationSpec, seed: u64) -> Vec<AgentModel> {
    let sampler = ZipfSampler::new(&spec.capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..spec.n)
        .map(|i| {
            let p = rng.gen_range(spec.reliability.0..spec.reliability.1);
            let mut levels: Vec<EffortLevel> = (0..spec.t_levels)
                .map(|_| {
                    let q = sampler.sample(&mut rng);
                    let unit_cost = rng.gen_range(spec.unit_cost.0..spec.unit_cost.1);
                    EffortLevel {
                        cost: unit_cost * q,
                        outcome: ReductionDistribution::Bernoulli { q, p },
                    }
                })
                .collect();
            levels.sort_by(|a, b| {
                let (qa, qb) = match (a.outcome, b.outcome) {
                    (
                        ReductionDistribution::Bernoulli { q: qa, .. },
                        ReductionDistribution::Bernoulli { q: qb, .. },
                    ) => (qa, qb),
                    _ => unreachable!(),
                };
                qa.total_cmp(&qb).then(a.cost.total_cmp(&b.cost))
            });
            AgentModel::new(format!("agent-{i}"), levels)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractGridSpec {
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_max")]
    pub max: f64,
    #[serde(default = "default_family")]
    pub family: ContractFamily,
}

fn default_step() -> f64 {
    10.0
}
fn default_max() -> f64 {
    5000.0
}
fn default_family() -> ContractFamily {
    ContractFamily::Sce
}

impl Default for ContractGridSpec {
    fn default() -> Self {
        ContractGridSpec {
            step: default_step(),
            max: default_max(),
            family: default_family(),
        }
    }
}

/// A full experiment: population spec, demand surge, safety-margin grid,
/// contract family, reserve schedule, and sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub population: PopulationSpec,
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    #[serde(default)]
    pub contracts: ContractGridSpec,
    pub reserve: ReserveSchedule,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_m() -> f64 {
    10_000.0
}
fn default_gamma_grid() -> Vec<f64> {
    (0..=10).map(|k| 1.0 + k as f64 / 10.0).collect()
}
fn default_instances() -> usize {
    100
}
fn default_mc_samples() -> usize {
    2000
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimulateError> {
        if self.population.n == 0 {
            return Err(SimulateError::InvalidScenario("population is empty".into()));
        }
        if self.population.t_levels == 0 {
            return Err(SimulateError::InvalidScenario(
                "agents need at least one effort level".into(),
            ));
        }
        if self.gamma_grid.is_empty() {
            return Err(SimulateError::InvalidScenario("gamma grid is empty".into()));
        }
        if self.gamma_grid.iter().any(|&g| !(1.0..=2.0).contains(&g)) {
            return Err(SimulateError::InvalidScenario(
                "safety margins must lie in [1, 2]".into(),
            ));
        }
        if self.instances == 0 || self.mc_samples == 0 {
            return Err(SimulateError::InvalidScenario(
                "instances and mc_samples must be positive".into(),
            ));
        }
        let cap = &self.population.capacity;
        if cap.support_max == 0
            || !cap.scale.is_finite()
            || cap.scale <= 0.0
            || !cap.exponent.is_finite()
        {
            return Err(SimulateError::InvalidScenario(
                "capacity distribution needs a nonempty support, positive scale, and a finite exponent".into(),
            ));
        }
        for (name, (lo, hi)) in [
            ("reliability", self.population.reliability),
            ("unit_cost", self.population.unit_cost),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo < hi) {
                return Err(SimulateError::InvalidScenario(format!(
                    "{name} range must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        if self.population.reliability.1 > 1.0 {
            return Err(SimulateError::InvalidScenario(
                "reliability range must stay within [0, 1]".into(),
            ));
        }
        if !self.contracts.step.is_finite()
            || self.contracts.step <= 0.0
            || self.contracts.max < self.contracts.step
        {
            return Err(SimulateError::InvalidScenario(
                "contract grid needs step > 0 and max >= step".into(),
            ));
        }
        if !self.m.is_finite() || self.m < 0.0 {
            return Err(SimulateError::InvalidScenario(format!(
                "demand surge must be finite and nonnegative, got {}",
                self.m
            )));
        }
        self.reserve
            .validate()
            .map_err(|e| SimulateError::InvalidScenario(e.to_string()))?;
        Ok(())
    }
}

/// One aggregated line of a scenario sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub gamma: f64,
    pub mechanism: String,
    pub mean_expense: f64,
    pub mean_reliability: f64,
    /// Fraction of instances in which the fallback option was used.
    pub failure_fraction: f64,
    pub mean_selected: f64,
    pub instances: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

pub const RESULT_CSV_HEADER: &str =
    "gamma,mechanism,mean_expense,mean_reliability,failure_fraction,mean_selected,instances,seed";

impl ResultTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULT_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                fmt_sig(r.gamma),
                r.mechanism,
                fmt_sig(r.mean_expense),
                fmt_sig(r.mean_reliability),
                fmt_sig(r.failure_fraction),
                fmt_sig(r.mean_selected),
                r.instances,
                r.seed
            ));
        }
        out
    }

    pub fn row(&self, gamma_index: usize, mechanism: &str) -> &ResultRow {
        self.rows
            .iter()
            .find(|r| {
                r.mechanism == mechanism && (r.gamma - self.gammas()[gamma_index]).abs() < 1e-12
            })
            .expect("row exists")
    }

    fn gammas(&self) -> Vec<f64> {
        let mut g: Vec<f64> = self.rows.iter().map(|r| r.gamma).collect();
        g.dedup();
        g
    }
}

struct MechStats {
    expense: f64,
    reliability: f64,
    failed: bool,
    selected: f64,
}

struct InstanceStats {
    per_gamma: Vec<(MechStats, MechStats)>,
}

/// Baseline evaluation for one instance and margin: joint Monte Carlo over
/// the random selection order and the realized reductions. Expected payments
/// are analytic per order; reliability counts realized draws.
fn sce_eval(
    agents: &[AgentModel],
    decisions: &[Option<SceBidDecision>],
    reserve: &ReserveSchedule,
    m: f64,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> MechStats {
    let participants: Vec<usize> = decisions
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.as_ref().map(|_| i))
        .collect();
    let target = gamma * m;
    let total_claimed: f64 = participants
        .iter()
        .map(|&i| decisions[i].as_ref().unwrap().b)
        .sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if total_claimed < target - crate::MONEY_EPS {
        // every participant is always selected; the shortfall goes to the
        // reserve and only the realized reductions vary
        let shortfall = target - total_claimed;
        let expense: f64 = participants
            .iter()
            .map(|&i| decisions[i].as_ref().unwrap().expected_reward)
            .sum::<f64>()
            + reserve.cost(shortfall);
        let mut hits = 0usize;
        for _ in 0..samples {
            let total: f64 = participants
                .iter()
                .map(|&i| {
                    let d = decisions[i].as_ref().unwrap();
                    agents[i].levels[d.level].outcome.sample(&mut rng)
                })
                .sum();
            if total + shortfall >= m - 1e-9 {
                hits += 1;
            }
        }
        return MechStats {
            expense,
            reliability: hits as f64 / samples as f64,
            failed: shortfall > crate::MONEY_EPS,
            selected: participants.len() as f64,
        };
    }

    let mut order = participants.clone();
    let mut expense_sum = 0.0;
    let mut selected_sum = 0usize;
    let mut hits = 0usize;
    for _ in 0..samples {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut cum = 0.0;
        let mut expense = 0.0;
        let mut total = 0.0;
        let mut n_sel = 0usize;
        for &i in &order {
            if cum >= target - crate::MONEY_EPS {
                break;
            }
            let d = decisions[i].as_ref().unwrap();
            cum += d.b;
            expense += d.expected_reward;
            total += agents[i].levels[d.level].outcome.sample(&mut rng);
            n_sel += 1;
        }
        expense_sum += expense;
        selected_sum += n_sel;
        if total >= m - 1e-9 {
            hits += 1;
        }
    }
    MechStats {
        expense: expense_sum / samples as f64,
        reliability: hits as f64 / samples as f64,
        failed: false,
        selected: selected_sum as f64 / samples as f64,
    }
}

fn run_instance(
    s: &Scenario,
    contracts: &[Contract],
    idx: usize,
) -> Result<InstanceStats, SimulateError> {
    let base = derive_seed(s.master_seed, idx as u64);
    let population = sample_population(&s.population, derive_seed(base, 0));
    let unit = s.contracts.step;

    let gamma_max = s.gamma_grid.iter().cloned().fold(f64::MIN, f64::max);
    let cap_kwh = gamma_max * s.m;
    let cap_units = (cap_kwh / unit).round() as u32;
    let market = VcgMarket::build(&population, contracts, Some(&s.reserve), unit, cap_units)?;
    let solver = market.solver(cap_units);
    let decisions: Vec<Option<SceBidDecision>> = population.iter().map(sce_optimal_bid).collect();

    let mut per_gamma = Vec::with_capacity(s.gamma_grid.len());
    for (gi, &gamma) in s.gamma_grid.iter().enumerate() {
        let out = market.outcome(&solver, s.m, gamma)?;
        let vcg_rel = success_prob_mc(
            &out.selected_dists(),
            out.reserve_kwh,
            s.m,
            s.mc_samples,
            derive_seed(base, 1 + 2 * gi as u64),
        )?;
        let vcg = MechStats {
            expense: out.expected_total_expense,
            reliability: vcg_rel.probability,
            failed: out.reserve_kwh > crate::MONEY_EPS,
            selected: out.selected.len() as f64,
        };
        let sce = sce_eval(
            &population,
            &decisions,
            &s.reserve,
            s.m,
            gamma,
            s.mc_samples,
            derive_seed(base, 2 + 2 * gi as u64),
        );
        per_gamma.push((vcg, sce));
    }
    Ok(InstanceStats { per_gamma })
}

/// Runs the full sweep: for every instance a fresh population, for every
/// safety margin one auction run and one baseline evaluation. Instances run
/// in parallel on the current rayon pool; results are reduced in instance
/// order, so the table is identical for any thread count.
pub fn run_scenario(s: &Scenario) -> Result<ResultTable, SimulateError> {
    s.validate()?;
    let contracts = contract_grid(s.contracts.step, s.contracts.max, s.contracts.family);
    let instances: Vec<InstanceStats> = (0..s.instances)
        .into_par_iter()
        .map(|idx| run_instance(s, &contracts, idx))
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(2 * s.gamma_grid.len());
    for (gi, &gamma) in s.gamma_grid.iter().enumerate() {
        for (mech, pick) in [("vcg", 0usize), ("sce", 1usize)] {
            let mut expense = 0.0;
            let mut reliability = 0.0;
            let mut failures = 0usize;
            let mut selected = 0.0;
            for inst in &instances {
                let stats = if pick == 0 {
                    &inst.per_gamma[gi].0
                } else {
                    &inst.per_gamma[gi].1
                };
                expense += stats.expense;
                reliability += stats.reliability;
                failures += stats.failed as usize;
                selected += stats.selected;
            }
            let n = s.instances as f64;
            rows.push(ResultRow {
                gamma,
                mechanism: mech.to_string(),
                mean_expense: expense / n,
                mean_reliability: reliability / n,
                failure_fraction: failures as f64 / n,
                mean_selected: selected / n,
                instances: s.instances,
                seed: s.master_seed,
            });
        }
    }
    Ok(ResultTable { rows })
}

/// One column of the worked linear-penalty table: auction outcome for one
/// reduction goal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Column {
    pub m: f64,
    /// Selected agents with their commitments and rewards.
    pub selected: Vec<(String, f64, f64)>,
    pub reserve_kwh: f64,
    pub social_cost: f64,
    pub expense: f64,
    pub pr_full: f64,
    pub pr_three_quarters: f64,
    pub pr_half: f64,
}

/// One column of the baseline table for the same economy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Column {
    pub m: f64,
    pub mean_selected: f64,
    pub mean_reserve_kwh: f64,
    pub expected_expense: f64,
    pub pr_full: f64,
    pub pr_three_quarters: f64,
    pub pr_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkedTables {
    pub table1: Vec<Table1Column>,
    pub table2: Vec<Table2Column>,
}

pub const TABLE_GOALS: [f64; 8] = [50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 400.0, 1000.0];

fn worked_example_agents() -> Vec<AgentModel> {
    vec![
        AgentModel::new(
            "a1",
            vec![EffortLevel {
                cost: 0.0,
                outcome: ReductionDistribution::Uniform {
                    lo: 100.0,
                    hi: 200.0,
                },
            }],
        ),
        AgentModel::new(
            "a2",
            vec![EffortLevel {
                cost: 0.0,
                outcome: ReductionDistribution::Uniform {
                    lo: 50.0,
                    hi: 250.0,
                },
            }],
        ),
    ]
}

/// Reproduces the worked two-agent economy: linear-penalty contracts on a
/// 50 kWh grid, reserve at $0.5 per kWh, reduction goals from 50 to 1000.
/// Table 1 is the auction, table 2 the order-averaged baseline. Success
/// probabilities are exact convolutions at a 1 kWh grid.
pub fn reproduce_worked_tables() -> Result<WorkedTables, SimulateError> {
    let agents = worked_example_agents();
    let grid = contract_grid(50.0, 350.0, ContractFamily::LinearPenalty);
    let reserve = ReserveSchedule::Linear { slope: 0.5 };

    let mut table1 = Vec::with_capacity(TABLE_GOALS.len());
    let mut table2 = Vec::with_capacity(TABLE_GOALS.len());
    for &m in &TABLE_GOALS {
        let out = run_dr_vcg(&agents, &grid, Some(&reserve), m, 1.0, 50.0)?;
        let dists = out.selected_dists();
        let prob = |factor: f64| -> Result<f64, SimulateError> {
            Ok(success_prob_exact(&dists, out.reserve_kwh, factor * m, 1.0)?.probability)
        };
        table1.push(Table1Column {
            m,
            selected: out
                .selected
                .iter()
                .map(|sel| (sel.agent_id.clone(), sel.commitment, out.rewards[sel.agent]))
                .collect(),
            reserve_kwh: out.reserve_kwh,
            social_cost: out.sum_of_bids.unwrap_or(0.0),
            expense: out.expected_total_expense,
            pr_full: prob(1.0)?,
            pr_three_quarters: prob(0.75)?,
            pr_half: prob(0.5)?,
        });

        let exp = expected_dr_sce(&agents, &reserve, m, 1.0, 0, 1)?;
        let prob = |factor: f64| -> Result<f64, SimulateError> {
            let mut acc = 0.0;
            for (w, outcome) in &exp.outcomes {
                let p = success_prob_exact(
                    &outcome.selected_dists(),
                    outcome.reserve_kwh,
                    factor * m,
                    1.0,
                )?
                .probability;
                acc += w * p;
            }
            Ok(acc)
        };
        let mean_reserve: f64 = exp.outcomes.iter().map(|(w, o)| w * o.reserve_kwh).sum();
        table2.push(Table2Column {
            m,
            mean_selected: exp.mean_selected,
            mean_reserve_kwh: mean_reserve,
            expected_expense: exp.expected_expense,
            pr_full: prob(1.0)?,
            pr_three_quarters: prob(0.75)?,
            pr_half: prob(0.5)?,
        });
    }
    Ok(WorkedTables { table1, table2 })
}

impl WorkedTables {
    pub fn table1_csv(&self) -> String {
        let mut out = String::from(
            "m,selected,sc,ell_1,ell_2,r_1,r_2,expense,pr_full,pr_three_quarters,pr_half\n",
        );
        for col in &self.table1 {
            let (mut ells, mut rewards) = (vec![], vec![]);
            for id in ["a1", "a2"] {
                match col.selected.iter().find(|(a, _, _)| a == id) {
                    Some((_, ell, r)) => {
                        ells.push(fmt_sig(*ell));
                        rewards.push(fmt_sig(*r));
                    }
                    None => {
                        ells.push("-".to_string());
                        rewards.push("-".to_string());
                    }
                }
            }
            let mut selected = format!(
                "{{{}}}",
                col.selected
                    .iter()
                    .map(|(a, _, _)| a.as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            if col.reserve_kwh > 0.0 {
                selected.push_str(&format!("+{}", fmt_sig(col.reserve_kwh)));
            }
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                fmt_sig(col.m),
                selected,
                fmt_sig(col.social_cost),
                ells[0],
                ells[1],
                rewards[0],
                rewards[1],
                fmt_sig(col.expense),
                fmt_sig(col.pr_full),
                fmt_sig(col.pr_three_quarters),
                fmt_sig(col.pr_half),
            ));
        }
        out
    }

    pub fn table2_csv(&self) -> String {
        let mut out = String::from(
            "m,mean_selected,mean_reserve_kwh,expected_expense,pr_full,pr_three_quarters,pr_half\n",
        );
        for col in &self.table2 {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_sig(col.m),
                fmt_sig(col.mean_selected),
                fmt_sig(col.mean_reserve_kwh),
                fmt_sig(col.expected_expense),
                fmt_sig(col.pr_full),
                fmt_sig(col.pr_three_quarters),
                fmt_sig(col.pr_half),
            ));
        }
        out
    }
}

/// The three-bidder fixed-contract example: bids, selection, rewards, total
/// expense, and the exact failure probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunningExampleSummary {
    pub sb_star: f64,
    pub rewards: Vec<(String, f64)>,
    pub expected_penalties: f64,
    pub expense: f64,
    pub failure_prob: f64,
}

pub fn reproduce_running_example() -> Result<RunningExampleSummary, SimulateError> {
    let agents = vec![
        AgentModel::new(
            "a1",
            vec![EffortLevel {
                cost: 0.0,
                outcome: ReductionDistribution::Bernoulli { q: 100.0, p: 1.0 },
            }],
        ),
        AgentModel::new(
            "a2",
            vec![EffortLevel {
                cost: 0.0,
                outcome: ReductionDistribution::Bernoulli { q: 100.0, p: 0.9 },
            }],
        ),
        AgentModel::new(
            "a3",
            vec![EffortLevel {
                cost: 0.0,
                outcome: ReductionDistribution::Bernoulli { q: 100.0, p: 0.7 },
            }],
        ),
    ];
    let contracts =
        vec![Contract::fixed(100.0, 50.0)
            .map_err(|e| SimulateError::InvalidScenario(e.to_string()))?];
    let out = run_dr_vcg(&agents, &contracts, None, 200.0, 1.0, 100.0)?;
    let success = success_prob_exact(&out.selected_dists(), out.reserve_kwh, 200.0, 1.0)?;
    Ok(RunningExampleSummary {
        sb_star: out.sum_of_bids.unwrap(),
        rewards: agents
            .iter()
            .enumerate()
            .map(|(i, a)| (a.id.clone(), out.rewards[i]))
            .collect(),
        expected_penalties: out.expected_penalties,
        expense: out.expected_total_expense,
        failure_prob: 1.0 - success.probability,
    })
}

impl RunningExampleSummary {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,value\n");
        out.push_str(&format!("sb_star,{}\n", fmt_sig(self.sb_star)));
        for (id, r) in &self.rewards {
            out.push_str(&format!("reward_{id},{}\n", fmt_sig(*r)));
        }
        out.push_str(&format!(
            "expected_penalties,{}\n",
            fmt_sig(self.expected_penalties)
        ));
        out.push_str(&format!("expense,{}\n", fmt_sig(self.expense)));
        out.push_str(&format!("failure_prob,{}\n", fmt_sig(self.failure_prob)));
        out
    }
}
