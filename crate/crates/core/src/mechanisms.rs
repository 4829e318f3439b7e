//! End-to-end mechanism runs: the VCG contract auction and the deployed
//! pay-per-kWh baseline, plus ex-post realization.
//!
//! The VCG path forms truthful bids from agent models, appends the reserve as
//! a virtual bidder, selects the cheapest covering contract set, and pays
//! Clarke rewards. The baseline (DR-SCE) selects bidders in a given order
//! until the claimed reductions reach the procurement target and pays $0.5
//! per reduced kWh between 50% and 150% of the bid.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::agents::{AgentModel, ReductionDistribution};
use crate::allocation::{AllocationError, BidMatrix, MenuEntry, MultiTargetSolver};
use crate::contracts::{Contract, ReserveSchedule};

#[derive(Debug, Error, PartialEq)]
pub enum MechanismError {
    #[error("no feasible contract set reaches the target (no reserve provided)")]
    Infeasible,
    #[error("invalid mechanism input: {0}")]
    InvalidInput(String),
}

impl From<AllocationError> for MechanismError {
    fn from(e: AllocationError) -> Self {
        match e {
            AllocationError::Infeasible => MechanismError::Infeasible,
            other => MechanismError::InvalidInput(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Vcg,
    Sce,
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MechanismKind::Vcg => write!(f, "vcg"),
            MechanismKind::Sce => write!(f, "sce"),
        }
    }
}

/// What a selected agent signed up for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Deal {
    /// A penalty contract won in the auction, with the truthful bid and the
    /// Clarke reward.
    VcgContract {
        contract: Contract,
        bid: f64,
        reward: f64,
    },
    /// A quantity bid under the baseline, paid per realized kWh.
    SceBid { b: f64, expected_reward: f64 },
}

/// A selected agent together with the plan she will follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedAgent {
    pub agent: usize,
    pub agent_id: String,
    /// Chosen effort level (index into the agent's level list).
    pub level: usize,
    pub investment: f64,
    pub expected_penalty: f64,
    /// Distribution of the realized reduction under the chosen level.
    pub outcome_dist: ReductionDistribution,
    /// Claimed reduction in kWh (contract size, or the baseline bid).
    pub commitment: f64,
    pub deal: Deal,
}

/// The result of one mechanism run, before realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub mechanism: MechanismKind,
    /// The demand surge the run is evaluated against (kWh).
    pub m_eval: f64,
    /// Procurement target gamma * M (kWh).
    pub target: f64,
    pub gamma: f64,
    /// kWh per allocation unit.
    pub unit: f64,
    pub selected: Vec<SelectedAgent>,
    /// Quantity covered by the fallback option (kWh); counts as a
    /// deterministic reduction.
    pub reserve_kwh: f64,
    /// Face payment to the fallback option.
    pub external_cost: f64,
    /// Optimal sum of bids, including the reserve's face bid (auction runs
    /// only).
    pub sum_of_bids: Option<f64>,
    /// Reward per agent index; unselected agents hold exactly zero. For the
    /// baseline these are expected payments.
    pub rewards: Vec<f64>,
    pub rewards_total: f64,
    pub expected_penalties: f64,
    /// rewards_total + external_cost - expected_penalties.
    pub expected_total_expense: f64,
}

impl MechanismOutcome {
    pub fn selected_dists(&self) -> Vec<ReductionDistribution> {
        self.selected.iter().map(|s| s.outcome_dist).collect()
    }

    /// CSV row: mechanism, M, gamma, expense, reliability, external_cost,
    /// n_selected.
    pub fn csv_row(&self, reliability: f64) -> String {
        use crate::simulate::fmt_sig;
        format!(
            "{},{},{},{},{},{},{}",
            self.mechanism,
            fmt_sig(self.m_eval),
            fmt_sig(self.gamma),
            fmt_sig(self.expected_total_expense),
            fmt_sig(reliability),
            fmt_sig(self.external_cost),
            self.selected.len()
        )
    }
}

fn to_units(x: f64, unit: f64, what: &str) -> Result<u32, MechanismError> {
    if unit <= 0.0 || !unit.is_finite() {
        return Err(MechanismError::InvalidInput(format!(
            "allocation unit must be positive, got {unit}"
        )));
    }
    let v = x / unit;
    let r = v.round();
    if (v - r).abs() > 1e-6 || r < 0.0 || r > u32::MAX as f64 {
        return Err(MechanismError::InvalidInput(format!(
            "{what} = {x} is not a nonnegative multiple of the {unit} kWh unit"
        )));
    }
    Ok(r as u32)
}

/// A bid market prepared for auction runs: truthful menus plus the reserve,
/// reusable across procurement targets up to the cap it was built with.
pub struct VcgMarket<'a> {
    agents: &'a [AgentModel],
    contracts: &'a [Contract],
    pub bids: BidMatrix,
    unit: f64,
}

impl<'a> VcgMarket<'a> {
    pub fn build(
        agents: &'a [AgentModel],
        contracts: &'a [Contract],
        reserve: Option<&ReserveSchedule>,
        unit: f64,
        cap_units: u32,
    ) -> Result<VcgMarket<'a>, MechanismError> {
        let ells: Vec<u32> = contracts
            .iter()
            .map(|c| to_units(c.ell, unit, "contract size"))
            .collect::<Result<_, _>>()?;
        let ids = agents.iter().map(|a| a.id.clone()).collect();
        let menus = agents
            .iter()
            .map(|a| {
                contracts
                    .iter()
                    .zip(&ells)
                    .enumerate()
                    .filter(|(_, (_, &ell))| ell > 0)
                    .map(|(tag, (c, &ell))| MenuEntry {
                        ell,
                        bid: a.optimal_plan(c).total_cost,
                        tag,
                    })
                    .collect()
            })
            .collect();
        let mut bids = BidMatrix::new(ids, menus)?;
        if let Some(schedule) = reserve {
            bids = bids.with_reserve(schedule, unit, cap_units);
        }
        Ok(VcgMarket {
            agents,
            contracts,
            bids,
            unit,
        })
    }

    pub fn solver(&self, cap_units: u32) -> MultiTargetSolver {
        MultiTargetSolver::new(&self.bids, cap_units)
    }

    /// Runs the auction for target gamma * m using prebuilt tables.
    pub fn outcome(
        &self,
        solver: &MultiTargetSolver,
        m: f64,
        gamma: f64,
    ) -> Result<MechanismOutcome, MechanismError> {
        let target_units = to_units(gamma * m, self.unit, "procurement target")?;
        let (assignment, sb_star, rewards) = solver.rewards(&self.bids, target_units)?;

        let mut selected = Vec::new();
        let mut reserve_kwh = 0.0;
        let mut external_cost = 0.0;
        let mut expected_penalties = 0.0;
        for pair in &assignment.pairs {
            if self.bids.is_reserve(pair.agent) {
                reserve_kwh += pair.ell as f64 * self.unit;
                external_cost += pair.bid;
                continue;
            }
            let contract = &self.contracts[pair.contract];
            let agent = &self.agents[pair.agent];
            let plan = agent.optimal_plan(contract);
            expected_penalties += plan.expected_penalty;
            selected.push(SelectedAgent {
                agent: pair.agent,
                agent_id: agent.id.clone(),
                level: plan.level,
                investment: plan.investment,
                expected_penalty: plan.expected_penalty,
                outcome_dist: agent.levels[plan.level].outcome,
                commitment: contract.ell,
                deal: Deal::VcgContract {
                    contract: contract.clone(),
                    bid: pair.bid,
                    reward: rewards.0[pair.agent],
                },
            });
        }
        let rewards_total = rewards.total();
        Ok(MechanismOutcome {
            mechanism: MechanismKind::Vcg,
            m_eval: m,
            target: gamma * m,
            gamma,
            unit: self.unit,
            selected,
            reserve_kwh,
            external_cost,
            sum_of_bids: Some(sb_star),
            rewards: rewards.0,
            rewards_total,
            expected_penalties,
            expected_total_expense: rewards_total + external_cost - expected_penalties,
        })
    }
}

/// One full auction run: truthful bids over `contracts`, reserve appended,
/// selection for target gamma * m, Clarke rewards.
pub fn run_dr_vcg(
    agents: &[AgentModel],
    contracts: &[Contract],
    reserve: Option<&ReserveSchedule>,
    m: f64,
    gamma: f64,
    unit: f64,
) -> Result<MechanismOutcome, MechanismError> {
    if gamma < 1.0 - 1e-12 {
        return Err(MechanismError::InvalidInput(format!(
            "safety margin gamma must be at least 1, got {gamma}"
        )));
    }
    let cap = to_units(gamma * m, unit, "procurement target")?;
    let market = VcgMarket::build(agents, contracts, reserve, unit, cap)?;
    let solver = market.solver(cap);
    market.outcome(&solver, m, gamma)
}

/// Realized baseline payment for a bid of `b` kWh and a reduction of `x`:
/// nothing below half the bid, $0.5 per kWh up to 150% of the bid, capped
/// beyond that.
pub fn sce_reward(b: f64, x: f64) -> f64 {
    debug_assert!(b >= 0.0 && x >= 0.0);
    if x < 0.5 * b {
        0.0
    } else if x < 1.5 * b {
        0.5 * x
    } else {
        0.75 * b
    }
}

/// Expected baseline payment for a bid of `b` against a reduction
/// distribution, in closed form.
pub fn expected_sce_reward(b: f64, d: &ReductionDistribution) -> f64 {
    match *d {
        ReductionDistribution::Point { q } => sce_reward(b, q),
        ReductionDistribution::Bernoulli { q, p } => {
            p * sce_reward(b, q) + (1.0 - p) * sce_reward(b, 0.0)
        }
        ReductionDistribution::Uniform { lo, hi } => {
            if hi <= lo {
                return sce_reward(b, lo);
            }
            let density = 1.0 / (hi - lo);
            // x/2 over the support's overlap with [b/2, 3b/2)
            let u = lo.max(0.5 * b);
            let v = hi.min(1.5 * b);
            let middle = if v > u {
                0.25 * (v * v - u * u) * density
            } else {
                0.0
            };
            // capped at 3b/4 from 3b/2 onward
            let w = lo.max(1.5 * b);
            let top = if hi > w {
                0.75 * b * (hi - w) * density
            } else {
                0.0
            };
            middle + top
        }
    }
}

/// An agent's decision when facing the baseline: which level to prepare and
/// what quantity to bid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceBidDecision {
    pub b: f64,
    pub level: usize,
    pub expected_reward: f64,
}

/// Dominant-strategy baseline bid, or `None` when no level yields positive
/// expected utility (the agent stays out).
pub fn sce_optimal_bid(a: &AgentModel) -> Option<SceBidDecision> {
    let mut best: Option<(f64, SceBidDecision)> = None;
    for (idx, level) in a.levels.iter().enumerate() {
        let (b, er) = optimal_bid_for_outcome(&level.outcome);
        let utility = er - level.cost;
        if best.as_ref().is_none_or(|(u, _)| utility > *u) {
            best = Some((
                utility,
                SceBidDecision {
                    b,
                    level: idx,
                    expected_reward: er,
                },
            ));
        }
    }
    let (utility, decision) = best.expect("agents always have the null level");
    if utility > 0.0 {
        Some(decision)
    } else {
        None
    }
}

fn optimal_bid_for_outcome(d: &ReductionDistribution) -> (f64, f64) {
    match *d {
        ReductionDistribution::Point { q } => (q, sce_reward(q, q)),
        ReductionDistribution::Bernoulli { q, p } => (q, p * sce_reward(q, q)),
        ReductionDistribution::Uniform { lo, hi } => {
            if hi <= lo {
                return (lo, sce_reward(lo, lo));
            }
            // If some bid's payment band [b/2, 3b/2] contains the whole
            // support, every such bid earns E[X]/2; take the midpoint bid,
            // clipped into the feasible band.
            let b_min = 2.0 * hi / 3.0;
            let b_max = 2.0 * lo;
            if b_min <= b_max + 1e-12 {
                let b = (0.5 * (lo + hi)).clamp(b_min, b_max);
                (b, expected_sce_reward(b, d))
            } else {
                best_uniform_bid(d, lo, hi)
            }
        }
    }
}

/// Maximizes the expected baseline payment over b in (0, 2*hi].
///
/// The objective is quadratic between the breakpoints where b/2 or 3b/2
/// crosses the support ends, so each piece's maximum sits at an endpoint or
/// at the vertex of the quadratic through three equally spaced samples.
/// This resolves the maximizer to ~1e-12, which a golden-section search
/// cannot do here: the objective is flat at f64 resolution near its peak,
/// and the worked examples need the boundary bid (150) essentially exactly.
fn best_uniform_bid(d: &ReductionDistribution, lo: f64, hi: f64) -> (f64, f64) {
    let mut cuts: Vec<f64> = [0.0, 2.0 * lo / 3.0, 2.0 * lo, 2.0 * hi / 3.0, 2.0 * hi]
        .into_iter()
        .filter(|&b| (0.0..=2.0 * hi).contains(&b))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut best: Option<(f64, f64)> = None;
    let mut consider = |b: f64| {
        let v = expected_sce_reward(b, d);
        let better = match best {
            None => true,
            // ties go to the smaller bid, for determinism
            Some((bb, bv)) => v > bv + 1e-15 || (v >= bv - 1e-15 && b < bb),
        };
        if better {
            best = Some((b, v));
        }
    };
    for seg in cuts.windows(2) {
        let (b1, b2) = (seg[0], seg[1]);
        if b2 - b1 <= 1e-12 {
            continue;
        }
        consider(b2);
        if b1 > 0.0 {
            consider(b1);
        }
        let h = 0.5 * (b2 - b1);
        let mid = b1 + h;
        let y0 = expected_sce_reward(b1, d);
        let y1 = expected_sce_reward(mid, d);
        let y2 = expected_sce_reward(b2, d);
        let curvature = y0 - 2.0 * y1 + y2;
        if curvature < 0.0 {
            let t = (y0 - y2) / (2.0 * curvature);
            let vertex = mid + t * h;
            if vertex > b1 && vertex < b2 {
                consider(vertex);
            }
        }
    }
    best.expect("the bid domain is nonempty")
}

fn sce_decisions(agents: &[AgentModel]) -> Vec<Option<SceBidDecision>> {
    agents.iter().map(sce_optimal_bid).collect()
}

fn sce_outcome(
    agents: &[AgentModel],
    decisions: &[Option<SceBidDecision>],
    selected_idx: &[usize],
    reserve: &ReserveSchedule,
    m: f64,
    gamma: f64,
) -> MechanismOutcome {
    let target = gamma * m;
    let committed: f64 = selected_idx
        .iter()
        .map(|&i| decisions[i].as_ref().unwrap().b)
        .sum();
    let shortfall = if committed >= target - crate::MONEY_EPS {
        0.0
    } else {
        target - committed
    };
    let external_cost = reserve.cost(shortfall);

    let mut rewards = vec![0.0; agents.len()];
    let selected = selected_idx
        .iter()
        .map(|&i| {
            let d = decisions[i].as_ref().unwrap();
            let level = &agents[i].levels[d.level];
            rewards[i] = d.expected_reward;
            SelectedAgent {
                agent: i,
                agent_id: agents[i].id.clone(),
                level: d.level,
                investment: level.cost,
                expected_penalty: 0.0,
                outcome_dist: level.outcome,
                commitment: d.b,
                deal: Deal::SceBid {
                    b: d.b,
                    expected_reward: d.expected_reward,
                },
            }
        })
        .collect::<Vec<_>>();
    let rewards_total: f64 = rewards.iter().sum();
    MechanismOutcome {
        mechanism: MechanismKind::Sce,
        m_eval: m,
        target,
        gamma,
        unit: 1.0,
        selected,
        reserve_kwh: shortfall,
        external_cost,
        sum_of_bids: None,
        rewards,
        rewards_total,
        expected_penalties: 0.0,
        expected_total_expense: rewards_total + external_cost,
    }
}

/// One baseline run: participants are taken in `order` until their claimed
/// reductions reach gamma * m; any residual shortfall is covered by the
/// reserve. `order` must visit every participating agent exactly once.
pub fn run_dr_sce(
    agents: &[AgentModel],
    reserve: &ReserveSchedule,
    m: f64,
    gamma: f64,
    order: &[usize],
) -> Result<MechanismOutcome, MechanismError> {
    let decisions = sce_decisions(agents);
    let mut seen = vec![false; agents.len()];
    for &i in order {
        if i >= agents.len() {
            return Err(MechanismError::InvalidInput(format!(
                "order index {i} out of range"
            )));
        }
        if seen[i] {
            return Err(MechanismError::InvalidInput(format!(
                "order visits agent {i} twice"
            )));
        }
        seen[i] = true;
    }
    for (i, d) in decisions.iter().enumerate() {
        if d.is_some() && !seen[i] {
            return Err(MechanismError::InvalidInput(format!(
                "order misses participating agent {i}"
            )));
        }
    }
    let selected_idx = select_in_order(&decisions, order, gamma * m);
    Ok(sce_outcome(
        agents,
        &decisions,
        &selected_idx,
        reserve,
        m,
        gamma,
    ))
}

fn select_in_order(
    decisions: &[Option<SceBidDecision>],
    order: &[usize],
    target: f64,
) -> Vec<usize> {
    if target <= crate::MONEY_EPS {
        return Vec::new();
    }
    let mut cum = 0.0;
    let mut selected = Vec::new();
    for &i in order {
        if cum >= target - crate::MONEY_EPS {
            break;
        }
        if let Some(d) = &decisions[i] {
            selected.push(i);
            cum += d.b;
        }
    }
    selected
}

/// A mixture of baseline outcomes over the random selection order.
#[derive(Debug, Clone, Serialize)]
pub struct SceExpectation {
    /// Distinct selection outcomes with their probabilities (exact over all
    /// participant permutations when there are at most eight participants,
    /// otherwise Monte Carlo frequencies over seeded random orders).
    pub outcomes: Vec<(f64, MechanismOutcome)>,
    pub expected_expense: f64,
    pub expected_external_cost: f64,
    pub mean_selected: f64,
}

/// Baseline expectation over the selection order. Exact permutation
/// averaging for at most eight participants; seeded Monte Carlo over
/// `mc_orders` random orders beyond that.
pub fn expected_dr_sce(
    agents: &[AgentModel],
    reserve: &ReserveSchedule,
    m: f64,
    gamma: f64,
    seed: u64,
    mc_orders: usize,
) -> Result<SceExpectation, MechanismError> {
    if mc_orders == 0 {
        return Err(MechanismError::InvalidInput(
            "need at least one sampled order".to_string(),
        ));
    }
    let decisions = sce_decisions(agents);
    let participants: Vec<usize> = decisions
        .iter()
        .enumerate()
        .filter_map(|(i, d)| d.as_ref().map(|_| i))
        .collect();
    let target = gamma * m;

    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut total = 0usize;
    if participants.len() <= 8 {
        if participants.is_empty() {
            counts.insert(Vec::new(), 1);
            total = 1;
        } else {
            for perm in participants
                .iter()
                .copied()
                .permutations(participants.len())
            {
                let mut set = select_in_order(&decisions, &perm, target);
                set.sort_unstable();
                *counts.entry(set).or_insert(0) += 1;
                total += 1;
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order = participants.clone();
        for _ in 0..mc_orders {
            order.shuffle(&mut rng);
            let mut set = select_in_order(&decisions, &order, target);
            set.sort_unstable();
            *counts.entry(set).or_insert(0) += 1;
            total += 1;
        }
    }

    let mut outcomes = Vec::with_capacity(counts.len());
    let mut expected_expense = 0.0;
    let mut expected_external_cost = 0.0;
    let mut mean_selected = 0.0;
    for (set, count) in counts {
        let weight = count as f64 / total as f64;
        let outcome = sce_outcome(agents, &decisions, &set, reserve, m, gamma);
        expected_expense += weight * outcome.expected_total_expense;
        expected_external_cost += weight * outcome.external_cost;
        mean_selected += weight * outcome.selected.len() as f64;
        outcomes.push((weight, outcome));
    }
    Ok(SceExpectation {
        outcomes,
        expected_expense,
        expected_external_cost,
        mean_selected,
    })
}

/// Ex-post result for one selected agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealizedAgent {
    pub agent: usize,
    pub agent_id: String,
    pub reduction: f64,
    pub penalty: f64,
    /// Net payment to the agent: reward minus penalty (auction), or the
    /// realized per-kWh payment (baseline).
    pub payment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Realization {
    pub per_agent: Vec<RealizedAgent>,
    /// Realized reduction including the reserve's deterministic quantity.
    pub total_reduction: f64,
    /// Whether the realized reduction reached the evaluation target M.
    pub met_target: bool,
    /// Net payments plus external cost.
    pub realized_expense: f64,
}

/// Draws each selected agent's reduction and settles payments.
pub fn realize<R: Rng + ?Sized>(outcome: &MechanismOutcome, rng: &mut R) -> Realization {
    let mut per_agent = Vec::with_capacity(outcome.selected.len());
    let mut total_reduction = outcome.reserve_kwh;
    let mut payments = 0.0;
    for sel in &outcome.selected {
        let x = sel.outcome_dist.sample(rng);
        let (penalty, payment) = match &sel.deal {
            Deal::VcgContract {
                contract, reward, ..
            } => {
                let pen = contract.penalty(x);
                (pen, reward - pen)
            }
            Deal::SceBid { b, .. } => (0.0, sce_reward(*b, x)),
        };
        total_reduction += x;
        payments += payment;
        per_agent.push(RealizedAgent {
            agent: sel.agent,
            agent_id: sel.agent_id.clone(),
            reduction: x,
            penalty,
            payment,
        });
    }
    Realization {
        per_agent,
        total_reduction,
        met_target: total_reduction >= outcome.m_eval - crate::MONEY_EPS,
        realized_expense: payments + outcome.external_cost,
    }
}
