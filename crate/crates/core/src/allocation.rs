//! Optimal contract-set selection and Clarke-pivot reward computation.
//!
//! Quantities here live on an integer grid of allocation units. The solver is
//! a covering-knapsack dynamic program over agents with the coverage state
//! clamped at the target: `D(k, m)` is the cheapest way for agents `1..k` to
//! reach clamped coverage `m`, and the answer is `D(n, target)`. Rewards are
//! Clarke pivots, computed either by naive leave-one-out re-solves or from
//! shared prefix/suffix tables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::ReserveSchedule;

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("no valid contract set reaches the target")]
    Infeasible,
    #[error("brute-force enumeration bound exceeded ({combinations} combinations)")]
    SizeLimit { combinations: u128 },
    #[error("invalid bid matrix: {0}")]
    InvalidInput(String),
}

/// One bid: a contract size in allocation units and the money asked for it.
/// `tag` preserves the caller's contract index through menu sorting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MenuEntry {
    pub ell: u32,
    pub bid: f64,
    #[serde(default, skip_serializing)]
    pub tag: usize,
}

/// Per-agent bid menus. Pairs absent from a menu are "no bid" — there is no
/// infinity sentinel in any arithmetic path. Menus may differ per agent, which
/// also covers the variant where agents propose their own contracts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BidMatrixRepr")]
pub struct BidMatrix {
    pub agents: Vec<String>,
    pub menus: Vec<Vec<MenuEntry>>,
    /// Index of the virtual reserve agent, if one was appended. The reserve
    /// participates in every optimization but is paid its face bid rather
    /// than a Clarke reward.
    pub reserve: Option<usize>,
}

#[derive(Deserialize)]
struct BidMatrixRepr {
    agents: Vec<String>,
    menus: Vec<Vec<MenuEntry>>,
    #[serde(default)]
    reserve: Option<usize>,
}

impl TryFrom<BidMatrixRepr> for BidMatrix {
    type Error = AllocationError;
    fn try_from(raw: BidMatrixRepr) -> Result<Self, AllocationError> {
        let mut bm = BidMatrix::new(raw.agents, raw.menus)?;
        if let Some(r) = raw.reserve {
            if r >= bm.agents.len() {
                return Err(AllocationError::InvalidInput(format!(
                    "reserve index {r} out of range"
                )));
            }
            bm.reserve = Some(r);
        }
        Ok(bm)
    }
}

impl BidMatrix {
    /// Validates bids (finite, nonnegative), tags entries with their original
    /// position, and sorts each menu by (ell, bid, tag) so that ties in the
    /// solver resolve toward smaller commitments.
    pub fn new(
        agents: Vec<String>,
        menus: Vec<Vec<MenuEntry>>,
    ) -> Result<BidMatrix, AllocationError> {
        if agents.len() != menus.len() {
            return Err(AllocationError::InvalidInput(format!(
                "{} agents but {} menus",
                agents.len(),
                menus.len()
            )));
        }
        let menus = menus
            .into_iter()
            .map(|mut menu| {
                for (pos, e) in menu.iter_mut().enumerate() {
                    if !e.bid.is_finite() || e.bid < 0.0 {
                        return Err(AllocationError::InvalidInput(format!(
                            "bid must be finite and nonnegative, got {}",
                            e.bid
                        )));
                    }
                    e.tag = pos;
                }
                menu.sort_by(|a, b| {
                    a.ell
                        .cmp(&b.ell)
                        .then(a.bid.total_cmp(&b.bid))
                        .then(a.tag.cmp(&b.tag))
                });
                Ok(menu)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BidMatrix {
            agents,
            menus,
            reserve: None,
        })
    }

    /// Appends the fallback option as a virtual agent bidding `R(m)` on a
    /// contract of every grid quantity `m` up to `max_units`. It is placed
    /// last so that ties between real agents and the reserve resolve toward
    /// fewer reserve units.
    pub fn with_reserve(
        mut self,
        schedule: &ReserveSchedule,
        unit: f64,
        max_units: u32,
    ) -> BidMatrix {
        let menu = (1..=max_units)
            .map(|m| MenuEntry {
                ell: m,
                bid: schedule.cost(m as f64 * unit),
                tag: m as usize,
            })
            .collect();
        self.agents.push("reserve".to_string());
        self.menus.push(menu);
        self.reserve = Some(self.agents.len() - 1);
        self
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn is_reserve(&self, i: usize) -> bool {
        self.reserve == Some(i)
    }

    /// The matrix with agent `i` removed (the reserve, if any, stays).
    pub fn without_agent(&self, i: usize) -> BidMatrix {
        let mut agents = self.agents.clone();
        let mut menus = self.menus.clone();
        agents.remove(i);
        menus.remove(i);
        let reserve = self.reserve.map(|r| {
            debug_assert_ne!(r, i, "the reserve agent cannot be removed");
            if r > i {
                r - 1
            } else {
                r
            }
        });
        BidMatrix {
            agents,
            menus,
            reserve,
        }
    }

    /// Scales every bid of agent `i` (used by deviation tests).
    pub fn scale_agent_bids(&self, i: usize, factor: f64) -> BidMatrix {
        let mut out = self.clone();
        for e in &mut out.menus[i] {
            e.bid *= factor;
        }
        out
    }
}

/// One selected (agent, contract) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignedPair {
    pub agent: usize,
    pub agent_id: String,
    /// The caller's contract index (the entry tag).
    pub contract: usize,
    /// Contract size in allocation units.
    pub ell: u32,
    pub bid: f64,
}

/// A valid contract set: at most one contract per agent, claimed coverage of
/// at least the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<AssignedPair>,
    /// Total claimed coverage in allocation units (unclamped).
    pub total_commitment: u64,
    pub sum_of_bids: f64,
}

impl Assignment {
    fn from_pairs(pairs: Vec<AssignedPair>) -> Assignment {
        let total_commitment = pairs.iter().map(|p| p.ell as u64).sum();
        let sum_of_bids = pairs.iter().map(|p| p.bid).sum();
        Assignment {
            pairs,
            total_commitment,
            sum_of_bids,
        }
    }

    pub fn pair_for(&self, agent: usize) -> Option<&AssignedPair> {
        self.pairs.iter().find(|p| p.agent == agent)
    }
}

/// Clarke-pivot rewards, indexed like the bid matrix agents. Unselected
/// agents and the reserve map to exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector(pub Vec<f64>);

impl RewardVector {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

const SKIP: u64 = u64::MAX;

fn pack(entry: usize, m_prev: usize) -> u64 {
    ((entry as u64) << 32) | m_prev as u64
}

fn unpack(c: u64) -> (usize, usize) {
    ((c >> 32) as usize, (c & 0xFFFF_FFFF) as usize)
}

/// Shared prefix/suffix dynamic-programming tables for one bid matrix,
/// clamped at `cap` units of coverage.
///
/// One build answers every target `t <= cap`: optimal values, assignments,
/// and leave-one-out values for Clarke rewards, each in O(cap) per query.
/// The scenario runner exploits this to sweep safety margins without
/// re-running the DP.
pub struct MultiTargetSolver {
    cap: usize,
    /// prefix[k][m]: cheapest clamped coverage `m` using agents `0..k`.
    prefix: Vec<Vec<f64>>,
    /// choices[k][m]: how prefix[k+1][m] was reached (SKIP or packed
    /// (entry, m_prev)).
    choices: Vec<Vec<u64>>,
    /// suffix[k][need]: cheapest way for agents `k..n` to cover >= need.
    suffix: Vec<Vec<f64>>,
}

impl MultiTargetSolver {
    pub fn new(b: &BidMatrix, cap: u32) -> MultiTargetSolver {
        let cap = cap as usize;
        let n = b.n_agents();
        let width = cap + 1;

        let mut prefix = Vec::with_capacity(n + 1);
        let mut choices = Vec::with_capacity(n);
        let mut row = vec![f64::INFINITY; width];
        row[0] = 0.0;
        prefix.push(row);

        for menu in &b.menus {
            let old = prefix.last().unwrap();
            let mut next = old.clone();
            let mut choice = vec![SKIP; width];

            // suffix minima of the previous row, for transitions that
            // overshoot the cap
            let mut sfx_val = vec![f64::INFINITY; width + 1];
            let mut sfx_idx = vec![0usize; width + 1];
            for m in (0..width).rev() {
                if old[m] <= sfx_val[m + 1] {
                    sfx_val[m] = old[m];
                    sfx_idx[m] = m;
                } else {
                    sfx_val[m] = sfx_val[m + 1];
                    sfx_idx[m] = sfx_idx[m + 1];
                }
            }

            for (e_idx, e) in menu.iter().enumerate() {
                let ell = e.ell as usize;
                if ell == 0 {
                    continue; // a null contract never improves anything
                }
                let bid = e.bid;
                if ell <= cap {
                    let prevs = &old[..=cap - ell];
                    let cells = next[ell..].iter_mut().zip(choice[ell..].iter_mut());
                    for (m_prev, (o, (cell, ch))) in prevs.iter().zip(cells).enumerate() {
                        if *o < f64::INFINITY {
                            let cand = *o + bid;
                            if cand < *cell {
                                *cell = cand;
                                *ch = pack(e_idx, m_prev);
                            }
                        }
                    }
                }
                // transitions that overshoot the cap all land on the cap cell
                let clamp_from = if ell > cap { 0 } else { cap - ell + 1 };
                if sfx_val[clamp_from] < f64::INFINITY {
                    let cand = sfx_val[clamp_from] + bid;
                    if cand < next[cap] {
                        next[cap] = cand;
                        choice[cap] = pack(e_idx, sfx_idx[clamp_from]);
                    }
                }
            }
            prefix.push(next);
            choices.push(choice);
        }

        // suffix[k][need]: agents k..n covering at least `need`
        let mut suffix = vec![vec![f64::INFINITY; width]; n + 1];
        suffix[n][0] = 0.0;
        for k in (0..n).rev() {
            let (head, tail) = suffix.split_at_mut(k + 1);
            let next = &mut head[k];
            let old = &tail[0];
            next.copy_from_slice(old);
            for e in &b.menus[k] {
                let ell = e.ell as usize;
                if ell == 0 {
                    continue;
                }
                let bid = e.bid;
                // the entry alone covers any need up to its size
                let top = ell.min(cap);
                for cell in next.iter_mut().take(top + 1).skip(1) {
                    if bid < *cell {
                        *cell = bid;
                    }
                }
                if ell + 1 < width {
                    for (o, cell) in old[1..width - ell].iter().zip(next[ell + 1..].iter_mut()) {
                        if *o < f64::INFINITY {
                            let cand = *o + bid;
                            if cand < *cell {
                                *cell = cand;
                            }
                        }
                    }
                }
            }
        }

        MultiTargetSolver {
            cap,
            prefix,
            choices,
            suffix,
        }
    }

    fn best_cell(&self, target: u32) -> Option<(usize, f64)> {
        let n = self.prefix.len() - 1;
        let mut best = f64::INFINITY;
        let mut best_m = None;
        for m in target as usize..=self.cap {
            let v = self.prefix[n][m];
            if v < best {
                best = v;
                best_m = Some(m);
            }
        }
        best_m.map(|m| (m, best))
    }

    /// Optimal sum of bids for the given target, or infinity if infeasible.
    pub fn value(&self, target: u32) -> f64 {
        self.best_cell(target).map_or(f64::INFINITY, |(_, v)| v)
    }

    /// Optimal assignment for the given target.
    pub fn assignment(
        &self,
        b: &BidMatrix,
        target: u32,
    ) -> Result<(Assignment, f64), AllocationError> {
        assert!(target as usize <= self.cap, "target exceeds solver cap");
        let (mut m, value) = self.best_cell(target).ok_or(AllocationError::Infeasible)?;
        if !value.is_finite() {
            return Err(AllocationError::Infeasible);
        }
        let mut pairs = Vec::new();
        for k in (0..b.n_agents()).rev() {
            let c = self.choices[k][m];
            if c != SKIP {
                let (e_idx, m_prev) = unpack(c);
                let e = &b.menus[k][e_idx];
                pairs.push(AssignedPair {
                    agent: k,
                    agent_id: b.agents[k].clone(),
                    contract: e.tag,
                    ell: e.ell,
                    bid: e.bid,
                });
                m = m_prev;
            }
        }
        pairs.reverse();
        Ok((Assignment::from_pairs(pairs), value))
    }

    /// Optimal value over all agents except `i` (the Clarke counterfactual).
    pub fn leave_one_out(&self, i: usize, target: u32) -> f64 {
        let t = target as usize;
        let mut best = f64::INFINITY;
        for a in 0..=self.cap {
            let p = self.prefix[i][a];
            if p < f64::INFINITY {
                let need = t.saturating_sub(a);
                let s = self.suffix[i + 1][need];
                if s < f64::INFINITY {
                    let cand = p + s;
                    if cand < best {
                        best = cand;
                    }
                }
            }
        }
        best
    }

    /// Clarke rewards for the optimal assignment at `target`.
    pub fn rewards(
        &self,
        b: &BidMatrix,
        target: u32,
    ) -> Result<(Assignment, f64, RewardVector), AllocationError> {
        let (assignment, sb_star) = self.assignment(b, target)?;
        let mut rewards = vec![0.0; b.n_agents()];
        for pair in &assignment.pairs {
            if b.is_reserve(pair.agent) {
                continue;
            }
            let without = self.leave_one_out(pair.agent, target);
            if !without.is_finite() {
                return Err(AllocationError::Infeasible);
            }
            rewards[pair.agent] = without - (sb_star - pair.bid);
        }
        Ok((assignment, sb_star, RewardVector(rewards)))
    }
}

/// Minimum-sum-of-bids contract set reaching `m_target` units, via the
/// clamped-coverage dynamic program. Runs in O(n * k * m_target).
pub fn solve(b: &BidMatrix, m_target: u32) -> Result<(Assignment, f64), AllocationError> {
    MultiTargetSolver::new(b, m_target).assignment(b, m_target)
}

/// Exhaustive oracle: enumerates every per-agent choice (each menu entry or
/// no contract). Only for small instances.
pub fn brute_force_solve(
    b: &BidMatrix,
    m_target: u32,
) -> Result<(Assignment, f64), AllocationError> {
    const LIMIT: u128 = 1_000_000;
    let combinations: u128 = b.menus.iter().map(|m| m.len() as u128 + 1).product();
    if combinations > LIMIT {
        return Err(AllocationError::SizeLimit { combinations });
    }

    let n = b.n_agents();
    // counter[i] = 0 means "no contract", j > 0 means menu entry j - 1
    let mut counter = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        let mut coverage: u64 = 0;
        let mut cost = 0.0;
        for (i, &c) in counter.iter().enumerate() {
            if c > 0 {
                let e = &b.menus[i][c - 1];
                coverage += e.ell as u64;
                cost += e.bid;
            }
        }
        if coverage >= m_target as u64 && best.as_ref().is_none_or(|(bc, _)| cost < *bc) {
            best = Some((cost, counter.clone()));
        }
        // odometer increment
        let mut i = 0;
        loop {
            if i == n {
                let (cost, chosen) = best.ok_or(AllocationError::Infeasible)?;
                let pairs = chosen
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c > 0)
                    .map(|(agent, &c)| {
                        let e = &b.menus[agent][c - 1];
                        AssignedPair {
                            agent,
                            agent_id: b.agents[agent].clone(),
                            contract: e.tag,
                            ell: e.ell,
                            bid: e.bid,
                        }
                    })
                    .collect();
                return Ok((Assignment::from_pairs(pairs), cost));
            }
            counter[i] += 1;
            if counter[i] <= b.menus[i].len() {
                break;
            }
            counter[i] = 0;
            i += 1;
        }
    }
}

/// Clarke rewards by one leave-one-out re-solve per selected agent.
pub fn clarke_rewards(
    b: &BidMatrix,
    m_target: u32,
) -> Result<(Assignment, f64, RewardVector), AllocationError> {
    let (assignment, sb_star) = solve(b, m_target)?;
    let mut rewards = vec![0.0; b.n_agents()];
    for pair in &assignment.pairs {
        if b.is_reserve(pair.agent) {
            continue;
        }
        let (_, without) = solve(&b.without_agent(pair.agent), m_target)?;
        rewards[pair.agent] = without - (sb_star - pair.bid);
    }
    Ok((assignment, sb_star, RewardVector(rewards)))
}

/// Clarke rewards from shared prefix/suffix tables; identical output to
/// [`clarke_rewards`] in O(n * k * m_target + n * m_target).
pub fn clarke_rewards_fast(
    b: &BidMatrix,
    m_target: u32,
) -> Result<(Assignment, f64, RewardVector), AllocationError> {
    MultiTargetSolver::new(b, m_target).rewards(b, m_target)
}

/// The payment the mechanism implicitly offers agent `i` for taking menu
/// entry `entry` (an index into `b.menus[i]`), independent of `i`'s own bids:
/// the optimum without `i` minus what the rest cost when `i` is pinned to
/// that contract.
pub fn cost_independent_price(
    b: &BidMatrix,
    m_target: u32,
    i: usize,
    entry: usize,
) -> Result<f64, AllocationError> {
    let others = b.without_agent(i);
    let (_, without) = solve(&others, m_target)?;
    let ell = b.menus[i][entry].ell;
    let residual = m_target.saturating_sub(ell);
    let (_, pinned) = solve(&others, residual)?;
    Ok(without - pinned)
}

/// A violation of the market-clearing predicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearingViolation {
    pub agent: usize,
    pub agent_id: String,
    pub detail: String,
}

/// Diagnostic report: for each agent, her offered prices must make the
/// mechanism's choice utility-maximizing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClearingReport {
    pub violations: Vec<ClearingViolation>,
    pub tolerance: f64,
}

impl ClearingReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the optimal assignment against the cost-independent prices: every
/// selected agent holds a utility-maximizing contract with nonnegative
/// utility, and no unselected agent has a profitable contract.
pub fn verify_market_clearing(
    b: &BidMatrix,
    m_target: u32,
) -> Result<ClearingReport, AllocationError> {
    let (assignment, _) = solve(b, m_target)?;
    verify_assignment_clearing(b, m_target, &assignment)
}

/// The same predicate evaluated for an arbitrary assignment, used as a
/// negative control in tests.
pub fn verify_assignment_clearing(
    b: &BidMatrix,
    m_target: u32,
    assignment: &Assignment,
) -> Result<ClearingReport, AllocationError> {
    let tol = crate::MONEY_EPS;
    let mut violations = Vec::new();
    for agent in 0..b.n_agents() {
        if b.is_reserve(agent) {
            continue;
        }
        let mut best_utility = f64::NEG_INFINITY;
        let mut utilities = Vec::with_capacity(b.menus[agent].len());
        for entry in 0..b.menus[agent].len() {
            let t = cost_independent_price(b, m_target, agent, entry)?;
            let u = t - b.menus[agent][entry].bid;
            utilities.push(u);
            if u > best_utility {
                best_utility = u;
            }
        }
        match assignment.pair_for(agent) {
            Some(pair) => {
                let chosen = b.menus[agent]
                    .iter()
                    .position(|e| e.tag == pair.contract)
                    .expect("assigned contract must come from the agent's menu");
                let u = utilities[chosen];
                if u < -tol {
                    violations.push(ClearingViolation {
                        agent,
                        agent_id: b.agents[agent].clone(),
                        detail: format!("selected with negative utility {u}"),
                    });
                }
                if u < best_utility - tol {
                    violations.push(ClearingViolation {
                        agent,
                        agent_id: b.agents[agent].clone(),
                        detail: format!(
                            "selected contract has utility {u}, but {best_utility} is offered"
                        ),
                    });
                }
            }
            None => {
                if best_utility > tol {
                    violations.push(ClearingViolation {
                        agent,
                        agent_id: b.agents[agent].clone(),
                        detail: format!(
                            "unselected but a contract offers positive utility {best_utility}"
                        ),
                    });
                }
            }
        }
    }
    Ok(ClearingReport {
        violations,
        tolerance: tol,
    })
}
