//! Agent type models: effort levels, stochastic reduction outcomes, optimal
//! investment, and the induced cost per contract.
//!
//! An agent privately knows a list of effort levels; each level has an
//! investment cost and a distribution over the reduction it produces. For a
//! given contract the agent's true cost is the minimum over levels of
//! investment plus expected penalty, and that minimum is her dominant-strategy
//! bid under VCG pricing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contracts::{Contract, PenaltyScheme};

/// Distribution of the realized reduction for one effort level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReductionDistribution {
    /// Reduce `q` with probability `p`, otherwise 0.
    Bernoulli { q: f64, p: f64 },
    /// Continuous uniform on [lo, hi].
    Uniform { lo: f64, hi: f64 },
    /// Deterministic reduction of `q`.
    Point { q: f64 },
}

impl ReductionDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            ReductionDistribution::Bernoulli { q, p } => q * p,
            ReductionDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            ReductionDistribution::Point { q } => q,
        }
    }

    /// Pr(X < x).
    pub fn cdf_below(&self, x: f64) -> f64 {
        match *self {
            ReductionDistribution::Bernoulli { q, p } => {
                let mut acc = 0.0;
                if 0.0 < x {
                    acc += 1.0 - p;
                }
                if q < x {
                    acc += p;
                }
                acc
            }
            ReductionDistribution::Uniform { lo, hi } => {
                if x <= lo {
                    0.0
                } else if x >= hi {
                    1.0
                } else {
                    (x - lo) / (hi - lo)
                }
            }
            ReductionDistribution::Point { q } => {
                if q < x {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ReductionDistribution::Bernoulli { q, p } => {
                if rng.gen_bool(p) {
                    q
                } else {
                    0.0
                }
            }
            ReductionDistribution::Uniform { lo, hi } => {
                if hi <= lo {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
            ReductionDistribution::Point { q } => q,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            ReductionDistribution::Bernoulli { q, p } => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("bernoulli p must lie in [0,1], got {p}"));
                }
                if !q.is_finite() || q < 0.0 {
                    return Err(format!("bernoulli q must be nonnegative, got {q}"));
                }
                Ok(())
            }
            ReductionDistribution::Uniform { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || hi < lo {
                    return Err(format!("uniform needs 0 <= lo <= hi, got [{lo}, {hi}]"));
                }
                Ok(())
            }
            ReductionDistribution::Point { q } => {
                if !q.is_finite() || q < 0.0 {
                    return Err(format!("point q must be nonnegative, got {q}"));
                }
                Ok(())
            }
        }
    }
}

/// One effort option: an investment cost and the reduction it buys.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffortLevel {
    pub cost: f64,
    pub outcome: ReductionDistribution,
}

impl EffortLevel {
    /// The no-op level: invest nothing, reduce nothing.
    pub fn null() -> EffortLevel {
        EffortLevel {
            cost: 0.0,
            outcome: ReductionDistribution::Point { q: 0.0 },
        }
    }

    pub fn is_null(&self) -> bool {
        self.cost == 0.0 && self.outcome == (ReductionDistribution::Point { q: 0.0 })
    }
}

/// An agent's private type: her effort levels. The null level (do nothing)
/// is always present, so accepting a contract and absorbing the penalty is
/// always an option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "AgentModelRepr")]
pub struct AgentModel {
    pub id: String,
    pub levels: Vec<EffortLevel>,
}

#[derive(Deserialize)]
struct AgentModelRepr {
    id: String,
    levels: Vec<EffortLevel>,
}

impl From<AgentModelRepr> for AgentModel {
    fn from(raw: AgentModelRepr) -> Self {
        AgentModel::new(raw.id, raw.levels)
    }
}

impl AgentModel {
    /// Builds an agent, inserting the null level in front unless one of the
    /// given levels already is the null level (keeps indices stable across
    /// serialization round trips).
    pub fn new(id: impl Into<String>, levels: Vec<EffortLevel>) -> AgentModel {
        let mut levels = levels;
        if !levels.iter().any(EffortLevel::is_null) {
            levels.insert(0, EffortLevel::null());
        }
        AgentModel {
            id: id.into(),
            levels,
        }
    }

    /// The cheapest way for this agent to hold contract `c`: minimizes
    /// investment + expected penalty over all levels. Ties go to the level
    /// with the lower investment cost, then the lower index.
    pub fn optimal_plan(&self, c: &Contract) -> CostPlan {
        let mut best: Option<CostPlan> = None;
        for (idx, level) in self.levels.iter().enumerate() {
            let ef = expected_penalty(level, c);
            let total = level.cost + ef;
            let better = match &best {
                None => true,
                Some(b) => {
                    total < b.total_cost || (total == b.total_cost && level.cost < b.investment)
                }
            };
            if better {
                best = Some(CostPlan {
                    level: idx,
                    investment: level.cost,
                    expected_penalty: ef,
                    total_cost: total,
                });
            }
        }
        best.expect("an agent always has at least the null level")
    }

    /// Truthful bid row: the agent's true cost on each contract.
    pub fn true_bids(&self, contracts: &[Contract]) -> Vec<f64> {
        contracts
            .iter()
            .map(|c| self.optimal_plan(c).total_cost)
            .collect()
    }
}

/// The plan backing a bid: which level, what it costs, and the expected
/// penalty it leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPlan {
    /// Index into the agent's level list.
    pub level: usize,
    pub investment: f64,
    pub expected_penalty: f64,
    pub total_cost: f64,
}

/// Expected penalty of holding contract `c` at the given effort level.
/// Closed form: weighted atoms for Bernoulli/Point, exact piecewise-linear
/// integration for Uniform.
pub fn expected_penalty(level: &EffortLevel, c: &Contract) -> f64 {
    expected_penalty_of(&level.outcome, c)
}

pub(crate) fn expected_penalty_of(d: &ReductionDistribution, c: &Contract) -> f64 {
    match *d {
        ReductionDistribution::Point { q } => c.penalty(q),
        ReductionDistribution::Bernoulli { q, p } => p * c.penalty(q) + (1.0 - p) * c.penalty(0.0),
        ReductionDistribution::Uniform { lo, hi } => {
            if hi <= lo {
                return c.penalty(lo);
            }
            let density = 1.0 / (hi - lo);
            match c.scheme {
                PenaltyScheme::Fixed { f } => f * overlap(lo, hi, 0.0, c.ell) * density,
                PenaltyScheme::Cliff { f, alpha, beta } => {
                    let plateau = f * overlap(lo, hi, 0.0, alpha * c.ell) * density;
                    // integral of (ell - x) * beta over the ramp overlap
                    let u = lo.max(alpha * c.ell);
                    let v = hi.min(c.ell);
                    let ramp = if v > u {
                        beta * 0.5 * ((c.ell - u) + (c.ell - v)) * (v - u) * density
                    } else {
                        0.0
                    };
                    plateau + ramp
                }
            }
        }
    }
}

fn overlap(lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    (hi.min(b) - lo.max(a)).max(0.0)
}

/// One draw of the realized reduction at the given level.
pub fn sample_reduction<R: Rng + ?Sized>(level: &EffortLevel, rng: &mut R) -> f64 {
    level.outcome.sample(rng)
}
