//! Penalty contracts, contract grids, and reserve (fallback) cost schedules.
//!
//! A contract is a commitment quantity `ell` (kWh) plus a penalty scheme that
//! maps the realized reduction to a monetary penalty. Two families are
//! supported: Fixed (a step penalty) and Cliff (a plateau, then a linear
//! ramp down to zero at the commitment).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ContractError {
    #[error("invalid contract parameter: {0}")]
    InvalidParameter(String),
    #[error("cliff constraint violated: f = {f} is below ell*(1-alpha)*beta = {min_f}")]
    CliffConstraint { f: f64, min_f: f64 },
    #[error("invalid reserve schedule: {0}")]
    InvalidReserve(String),
}

/// Penalty scheme of a contract.
///
/// * `Fixed { f }`: penalty `f` whenever the realized reduction is below the
///   commitment, 0 otherwise.
/// * `Cliff { f, alpha, beta }`: penalty `f` below `alpha * ell` (the cliff),
///   `(ell - x) * beta` on `[alpha * ell, ell)`, and 0 from `ell` upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltyScheme {
    Fixed { f: f64 },
    Cliff { f: f64, alpha: f64, beta: f64 },
}

/// A penalty contract: commitment quantity plus penalty scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contract {
    pub id: String,
    /// Commitment quantity in kWh.
    pub ell: f64,
    pub scheme: PenaltyScheme,
}

impl Contract {
    /// The null contract: zero commitment, penalty identically zero.
    pub fn null() -> Contract {
        Contract {
            id: "null".to_string(),
            ell: 0.0,
            scheme: PenaltyScheme::Fixed { f: 0.0 },
        }
    }

    pub fn is_null(&self) -> bool {
        self.ell == 0.0 && self.max_penalty() == 0.0
    }

    /// Validated Fixed contract.
    pub fn fixed(ell: f64, f: f64) -> Result<Contract, ContractError> {
        check_nonneg("ell", ell)?;
        check_nonneg("f", f)?;
        Ok(Contract {
            id: format!("fixed-{}", fmt_qty(ell)),
            ell,
            scheme: PenaltyScheme::Fixed { f },
        })
    }

    /// Penalty for a realized reduction of `x` kWh. Total on `x >= 0`:
    /// zero whenever `x >= ell`, piecewise per the scheme below it.
    pub fn penalty(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0, "realized reduction must be nonnegative");
        if x >= self.ell {
            return 0.0;
        }
        match self.scheme {
            PenaltyScheme::Fixed { f } => f,
            PenaltyScheme::Cliff { f, alpha, beta } => {
                if x < alpha * self.ell {
                    f
                } else {
                    (self.ell - x) * beta
                }
            }
        }
    }

    /// The largest penalty the contract can charge (the plateau value).
    pub fn max_penalty(&self) -> f64 {
        if self.ell <= 0.0 {
            return 0.0;
        }
        match self.scheme {
            PenaltyScheme::Fixed { f } => f,
            PenaltyScheme::Cliff { f, alpha, beta } => {
                if alpha > 0.0 {
                    f
                } else {
                    // no plateau; the ramp peaks at x = 0
                    self.ell * beta
                }
            }
        }
    }

    /// Re-checks the invariants on a contract read from external input.
    pub fn validate(&self) -> Result<(), ContractError> {
        match self.scheme {
            PenaltyScheme::Fixed { f } => {
                check_nonneg("ell", self.ell)?;
                check_nonneg("f", f)
            }
            PenaltyScheme::Cliff { f, alpha, beta } => cliff_params_ok(self.ell, f, alpha, beta),
        }
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<(), ContractError> {
    if !v.is_finite() || v < 0.0 {
        return Err(ContractError::InvalidParameter(format!(
            "{name} must be finite and nonnegative, got {v}"
        )));
    }
    Ok(())
}

fn fmt_qty(q: f64) -> String {
    if q == q.trunc() {
        format!("{}", q as i64)
    } else {
        format!("{q}")
    }
}

fn cliff_params_ok(ell: f64, f: f64, alpha: f64, beta: f64) -> Result<(), ContractError> {
    check_nonneg("ell", ell)?;
    check_nonneg("f", f)?;
    check_nonneg("beta", beta)?;
    if !alpha.is_finite() || !(0.0..1.0).contains(&alpha) {
        return Err(ContractError::InvalidParameter(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    // The plateau must dominate the ramp where they meet. Vacuous when
    // alpha = 0 (no plateau), which the linear-penalty family relies on.
    if alpha > 0.0 {
        let min_f = ell * (1.0 - alpha) * beta;
        if f < min_f - crate::MONEY_EPS {
            return Err(ContractError::CliffConstraint { f, min_f });
        }
    }
    Ok(())
}

/// Validated Cliff contract.
pub fn make_cliff(ell: f64, f: f64, alpha: f64, beta: f64) -> Result<Contract, ContractError> {
    cliff_params_ok(ell, f, alpha, beta)?;
    Ok(Contract {
        id: format!("cliff-{}", fmt_qty(ell)),
        ell,
        scheme: PenaltyScheme::Cliff { f, alpha, beta },
    })
}

/// The Cliff contract the deployed pay-per-kWh scheme induces for a
/// commitment of `ell`: plateau `ell / 2`, cliff at a third of the
/// commitment, ramp slope one half.
pub fn sce_contract_for_quantity(ell: f64) -> Contract {
    let mut c = make_cliff(ell, ell / 2.0, 1.0 / 3.0, 0.5)
        .expect("SCE parameters satisfy the cliff constraint for every ell >= 0");
    c.id = format!("sce-{}", fmt_qty(ell));
    c
}

/// The contract equivalent to a quantity bid of `b` under the deployed
/// scheme: commitment 3b/2 with the SCE penalty parameters.
pub fn sce_equivalent_of_bid(b: f64) -> Contract {
    sce_contract_for_quantity(1.5 * b)
}

/// Template used by [`contract_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractFamily {
    /// Cliff with f = ell/2, alpha = 1/3, beta = 1/2.
    Sce,
    /// Cliff with f = ell (double the SCE plateau), alpha = 1/3, beta = 1/2.
    DoublePenalty,
    /// Cliff with f = 0, alpha = 0, beta = 1: the penalty is simply the
    /// missing quantity.
    LinearPenalty,
}

/// Contracts at commitments step, 2*step, ..., max, instantiated from the
/// family template.
pub fn contract_grid(step: f64, max: f64, family: ContractFamily) -> Vec<Contract> {
    assert!(step > 0.0, "grid step must be positive");
    assert!(max >= step, "grid max must be at least one step");
    let n = (max / step + 1e-9).floor() as usize;
    (1..=n)
        .map(|k| {
            let ell = step * k as f64;
            match family {
                ContractFamily::Sce => sce_contract_for_quantity(ell),
                ContractFamily::DoublePenalty => {
                    let mut c = make_cliff(ell, ell, 1.0 / 3.0, 0.5)
                        .expect("doubled penalty satisfies the cliff constraint");
                    c.id = format!("dbl-{}", fmt_qty(ell));
                    c
                }
                ContractFamily::LinearPenalty => {
                    let mut c = make_cliff(ell, 0.0, 0.0, 1.0)
                        .expect("linear penalty satisfies the cliff constraint");
                    c.id = format!("lin-{}", fmt_qty(ell));
                    c
                }
            }
        })
        .collect()
}

/// Cost schedule of the grid's fallback option (standby generation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReserveSchedule {
    /// R(m) = slope * m.
    Linear { slope: f64 },
    /// R(0) = 0; R(m) = fixed + slope * m for m > 0 (a startup block plus
    /// running cost).
    Affine { fixed: f64, slope: f64 },
    /// Step lookup over (quantity, cost) pairs sorted by quantity; covering
    /// `m` costs the entry at the smallest quantity >= m (saturating at the
    /// last entry).
    Table { entries: Vec<(f64, f64)> },
}

impl ReserveSchedule {
    /// Cost of covering `m` kWh from the fallback option. Zero at `m = 0`
    /// for every kind.
    pub fn cost(&self, m: f64) -> f64 {
        debug_assert!(m >= 0.0);
        if m <= 0.0 {
            return 0.0;
        }
        match self {
            ReserveSchedule::Linear { slope } => slope * m,
            ReserveSchedule::Affine { fixed, slope } => fixed + slope * m,
            ReserveSchedule::Table { entries } => {
                for &(q, cost) in entries {
                    if q >= m - 1e-9 {
                        return cost;
                    }
                }
                entries.last().map(|&(_, c)| c).unwrap_or(0.0)
            }
        }
    }

    pub fn validate(&self) -> Result<(), ContractError> {
        match self {
            ReserveSchedule::Linear { slope } => check_slope(*slope),
            ReserveSchedule::Affine { fixed, slope } => {
                check_slope(*slope)?;
                if !fixed.is_finite() || *fixed < 0.0 {
                    return Err(ContractError::InvalidReserve(format!(
                        "fixed block must be finite and nonnegative, got {fixed}"
                    )));
                }
                Ok(())
            }
            ReserveSchedule::Table { entries } => {
                if entries.is_empty() {
                    return Err(ContractError::InvalidReserve(
                        "table schedule needs at least one entry".to_string(),
                    ));
                }
                for w in entries.windows(2) {
                    if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
                        return Err(ContractError::InvalidReserve(
                            "table entries must be nondecreasing in quantity and cost".to_string(),
                        ));
                    }
                }
                if entries.iter().any(|&(q, c)| q < 0.0 || c < 0.0) {
                    return Err(ContractError::InvalidReserve(
                        "table entries must be nonnegative".to_string(),
                    ));
                }
                Ok(())
            }
        }
    }
}

fn check_slope(slope: f64) -> Result<(), ContractError> {
    if !slope.is_finite() || slope < 0.0 {
        return Err(ContractError::InvalidReserve(format!(
            "slope must be finite and nonnegative, got {slope}"
        )));
    }
    Ok(())
}

/// Reserve cost R(m); see [`ReserveSchedule::cost`].
pub fn reserve_cost(r: &ReserveSchedule, m: f64) -> f64 {
    r.cost(m)
}
