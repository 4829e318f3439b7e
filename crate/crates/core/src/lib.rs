//! Demand-response auction engine.
//!
//! Implements a reverse auction in which a power utility procures consumption
//! reductions from consumers under penalty contracts. Contract sets are chosen
//! by a covering-knapsack dynamic program that minimizes the sum of bids, and
//! winners are paid Clarke-pivot (VCG) rewards, which makes truthful cost
//! reporting a dominant strategy. The crate also models the deployed
//! pay-per-kWh baseline (DR-SCE), exact and Monte Carlo reliability
//! estimation, and a deterministic simulation harness with CSV output.

pub mod agents;
pub mod allocation;
pub mod cli;
pub mod contracts;
pub mod mechanisms;
pub mod reliability;
pub mod simulate;

/// Tolerance for money comparisons. Reference values in the test suites are
/// dyadic rationals, so double precision carries them exactly; 1e-9 absorbs
/// associativity differences between independent computation paths.
pub const MONEY_EPS: f64 = 1e-9;
