//! Success probabilities of selected contract sets, exact (by discrete
//! convolution) and Monte Carlo, plus the analytic failure bounds that tie
//! reliability to the optimal sum of bids.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::agents::ReductionDistribution;

#[derive(Debug, Error, PartialEq)]
pub enum ReliabilityError {
    #[error("atom at {value} is not representable on a {resolution} kWh grid")]
    Resolution { value: f64, resolution: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo { samples: usize, half_width_95: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityResult {
    pub probability: f64,
    #[serde(flatten)]
    pub method: Method,
}

/// Quantizes a distribution onto a value grid `i * resolution`. Atoms must
/// land on grid points exactly; a uniform spreads each cell the mass of the
/// half-open interval centered on its grid value, which keeps the mean and
/// is exact at half-cell thresholds.
fn quantize(d: &ReductionDistribution, resolution: f64) -> Result<Vec<f64>, ReliabilityError> {
    let to_index = |v: f64| -> Result<usize, ReliabilityError> {
        let idx = v / resolution;
        let r = idx.round();
        if (idx - r).abs() > 1e-9 || r < 0.0 {
            return Err(ReliabilityError::Resolution {
                value: v,
                resolution,
            });
        }
        Ok(r as usize)
    };
    match *d {
        ReductionDistribution::Point { q } => {
            let i = to_index(q)?;
            let mut pmf = vec![0.0; i + 1];
            pmf[i] = 1.0;
            Ok(pmf)
        }
        ReductionDistribution::Bernoulli { q, p } => {
            let i = to_index(q)?;
            let mut pmf = vec![0.0; i + 1];
            pmf[0] += 1.0 - p;
            pmf[i] += p;
            Ok(pmf)
        }
        ReductionDistribution::Uniform { lo, hi } => {
            if hi <= lo {
                return quantize(&ReductionDistribution::Point { q: lo }, resolution);
            }
            let width = hi - lo;
            let first = (lo / resolution - 0.5).ceil().max(0.0) as usize;
            let last = (hi / resolution + 0.5).floor() as usize;
            let mut pmf = vec![0.0; last + 1];
            for (i, cell) in pmf.iter_mut().enumerate().skip(first) {
                let cell_lo = (i as f64 - 0.5) * resolution;
                let cell_hi = (i as f64 + 0.5) * resolution;
                let mass = (cell_hi.min(hi) - cell_lo.max(lo)).max(0.0) / width;
                *cell = mass;
            }
            Ok(pmf)
        }
    }
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Exact probability that the selected agents' total reduction, plus the
/// deterministic reserve quantity, reaches `m`. Distributions are quantized
/// at `resolution` (exact for atoms on the grid, second-order accurate for
/// uniforms) and convolved.
pub fn success_prob_exact(
    selected: &[ReductionDistribution],
    reserve_quantity: f64,
    m: f64,
    resolution: f64,
) -> Result<ReliabilityResult, ReliabilityError> {
    if resolution <= 0.0 || !resolution.is_finite() {
        return Err(ReliabilityError::InvalidInput(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let mut pmf = vec![1.0];
    for d in selected {
        let q = quantize(d, resolution)?;
        pmf = convolve(&pmf, &q);
    }
    let threshold = m - reserve_quantity;
    let probability: f64 = pmf
        .iter()
        .enumerate()
        .filter(|(i, _)| *i as f64 * resolution >= threshold - 1e-9)
        .map(|(_, &p)| p)
        .sum();
    Ok(ReliabilityResult {
        probability: probability.min(1.0),
        method: Method::Exact,
    })
}

/// Monte Carlo estimate of the same probability from `samples` independent
/// joint draws, with a binomial 95% half-width. Deterministic per seed.
pub fn success_prob_mc(
    selected: &[ReductionDistribution],
    reserve_quantity: f64,
    m: f64,
    samples: usize,
    seed: u64,
) -> Result<ReliabilityResult, ReliabilityError> {
    if samples == 0 {
        return Err(ReliabilityError::InvalidInput(
            "need at least one sample".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    for _ in 0..samples {
        let total: f64 = selected.iter().map(|d| d.sample(&mut rng)).sum();
        if total + reserve_quantity >= m - 1e-9 {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    let half_width = 1.96 * (p * (1.0 - p) / samples as f64).sqrt();
    Ok(ReliabilityResult {
        probability: p,
        method: Method::MonteCarlo {
            samples,
            half_width_95: half_width,
        },
    })
}

/// Failure bound for shared-penalty Fixed contract sets: the probability of
/// missing the target is at most the optimal sum of bids over the penalty.
pub fn failure_bound_fixed(sb_star: f64, f: f64) -> f64 {
    assert!(f > 0.0, "the shared penalty must be positive");
    (sb_star / f).min(1.0)
}

/// Failure bound for shared-(f, alpha) Cliff contract sets: reducing less
/// than `alpha * m` has probability at most `sb / f`. Returns the guarded
/// threshold and the bound.
pub fn failure_bound_cliff(sb: f64, f: f64, alpha: f64, m: f64) -> (f64, f64) {
    assert!(f > 0.0, "the shared plateau must be positive");
    (alpha * m, (sb / f).min(1.0))
}

/// For unit Fixed contracts with shared penalty `f`: the expected shortfall
/// below the procurement target is at most `sb_star / f`.
pub fn expected_shortfall_bound(sb_star: f64, f: f64, _m_prime: f64) -> f64 {
    assert!(f > 0.0, "the shared penalty must be positive");
    sb_star / f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unif(lo: f64, hi: f64) -> ReductionDistribution {
        ReductionDistribution::Uniform { lo, hi }
    }

    fn bern(q: f64, p: f64) -> ReductionDistribution {
        ReductionDistribution::Bernoulli { q, p }
    }

    fn worked_pair() -> Vec<ReductionDistribution> {
        vec![unif(100.0, 200.0), unif(50.0, 250.0)]
    }

    #[test]
    fn exact_worked_pair_thresholds() {
        // analytic: Pr(sum < t) = (t - 150)^2 / 40000 for t in [150, 250]
        let sel = worked_pair();
        let p = success_prob_exact(&sel, 0.0, 200.0, 1.0)
            .unwrap()
            .probability;
        assert!((p - 0.9375).abs() <= 0.005, "got {p}");
        let p = success_prob_exact(&sel, 0.0, 250.0, 1.0)
            .unwrap()
            .probability;
        assert!((p - 0.75).abs() <= 0.005, "got {p}");
        let p = success_prob_exact(&sel, 0.0, 300.0, 1.0)
            .unwrap()
            .probability;
        assert!((p - 0.5).abs() <= 0.005, "got {p}");
        // with 100 kWh of reserve the 400 threshold shifts to 300
        let p = success_prob_exact(&sel, 100.0, 400.0, 1.0)
            .unwrap()
            .probability;
        assert!((p - 0.5).abs() <= 0.005, "got {p}");
    }

    #[test]
    fn exact_trivial_cases() {
        let r = success_prob_exact(&[], 0.0, 0.0, 1.0).unwrap();
        assert_eq!(r.probability, 1.0);
        let r = success_prob_exact(&[], 0.0, 10.0, 1.0).unwrap();
        assert_eq!(r.probability, 0.0);
        let r = success_prob_exact(&[bern(100.0, 1.0), bern(100.0, 0.9)], 0.0, 200.0, 1.0).unwrap();
        assert!((r.probability - 0.9).abs() <= 1e-12);
    }

    #[test]
    fn exact_rejects_off_grid_atoms() {
        let err = success_prob_exact(&[bern(100.5, 0.9)], 0.0, 50.0, 1.0).unwrap_err();
        assert!(matches!(err, ReliabilityError::Resolution { .. }));
        // finer grid accepts it
        assert!(success_prob_exact(&[bern(100.5, 0.9)], 0.0, 50.0, 0.5).is_ok());
    }

    #[test]
    fn mc_agrees_with_exact() {
        let sel = worked_pair();
        let exact = success_prob_exact(&sel, 0.0, 200.0, 1.0)
            .unwrap()
            .probability;
        let mc = success_prob_mc(&sel, 0.0, 200.0, 20_000, 42).unwrap();
        let hw = match mc.method {
            Method::MonteCarlo { half_width_95, .. } => half_width_95,
            _ => unreachable!(),
        };
        assert!((mc.probability - exact).abs() <= 4.0 * hw);

        let degenerate = vec![ReductionDistribution::Point { q: 50.0 }];
        let r = success_prob_mc(&degenerate, 0.0, 50.0, 100, 1).unwrap();
        assert_eq!(r.probability, 1.0);
        let r = success_prob_mc(&degenerate, 0.0, 51.0, 100, 1).unwrap();
        assert_eq!(r.probability, 0.0);

        let two = vec![bern(100.0, 0.9), bern(100.0, 0.7)];
        let r = success_prob_mc(&two, 0.0, 200.0, 50_000, 7).unwrap();
        assert!((r.probability - 0.63).abs() <= 0.01);
    }

    #[test]
    fn mc_agrees_with_exact_on_random_instances() {
        use rand::{Rng, SeedableRng};
        // atom distributions only, so the convolution side is truly exact
        // at any threshold; the uniform case is covered at its closed-form
        // thresholds above
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for i in 0..12 {
            let n = rng.gen_range(1..=4);
            let dists: Vec<ReductionDistribution> = (0..n)
                .map(|_| {
                    if rng.gen_bool(0.7) {
                        bern(rng.gen_range(1..=40) as f64, rng.gen_range(0.0..1.0))
                    } else {
                        ReductionDistribution::Point {
                            q: rng.gen_range(0..=40) as f64,
                        }
                    }
                })
                .collect();
            let m = rng.gen_range(0.0..80.0) + 0.5; // off-atom threshold
            let reserve = rng.gen_range(0.0..10.0);
            let exact = success_prob_exact(&dists, reserve, m, 1.0)
                .unwrap()
                .probability;
            let mc = success_prob_mc(&dists, reserve, m, 20_000, 100 + i).unwrap();
            let hw = match mc.method {
                Method::MonteCarlo { half_width_95, .. } => half_width_95.max(2e-3),
                _ => unreachable!(),
            };
            assert!(
                (mc.probability - exact).abs() <= 4.0 * hw,
                "instance {i}: exact {exact} vs mc {}",
                mc.probability
            );
        }
    }

    #[test]
    fn mc_deterministic_per_seed() {
        let sel = worked_pair();
        let a = success_prob_mc(&sel, 0.0, 200.0, 5000, 9).unwrap();
        let b = success_prob_mc(&sel, 0.0, 200.0, 5000, 9).unwrap();
        assert_eq!(a.probability, b.probability);
    }

    #[test]
    fn fixed_bound_values() {
        assert!((failure_bound_fixed(5.0, 50.0) - 0.1).abs() <= 1e-12);
        assert_eq!(failure_bound_fixed(0.0, 50.0), 0.0);
        assert_eq!(failure_bound_fixed(60.0, 50.0), 1.0);
    }

    #[test]
    fn cliff_bound_values() {
        let (threshold, bound) = failure_bound_cliff(37.5, 75.0, 1.0 / 3.0, 150.0);
        assert!((threshold - 50.0).abs() <= 1e-12);
        assert!((bound - 0.5).abs() <= 1e-12);
        let (_, bound) = failure_bound_cliff(0.0, 75.0, 1.0 / 3.0, 150.0);
        assert_eq!(bound, 0.0);
    }

    #[test]
    fn shortfall_bound_values() {
        assert_eq!(expected_shortfall_bound(0.0, 5.0, 10.0), 0.0);
        let b1 = expected_shortfall_bound(3.0, 10.0, 10.0);
        let b2 = expected_shortfall_bound(3.0, 100.0, 10.0);
        assert!(b2 < b1);
    }

    #[test]
    fn monotonicity_in_threshold_and_reserve() {
        let sel = worked_pair();
        let mut prev = 1.0;
        for m in [0.0, 100.0, 175.0, 225.0, 300.0, 450.0, 500.0] {
            let p = success_prob_exact(&sel, 0.0, m, 1.0).unwrap().probability;
            assert!(p <= prev + 1e-12);
            prev = p;
        }
        let mut prev = 0.0;
        for reserve in [0.0, 25.0, 60.0, 120.0] {
            let p = success_prob_exact(&sel, reserve, 300.0, 1.0)
                .unwrap()
                .probability;
            assert!(p >= prev - 1e-12);
            prev = p;
        }
    }

    #[test]
    fn quantized_uniform_keeps_mass_and_mean() {
        let pmf = quantize(&unif(100.0, 200.0), 1.0).unwrap();
        let mass: f64 = pmf.iter().sum();
        assert!((mass - 1.0).abs() <= 1e-12);
        let mean: f64 = pmf.iter().enumerate().map(|(i, &p)| i as f64 * p).sum();
        assert!((mean - 150.0).abs() <= 1e-9);
    }
}
