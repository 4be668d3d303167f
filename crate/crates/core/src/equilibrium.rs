//! Static equilibria of both market models and the sign of each seller's
//! contemporaneous incentive to move its price or quantity.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::market::{shares_unchecked, CournotParams, MarketParams};

/// Residual tolerance on the fixed-point identity `p = c + mu / (1 - D)`.
pub const FOC_TOLERANCE: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 100_000;
const DAMPING: f64 = 0.5;
const DIRECTION_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashSolution {
    pub prices: Vec<f64>,
    /// `p_i - c_i - mu / (1 - D_i(p))` at the returned prices.
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

impl NashSolution {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

fn own_share(
    prices: &mut [f64],
    params: &MarketParams,
    i: usize,
    p: f64,
    scratch: &mut [f64],
) -> f64 {
    prices[i] = p;
    shares_unchecked(prices, params, scratch);
    scratch[i]
}

/// Residual of seller `i`'s first-order condition at `prices`.
pub fn foc_residual(prices: &[f64], params: &MarketParams, i: usize) -> f64 {
    let mut shares = vec![0.0; prices.len()];
    shares_unchecked(prices, params, &mut shares);
    prices[i] - params.c[i] - params.mu / (1.0 - shares[i])
}

/// Profit-maximizing price of seller `i` given everyone else's price in
/// `prices` (the entry at `i` is ignored). Opponent prices may be `+inf`,
/// which removes them from the market.
pub fn best_response_price(prices: &[f64], params: &MarketParams, i: usize) -> Result<f64> {
    check_index(i, params.n_sellers())?;
    if prices.len() != params.n_sellers() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} prices", params.n_sellers()),
            got: format!("{}", prices.len()),
        });
    }
    if prices
        .iter()
        .enumerate()
        .any(|(j, p)| j != i && (p.is_nan() || *p == f64::NEG_INFINITY))
    {
        return Err(Error::InvalidArgument(
            "opponent prices must not be NaN or -inf".into(),
        ));
    }

    let mut profile = prices.to_vec();
    let mut scratch = vec![0.0; prices.len()];
    let c = params.c[i];
    let mu = params.mu;

    // g(p) = p - c - mu / (1 - D_i(p)) is strictly increasing, negative at
    // p = c and non-negative at c + mu / (1 - D_i(c)).
    let mut lo = c;
    let d_lo = own_share(&mut profile, params, i, lo, &mut scratch);
    let mut hi = c + mu / (1.0 - d_lo);
    let mut iterations = 0;
    while iterations < 400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let d = own_share(&mut profile, params, i, mid, &mut scratch);
        if mid - c - mu / (1.0 - d) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let p = 0.5 * (lo + hi);
    let d = own_share(&mut profile, params, i, p, &mut scratch);
    let residual = p - c - mu / (1.0 - d);
    if residual.abs() > FOC_TOLERANCE {
        return Err(Error::SolverFailure {
            iterations,
            residual,
            last: vec![p],
        });
    }
    Ok(p)
}

/// Static Nash prices by damped simultaneous best-response iteration,
/// started from `c + mu`.
pub fn nash_prices(params: &MarketParams) -> Result<NashSolution> {
    params.validate()?;
    let n = params.n_sellers();
    let mut prices: Vec<f64> = params.c.iter().map(|c| c + params.mu).collect();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut step = 0.0f64;
        let mut next = prices.clone();
        for i in 0..n {
            let br = best_response_price(&prices, params, i)?;
            next[i] = (1.0 - DAMPING) * prices[i] + DAMPING * br;
            step = step.max((next[i] - prices[i]).abs());
        }
        prices = next;
        if step <= 4.0 * f64::EPSILON * prices.iter().fold(1.0f64, |m, p| m.max(p.abs())) {
            break;
        }
    }
    let residuals: Vec<f64> = (0..n).map(|i| foc_residual(&prices, params, i)).collect();
    let solution = NashSolution {
        prices,
        residuals,
        iterations,
    };
    if solution.max_residual() > FOC_TOLERANCE {
        return Err(Error::SolverFailure {
            iterations,
            residual: solution.max_residual(),
            last: solution.prices,
        });
    }
    Ok(solution)
}

/// `d pi_i / d p_i = D_i * (1 - (p_i - c_i)(1 - D_i) / mu)`.
pub fn price_derivative(prices: &[f64], params: &MarketParams, i: usize) -> f64 {
    let mut shares = vec![0.0; prices.len()];
    shares_unchecked(prices, params, &mut shares);
    let d = shares[i];
    d * (1.0 - (prices[i] - params.c[i]) * (1.0 - d) / params.mu)
}

/// Sign of seller `i`'s marginal profit in its own price: -1 means it
/// gains by cutting, +1 by raising, 0 when the derivative is below 1e-12.
pub fn price_incentive_direction(prices: &[f64], params: &MarketParams, i: usize) -> i8 {
    sign(price_derivative(prices, params, i))
}

fn sign(x: f64) -> i8 {
    if x.abs() < DIRECTION_EPS {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

/// Interior Cournot equilibrium. Corner solutions are rejected.
pub fn cournot_nash_quantities(params: &CournotParams) -> Result<Vec<f64>> {
    params.validate()?;
    let n = params.n_sellers() as f64;
    let total = cournot_nash_total(params);
    let q: Vec<f64> = params
        .c
        .iter()
        .map(|c| params.market_size - c - total)
        .collect();
    if let Some((i, qi)) = q.iter().enumerate().find(|(_, qi)| **qi <= 0.0) {
        return Err(Error::UnsupportedParameters(format!(
            "corner solution: seller {i} would produce {qi} (I = {n})"
        )));
    }
    Ok(q)
}

/// `(I * Q - sum c) / (I + 1)`.
pub fn cournot_nash_total(params: &CournotParams) -> f64 {
    let n = params.n_sellers() as f64;
    (n * params.market_size - params.c.iter().sum::<f64>()) / (n + 1.0)
}

/// `(Q - sum_{j != i} q_j - c_i) / 2`, floored at zero.
pub fn cournot_best_response(quantities: &[f64], params: &CournotParams, i: usize) -> f64 {
    let others: f64 = quantities
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, q)| q)
        .sum();
    ((params.market_size - others - params.c[i]) / 2.0).max(0.0)
}

/// Marginal profit of seller `i` in its own quantity:
/// `Q - sum_{j != i} q_j - c_i - 2 q_i`.
pub fn quantity_incentive_margin(quantities: &[f64], params: &CournotParams, i: usize) -> f64 {
    let others: f64 = quantities
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(_, q)| q)
        .sum();
    params.market_size - others - params.c[i] - 2.0 * quantities[i]
}

pub fn quantity_incentive_direction(quantities: &[f64], params: &CournotParams, i: usize) -> i8 {
    sign(quantity_incentive_margin(quantities, params, i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::profit;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: scan own price on a fine grid.
    fn grid_search_br(prices: &[f64], params: &MarketParams, i: usize, step: f64) -> f64 {
        let mut profile = prices.to_vec();
        let mut best = (f64::NEG_INFINITY, params.c[i]);
        let mut p = params.c[i];
        while p <= params.c[i] + 3.0 {
            profile[i] = p;
            let pi = profit(&profile, params, i).unwrap();
            if pi > best.0 {
                best = (pi, p);
            }
            p += step;
        }
        best.1
    }

    #[test]
    fn symmetric_nash_matches_reported_price() {
        let sol = nash_prices(&MarketParams::baseline()).unwrap();
        assert_abs_diff_eq!(sol.prices[0], 1.473, epsilon = 0.01);
        assert_eq!(sol.prices[0], sol.prices[1]);
        assert!(sol.max_residual() <= FOC_TOLERANCE);
    }

    #[test]
    fn heterogeneous_nash_matches_reported_prices() {
        let sol = nash_prices(&MarketParams::heterogeneous()).unwrap();
        assert_abs_diff_eq!(sol.prices[0], 1.5330, epsilon = 0.005);
        assert_abs_diff_eq!(sol.prices[1], 1.6100, epsilon = 0.005);
    }

    #[test]
    fn monopoly_best_response_against_absent_rival() {
        let params = MarketParams::baseline();
        let br = best_response_price(&[0.0, f64::INFINITY], &params, 0).unwrap();
        let oracle = grid_search_br(&[0.0, 1e6], &params, 0, 1e-5);
        assert!((br - oracle).abs() <= 1e-5, "{br} vs {oracle}");
        // fixed-point identity with a single seller in the market
        let d = 1.0 / (1.0 + (-(2.0 - br) / 0.25f64).exp());
        assert_abs_diff_eq!(br, 1.0 + 0.25 / (1.0 - d), epsilon = 1e-10);
    }

    #[test]
    fn best_response_to_nash_is_nash() {
        let params = MarketParams::baseline();
        let sol = nash_prices(&params).unwrap();
        let br = best_response_price(&sol.prices, &params, 0).unwrap();
        assert_abs_diff_eq!(br, sol.prices[0], epsilon = 1e-10);
    }

    #[test]
    fn best_response_to_collusive_price_undercuts() {
        let params = MarketParams::baseline();
        let br = best_response_price(&[0.0, 1.6886], &params, 0).unwrap();
        let oracle = grid_search_br(&[0.0, 1.6886], &params, 0, 1e-5);
        assert!(br < 1.6886);
        assert!((br - oracle).abs() <= 1e-5);
    }

    #[test]
    fn incentive_direction_around_nash() {
        let params = MarketParams::baseline();
        let p = nash_prices(&params).unwrap().prices;
        for i in 0..2 {
            assert_eq!(price_incentive_direction(&p, &params, i), 0);
        }
        let up: Vec<f64> = p.iter().map(|x| x + 0.05).collect();
        let down: Vec<f64> = p.iter().map(|x| x - 0.05).collect();
        for i in 0..2 {
            assert_eq!(price_incentive_direction(&up, &params, i), -1);
            assert_eq!(price_incentive_direction(&down, &params, i), 1);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let params = MarketParams::heterogeneous();
        let p = [1.61, 1.74];
        for i in 0..2 {
            let h = 1e-6;
            let mut a = p;
            let mut b = p;
            a[i] += h;
            b[i] -= h;
            let fd =
                (profit(&a, &params, i).unwrap() - profit(&b, &params, i).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(price_derivative(&p, &params, i), fd, epsilon = 1e-7);
        }
    }

    /// Gaussian elimination on `2 q_i + sum_{j != i} q_j = Q - c_i`.
    fn linear_solve_oracle(params: &CournotParams) -> Vec<f64> {
        let n = params.n_sellers();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut row: Vec<f64> = (0..n).map(|j| if i == j { 2.0 } else { 1.0 }).collect();
                row.push(params.market_size - params.c[i]);
                row
            })
            .collect();
        for col in 0..n {
            let pivot = m[col][col];
            for k in col..=n {
                m[col][k] /= pivot;
            }
            for r in 0..n {
                if r != col {
                    let f = m[r][col];
                    for k in col..=n {
                        m[r][k] -= f * m[col][k];
                    }
                }
            }
        }
        m.iter().map(|row| row[n]).collect()
    }

    #[test]
    fn cournot_examples() {
        let sym = CournotParams::symmetric(10.0, 1.0, 2).unwrap();
        assert_eq!(cournot_nash_quantities(&sym).unwrap(), vec![3.0, 3.0]);
        let asym = CournotParams::new(10.0, vec![1.0, 2.0], vec![0.9, 0.9]).unwrap();
        let q = cournot_nash_quantities(&asym).unwrap();
        assert_abs_diff_eq!(q[0], 10.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], 7.0 / 3.0, epsilon = 1e-12);
        let oracle = linear_solve_oracle(&asym);
        assert_abs_diff_eq!(q[0], oracle[0], epsilon = 1e-12);
        assert_abs_diff_eq!(q[1], oracle[1], epsilon = 1e-12);
        for i in 0..2 {
            assert_eq!(quantity_incentive_direction(&q, &asym, i), 0);
        }
    }

    #[test]
    fn cournot_corner_is_rejected() {
        let params = CournotParams::new(10.0, vec![1.0, 9.0], vec![0.9, 0.9]).unwrap();
        assert!(matches!(
            cournot_nash_quantities(&params),
            Err(Error::UnsupportedParameters(_))
        ));
    }

    #[test]
    fn misallocated_nash_total_has_margin_delta() {
        let params = CournotParams::symmetric(10.0, 1.0, 2).unwrap();
        for delta in [0.5, 0.25, 1.0] {
            let q = [3.0 - delta, 3.0 + delta];
            assert_abs_diff_eq!(
                quantity_incentive_margin(&q, &params, 0),
                delta,
                epsilon = 1e-12
            );
            assert_eq!(quantity_incentive_direction(&q, &params, 0), 1);
        }
    }

    #[test]
    fn quantity_direction_exhaustive_on_grid() {
        let params = CournotParams::symmetric(10.0, 1.0, 2).unwrap();
        let total_nc = cournot_nash_total(&params);
        let grid: Vec<f64> = (0..20).map(|k| 0.5 * k as f64).collect();
        for &q0 in &grid {
            for &q1 in &grid {
                let q = [q0, q1];
                let dirs: Vec<i8> = (0..2)
                    .map(|i| quantity_incentive_direction(&q, &params, i))
                    .collect();
                let total = q0 + q1;
                if total < total_nc {
                    assert!(dirs.contains(&1), "{q:?}");
                } else if total > total_nc {
                    assert!(dirs.contains(&-1), "{q:?}");
                }
            }
        }
    }

    #[test]
    fn fixed_point_identity_on_random_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(2..5);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..3.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
            let params = MarketParams::new(
                rng.random_range(-1.0..1.0),
                a,
                c,
                rng.random_range(0.1..1.0),
            )
            .unwrap();
            let sol = nash_prices(&params).unwrap();
            for i in 0..n {
                assert!(foc_residual(&sol.prices, &params, i).abs() <= 1e-8);
                assert!(sol.prices[i] > params.c[i]);
            }
        }
    }

    #[test]
    fn best_response_agrees_with_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let params = MarketParams::new(
                0.0,
                vec![rng.random_range(1.5..2.5), rng.random_range(1.5..2.5)],
                vec![rng.random_range(0.5..1.2), rng.random_range(0.5..1.2)],
                0.25,
            )
            .unwrap();
            let rival = rng.random_range(1.0..2.5);
            let br = best_response_price(&[0.0, rival], &params, 0).unwrap();
            let oracle = grid_search_br(&[0.0, rival], &params, 0, 1e-4);
            assert!((br - oracle).abs() <= 1e-4, "{br} vs {oracle}");
        }
    }

    fn baseline_nash() -> &'static [f64] {
        static NASH: std::sync::OnceLock<Vec<f64>> = std::sync::OnceLock::new();
        NASH.get_or_init(|| nash_prices(&MarketParams::baseline()).unwrap().prices)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn price_direction_above_and_below_nash(d0 in -0.4f64..0.6, d1 in -0.4f64..0.6) {
            let params = MarketParams::baseline();
            let nash = baseline_nash();
            let p = [nash[0] + d0, nash[1] + d1];
            let dirs: Vec<i8> = (0..2).map(|i| price_incentive_direction(&p, &params, i)).collect();
            if d0.max(d1) > 0.0 {
                prop_assert!(dirs.contains(&-1));
            }
            if d0.min(d1) < 0.0 {
                prop_assert!(dirs.contains(&1));
            }
        }
    }
}
