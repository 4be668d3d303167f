//! Demand, quantity and profit for the three market models: a monopoly
//! platform with logit demand, several platforms sharing one logit choice
//! set, and a direct market with linear (Cournot) inverse demand.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};

/// Demand and cost primitives of the logit market.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    /// Outside-option utility.
    pub a0: f64,
    /// Per-seller product quality.
    pub a: Vec<f64>,
    /// Per-seller constant marginal cost.
    pub c: Vec<f64>,
    /// Logit scale.
    pub mu: f64,
    /// Use `exp(a0 / mu)` for the outside good instead of `exp(a0)`.
    #[serde(default)]
    pub outside_scaled_by_mu: bool,
}

impl MarketParams {
    pub fn new(a0: f64, a: Vec<f64>, c: Vec<f64>, mu: f64) -> Result<Self> {
        let params = Self {
            a0,
            a,
            c,
            mu,
            outside_scaled_by_mu: false,
        };
        params.validate()?;
        Ok(params)
    }

    /// Two symmetric sellers: a0 = 0, a = 2, c = 1, mu = 0.25.
    pub fn baseline() -> Self {
        Self::new(0.0, vec![2.0, 2.0], vec![1.0, 1.0], 0.25).expect("valid baseline")
    }

    /// Baseline with the second seller's cost raised to 1.2.
    pub fn heterogeneous() -> Self {
        Self::new(0.0, vec![2.0, 2.0], vec![1.0, 1.2], 0.25).expect("valid params")
    }

    pub fn n_sellers(&self) -> usize {
        self.a.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 sellers, got {n}"
            )));
        }
        if self.c.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} costs"),
                got: format!("{}", self.c.len()),
            });
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mu must be positive, got {}",
                self.mu
            )));
        }
        if !self.a0.is_finite() || self.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite utility parameter".into(),
            ));
        }
        if self.c.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidArgument(
                "costs must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Exponent of the outside option in the logit denominator.
    pub(crate) fn outside_exponent(&self) -> f64 {
        if self.outside_scaled_by_mu {
            self.a0 / self.mu
        } else {
            self.a0
        }
    }
}

impl Default for MarketParams {
    fn default() -> Self {
        Self::baseline()
    }
}

/// Equally spaced, strictly ascending price points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    points: Vec<f64>,
}

impl PriceGrid {
    pub fn new(m: usize, p_min: f64, p_max: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 2 points, got {m}"
            )));
        }
        if !(p_min.is_finite() && p_max.is_finite() && p_max > p_min) {
            return Err(Error::InvalidArgument(format!(
                "bad grid bounds [{p_min}, {p_max}]"
            )));
        }
        let step = (p_max - p_min) / (m - 1) as f64;
        let mut points: Vec<f64> = (0..m).map(|k| p_min + step * k as f64).collect();
        points[m - 1] = p_max;
        Ok(Self { points })
    }

    /// 15 points between 1 and 2.1.
    pub fn baseline() -> Self {
        Self::new(15, 1.0, 2.1).expect("valid grid")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn p_min(&self) -> f64 {
        self.points[0]
    }

    pub fn p_max(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn price(&self, index: usize) -> f64 {
        self.points[index]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Exact inverse of [`PriceGrid::price`].
    pub fn index_of(&self, price: f64) -> Option<usize> {
        self.points.iter().position(|&p| p == price)
    }

    pub fn nearest_index(&self, price: f64) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (k, &p) in self.points.iter().enumerate() {
            let d = (p - price).abs();
            if d < best_dist {
                best = k;
                best_dist = d;
            }
        }
        best
    }
}

impl Default for PriceGrid {
    fn default() -> Self {
        Self::baseline()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandResult {
    pub shares: Vec<f64>,
    pub outside_share: f64,
}

/// Shares with overflow-safe exponentials. Opponent prices of `+inf` are
/// allowed and simply drop out of the choice set.
pub(crate) fn shares_unchecked(prices: &[f64], params: &MarketParams, out: &mut [f64]) -> f64 {
    let outside = params.outside_exponent();
    let mut max = outside;
    for (i, &p) in prices.iter().enumerate() {
        let x = (params.a[i] - p) / params.mu;
        out[i] = x;
        if x > max {
            max = x;
        }
    }
    let outside_w = (outside - max).exp();
    let mut total = outside_w;
    for x in out.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in out.iter_mut() {
        *x /= total;
    }
    outside_w / total
}

fn check_prices(prices: &[f64], params: &MarketParams) -> Result<()> {
    if prices.len() != params.n_sellers() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} prices", params.n_sellers()),
            got: format!("{}", prices.len()),
        });
    }
    if prices.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument("prices must be finite".into()));
    }
    Ok(())
}

pub fn logit_demand(prices: &[f64], params: &MarketParams) -> Result<DemandResult> {
    check_prices(prices, params)?;
    let mut shares = vec![0.0; prices.len()];
    let outside_share = shares_unchecked(prices, params, &mut shares);
    Ok(DemandResult {
        shares,
        outside_share,
    })
}

/// `(p_i - c_i) * D_i(p)`.
pub fn profit(prices: &[f64], params: &MarketParams, i: usize) -> Result<f64> {
    check_index(i, params.n_sellers())?;
    let demand = logit_demand(prices, params)?;
    Ok((prices[i] - params.c[i]) * demand.shares[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPlatformDemand {
    /// `shares[i][j]`: seller `i` on platform `j`.
    pub shares: Vec<Vec<f64>>,
    pub outside_share: f64,
}

impl MultiPlatformDemand {
    /// Total demand of seller `i` across platforms.
    pub fn seller_total(&self, i: usize) -> f64 {
        self.shares[i].iter().sum()
    }
}

/// Logit demand when every (seller, platform) pair is a separate
/// alternative in one choice set. `prices[i][j]` is seller `i` on platform `j`.
pub fn multiplatform_demand(
    prices: &[Vec<f64>],
    params: &MarketParams,
) -> Result<MultiPlatformDemand> {
    let n = params.n_sellers();
    if prices.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} seller rows"),
            got: format!("{}", prices.len()),
        });
    }
    let n_platforms = prices[0].len();
    if n_platforms == 0 || prices.iter().any(|row| row.len() != n_platforms) {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} x {n_platforms} price matrix with at least one platform"),
            got: prices
                .iter()
                .map(|r| r.len().to_string())
                .collect::<Vec<_>>()
                .join(","),
        });
    }
    if prices.iter().flatten().any(|p| !p.is_finite()) {
        return Err(Error::InvalidArgument("prices must be finite".into()));
    }

    let outside = params.outside_exponent();
    let mut max = outside;
    let mut shares: Vec<Vec<f64>> = prices
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&p| {
                    let x = (params.a[i] - p) / params.mu;
                    max = max.max(x);
                    x
                })
                .collect()
        })
        .collect();
    let outside_w = (outside - max).exp();
    let mut total = outside_w;
    for x in shares.iter_mut().flatten() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in shares.iter_mut().flatten() {
        *x /= total;
    }
    Ok(MultiPlatformDemand {
        shares,
        outside_share: outside_w / total,
    })
}

/// Direct-market primitives: the buyer's (normalized) inverse demand is
/// `p = Q - q` for total quantity `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CournotParams {
    #[serde(rename = "Q")]
    pub market_size: f64,
    pub c: Vec<f64>,
    /// Per-seller discount factors.
    pub beta: Vec<f64>,
}

impl CournotParams {
    pub fn new(market_size: f64, c: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let params = Self {
            market_size,
            c,
            beta,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn symmetric(market_size: f64, cost: f64, n: usize) -> Result<Self> {
        Self::new(market_size, vec![cost; n], vec![0.95; n])
    }

    pub fn n_sellers(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 sellers, got {n}"
            )));
        }
        if self.beta.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} discount factors"),
                got: format!("{}", self.beta.len()),
            });
        }
        if self.beta.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::InvalidArgument(
                "discount factors must lie in [0, 1)".into(),
            ));
        }
        let max_c = self.c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(self.market_size > max_c) || !self.market_size.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "market size {} must exceed every cost (max {max_c})",
                self.market_size
            )));
        }
        Ok(())
    }
}

/// `Q - sum(q)`; may be negative.
pub fn cournot_price(quantities: &[f64], params: &CournotParams) -> f64 {
    params.market_size - quantities.iter().sum::<f64>()
}

pub fn cournot_profit(quantities: &[f64], params: &CournotParams, i: usize) -> Result<f64> {
    check_index(i, params.n_sellers())?;
    if quantities.len() != params.n_sellers() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} quantities", params.n_sellers()),
            got: format!("{}", quantities.len()),
        });
    }
    Ok((cournot_price(quantities, params) - params.c[i]) * quantities[i])
}
