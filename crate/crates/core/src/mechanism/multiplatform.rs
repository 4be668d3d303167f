use serde::{Deserialize, Serialize};

use super::{band, MechanismConfig, MechanismState, Variant};
use crate::error::{Error, Result};

/// The rule run jointly by several platforms. Each platform keeps its own
/// baseline, first droppers and locks; a cut on any platform counts as the
/// second drop everywhere, and the pricing band spans all platforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiPlatformMechanism {
    platforms: Vec<MechanismState>,
    n_sellers: usize,
    prev: Option<Vec<Vec<f64>>>,
}

impl MultiPlatformMechanism {
    pub fn new(activation_period: usize, n_sellers: usize, n_platforms: usize) -> Result<Self> {
        if n_platforms == 0 {
            return Err(Error::InvalidArgument("need at least one platform".into()));
        }
        let config = MechanismConfig {
            variant: Variant::MultiPlatform,
            activation_period,
            cost_estimate: None,
        };
        let platforms = (0..n_platforms)
            .map(|_| MechanismState::new(config.clone(), n_sellers))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            platforms,
            n_sellers,
            prev: None,
        })
    }

    pub fn n_platforms(&self) -> usize {
        self.platforms.len()
    }

    pub fn platform(&self, j: usize) -> &MechanismState {
        &self.platforms[j]
    }

    fn check(&self, m: &[Vec<f64>], what: &str) -> Result<()> {
        let j = self.platforms.len();
        if m.len() != self.n_sellers || m.iter().any(|row| row.len() != j) {
            return Err(Error::DimensionMismatch {
                expected: format!("{} x {j} {what}", self.n_sellers),
                got: format!("{} rows", m.len()),
            });
        }
        Ok(())
    }

    /// `prices[i][j]` and `quantities[i][j]` for seller `i` on platform `j`.
    /// Returns per-unit top-ups as `[platform][seller]`.
    pub fn observe_period_multiplatform(
        &mut self,
        prices: &[Vec<f64>],
        quantities: &[Vec<f64>],
        period: usize,
    ) -> Result<Vec<Vec<f64>>> {
        self.check(prices, "prices")?;
        self.check(quantities, "quantities")?;
        let droppers: Vec<bool> = (0..self.n_sellers)
            .map(|i| match &self.prev {
                Some(prev) => prices[i].iter().zip(&prev[i]).any(|(p, q)| p < q),
                None => false,
            })
            .collect();
        let zero_profits = vec![0.0; self.n_sellers];
        let mut topups = Vec::with_capacity(self.platforms.len());
        for (j, state) in self.platforms.iter_mut().enumerate() {
            let col_p: Vec<f64> = prices.iter().map(|row| row[j]).collect();
            let col_q: Vec<f64> = quantities.iter().map(|row| row[j]).collect();
            let band = match (&self.prev, state.phase()) {
                (Some(prev), super::Phase::SecondDropped) => {
                    let per_platform: Vec<Vec<f64>> = (0..prev[0].len())
                        .map(|k| prev.iter().map(|row| row[k]).collect())
                        .collect();
                    Some(band(&state.punishers, per_platform.iter().map(|v| &v[..])))
                }
                _ => None,
            };
            state.advance(&col_p, &col_q, &zero_profits, period, &droppers, band)?;
            topups.push(state.last_topups().to_vec());
        }
        self.prev = Some(prices.to_vec());
        Ok(topups)
    }
}
