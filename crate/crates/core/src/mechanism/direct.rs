use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{cournot_price, CournotParams};

/// The buyer's standing offer to a protected seller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurchaseOffer {
    pub quantity: f64,
    pub price: f64,
}

/// Direct-market rule: a first increase is measured against the quantities
/// at the activation period `tau`, the second against each seller's own
/// previous quantity. First increasers outside the punishing set are offered
/// their `tau1` quantity at the `tau1` market price from `tau2` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectMarketState {
    activation_period: usize,
    n_sellers: usize,
    last_period: Option<usize>,
    baseline: Option<Vec<f64>>,
    prev: Vec<f64>,
    tau1: Option<usize>,
    tau2: Option<usize>,
    first_increasers: Vec<bool>,
    locks: Vec<Option<PurchaseOffer>>,
    punishers: Vec<bool>,
}

impl DirectMarketState {
    pub fn new(activation_period: usize, n_sellers: usize) -> Result<Self> {
        if activation_period < 1 {
            return Err(Error::InvalidArgument(
                "activation period must be at least 1".into(),
            ));
        }
        Ok(Self {
            activation_period,
            n_sellers,
            last_period: None,
            baseline: None,
            prev: vec![0.0; n_sellers],
            tau1: None,
            tau2: None,
            first_increasers: vec![false; n_sellers],
            locks: vec![None; n_sellers],
            punishers: vec![false; n_sellers],
        })
    }

    pub fn reset(&mut self) {
        *self =
            Self::new(self.activation_period, self.n_sellers).expect("validated at construction");
    }

    pub fn tau1(&self) -> Option<usize> {
        self.tau1
    }
    pub fn tau2(&self) -> Option<usize> {
        self.tau2
    }
    pub fn is_first_increaser(&self, seller: usize) -> bool {
        self.first_increasers[seller]
    }
    pub fn is_punisher(&self, seller: usize) -> bool {
        self.punishers[seller]
    }

    pub fn observe_quantities(
        &mut self,
        quantities: &[f64],
        params: &CournotParams,
        period: usize,
    ) -> Result<()> {
        if quantities.len() != self.n_sellers {
            return Err(Error::DimensionMismatch {
                expected: format!("{} quantities", self.n_sellers),
                got: format!("{}", quantities.len()),
            });
        }
        if let Some(last) = self.last_period {
            if period != last + 1 {
                return Err(Error::Protocol(format!(
                    "period {period} observed after period {last}"
                )));
            }
        }
        let tau = self.activation_period;
        if period == tau {
            self.baseline = Some(quantities.to_vec());
        } else if period > tau {
            let baseline = self.baseline.as_ref().ok_or_else(|| {
                Error::Protocol(format!(
                    "period {period} observed without the activation period {tau}"
                ))
            })?;
            if self.tau1.is_none() {
                let price = cournot_price(quantities, params);
                for i in 0..self.n_sellers {
                    if quantities[i] > baseline[i] {
                        self.first_increasers[i] = true;
                        self.locks[i] = Some(PurchaseOffer {
                            quantity: quantities[i],
                            price,
                        });
                        self.tau1 = Some(period);
                    }
                }
            } else if self.tau2.is_none() {
                for i in 0..self.n_sellers {
                    if quantities[i] > self.prev[i] {
                        self.punishers[i] = true;
                        self.tau2 = Some(period);
                    }
                }
            }
        }
        self.prev.copy_from_slice(quantities);
        self.last_period = Some(period);
        Ok(())
    }

    /// The purchase offer standing for `seller` in `period`, if any.
    pub fn direct_market_guarantee(&self, seller: usize, period: usize) -> Option<PurchaseOffer> {
        let tau2 = self.tau2?;
        if period < tau2
            || !self.first_increasers.get(seller).copied().unwrap_or(false)
            || self.punishers[seller]
        {
            return None;
        }
        self.locks[seller]
    }
}
