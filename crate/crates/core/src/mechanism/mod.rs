//! The two-stage price drop rule as a deterministic state machine.
//!
//! The rule is announced at the activation period `tau`. Prices at `tau + 1`
//! form the baseline. A seller cutting below its baseline price at some
//! `tau1 > tau + 1` is a first dropper; if any seller then cuts below its own
//! previous price at `tau2 > tau1`, every first dropper that did not join the
//! second cut and keeps to the rule's pricing conditions receives a per-unit
//! top-up from period `tau2` on.

mod direct;
mod multiplatform;

pub use direct::{DirectMarketState, PurchaseOffer};
pub use multiplatform::MultiPlatformMechanism;

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Revenue matching, band pricing and a quantity cap.
    PlatformFull,
    /// Profit matching against a cost estimate; the first dropper must hold
    /// its drop price from `tau1` on.
    SimplifiedAi,
    /// Per-platform revenue matching; the second cut may happen on any platform.
    MultiPlatform,
    /// Quantity game: the buyer offers to purchase the first increaser's output.
    DirectMarket,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::PlatformFull => "platform-full",
            Variant::SimplifiedAi => "simplified-ai",
            Variant::MultiPlatform => "multi-platform",
            Variant::DirectMarket => "direct-market",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "platform-full" | "platform" | "full" => Ok(Variant::PlatformFull),
            "simplified-ai" | "simplified" | "ai" => Ok(Variant::SimplifiedAi),
            "multi-platform" | "multiplatform" => Ok(Variant::MultiPlatform),
            "direct-market" | "direct" => Ok(Variant::DirectMarket),
            other => Err(Error::InvalidArgument(format!(
                "unknown mechanism variant '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub variant: Variant,
    /// Period `tau` at which the rule is announced.
    pub activation_period: usize,
    /// Platform's per-seller cost estimate; only used by [`Variant::SimplifiedAi`].
    #[serde(default)]
    pub cost_estimate: Option<Vec<f64>>,
}

impl MechanismConfig {
    pub fn platform_full(activation_period: usize) -> Self {
        Self {
            variant: Variant::PlatformFull,
            activation_period,
            cost_estimate: None,
        }
    }

    pub fn simplified_ai(activation_period: usize, cost_estimate: Vec<f64>) -> Self {
        Self {
            variant: Variant::SimplifiedAi,
            activation_period,
            cost_estimate: Some(cost_estimate),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.activation_period < 1 {
            return Err(Error::InvalidArgument(
                "activation period must be at least 1".into(),
            ));
        }
        match (self.variant, &self.cost_estimate) {
            (Variant::SimplifiedAi, None) => Err(Error::InvalidArgument(
                "the simplified rule needs a cost estimate".into(),
            )),
            (Variant::SimplifiedAi, Some(c)) if c.iter().any(|x| !x.is_finite()) => Err(
                Error::InvalidArgument("cost estimates must be finite".into()),
            ),
            (Variant::SimplifiedAi, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::InvalidArgument(format!(
                "cost estimate given for variant {}",
                self.variant.name()
            ))),
            (_, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Inactive,
    Baseline,
    FirstDropped,
    SecondDropped,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Inactive => "inactive",
            Phase::Baseline => "baseline",
            Phase::FirstDropped => "first-dropped",
            Phase::SecondDropped => "second-dropped",
        }
    }
}

/// Price and quantity of a first dropper at `tau1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lock {
    pub price: f64,
    pub quantity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopupEntry {
    pub period: usize,
    pub seller: usize,
    /// Per-unit top-up.
    pub topup: f64,
    pub quantity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopupLedger {
    pub entries: Vec<TopupEntry>,
    /// Sum of `topup * quantity` over all entries.
    pub cumulative_total: f64,
}

impl TopupLedger {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn clear(&mut self) {
        self.entries.clear();
        self.cumulative_total = 0.0;
    }

    fn push(&mut self, entry: TopupEntry) {
        self.cumulative_total += entry.topup * entry.quantity;
        self.entries.push(entry);
    }
}

/// Per-unit top-up owed to a protected seller, floored at zero.
///
/// Simplified rule: `(t + p - c) q = q1 (p1 - c)` with `c` the cost estimate.
/// Revenue matching: `(t + p) q = p1 q1`.
pub fn compute_topup(
    lock: &Lock,
    price: f64,
    quantity: f64,
    variant: Variant,
    cost_estimate: Option<f64>,
) -> Result<f64> {
    if !(quantity > 0.0) {
        return Err(Error::DegenerateInput(format!(
            "top-up requested at quantity {quantity}"
        )));
    }
    let raw = match variant {
        Variant::SimplifiedAi => {
            let c = cost_estimate
                .ok_or_else(|| Error::InvalidArgument("missing cost estimate".into()))?;
            lock.quantity * (lock.price - c) / quantity - (price - c)
        }
        Variant::PlatformFull | Variant::MultiPlatform => {
            lock.price * lock.quantity / quantity - price
        }
        Variant::DirectMarket => {
            return Err(Error::InvalidArgument(
                "the direct-market rule pays no top-ups".into(),
            ))
        }
    };
    Ok(raw.max(0.0))
}

/// Two-stage drop state for one platform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismState {
    config: MechanismConfig,
    n_sellers: usize,
    phase: Phase,
    last_period: Option<usize>,
    reference_profits: Option<Vec<f64>>,
    baseline_prices: Vec<f64>,
    prev_prices: Vec<f64>,
    tau1: Option<usize>,
    tau2: Option<usize>,
    first_droppers: Vec<bool>,
    locks: Vec<Option<Lock>>,
    punishers: Vec<bool>,
    eligible: Vec<bool>,
    topups: Vec<f64>,
    ledger: TopupLedger,
    #[serde(skip)]
    scratch: Vec<bool>,
}

impl MechanismState {
    pub fn new(config: MechanismConfig, n_sellers: usize) -> Result<Self> {
        config.validate()?;
        if let Some(c) = &config.cost_estimate {
            if c.len() != n_sellers {
                return Err(Error::DimensionMismatch {
                    expected: format!("{n_sellers} cost estimates"),
                    got: format!("{}", c.len()),
                });
            }
        }
        if config.variant == Variant::DirectMarket {
            return Err(Error::InvalidArgument(
                "use DirectMarketState for the direct-market rule".into(),
            ));
        }
        Ok(Self {
            config,
            n_sellers,
            phase: Phase::Inactive,
            last_period: None,
            reference_profits: None,
            baseline_prices: vec![0.0; n_sellers],
            prev_prices: vec![0.0; n_sellers],
            tau1: None,
            tau2: None,
            first_droppers: vec![false; n_sellers],
            locks: vec![None; n_sellers],
            punishers: vec![false; n_sellers],
            eligible: vec![false; n_sellers],
            topups: vec![0.0; n_sellers],
            ledger: TopupLedger::default(),
            scratch: vec![false; n_sellers],
        })
    }

    /// Re-arm for a fresh trajectory without reallocating.
    pub fn reset(&mut self) {
        self.phase = Phase::Inactive;
        self.last_period = None;
        self.reference_profits = None;
        self.tau1 = None;
        self.tau2 = None;
        self.first_droppers.fill(false);
        self.locks.fill(None);
        self.punishers.fill(false);
        self.eligible.fill(false);
        self.topups.fill(0.0);
        self.ledger.clear();
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }
    pub fn phase(&self) -> Phase {
        self.phase
    }
    pub fn tau1(&self) -> Option<usize> {
        self.tau1
    }
    pub fn tau2(&self) -> Option<usize> {
        self.tau2
    }
    pub fn baseline_prices(&self) -> Option<&[f64]> {
        (self.phase != Phase::Inactive).then_some(&self.baseline_prices[..])
    }
    pub fn is_first_dropper(&self, seller: usize) -> bool {
        self.first_droppers[seller]
    }
    pub fn first_droppers(&self) -> Vec<usize> {
        indices(&self.first_droppers)
    }
    pub fn punishers(&self) -> Vec<usize> {
        indices(&self.punishers)
    }
    pub fn lock(&self, seller: usize) -> Option<Lock> {
        self.locks[seller]
    }
    pub fn is_eligible(&self, seller: usize) -> bool {
        self.eligible[seller]
    }
    /// Per-unit top-ups paid in the most recently observed period.
    pub fn last_topups(&self) -> &[f64] {
        &self.topups
    }
    pub fn ledger(&self) -> &TopupLedger {
        &self.ledger
    }

    fn cost_estimate(&self, seller: usize) -> Option<f64> {
        self.config.cost_estimate.as_ref().map(|c| c[seller])
    }

    /// Feed one period of play. Returns the per-unit top-ups paid this period.
    pub fn observe_period(
        &mut self,
        prices: &[f64],
        quantities: &[f64],
        profits: &[f64],
        period: usize,
    ) -> Result<&[f64]> {
        self.check_lengths(prices, quantities, profits)?;
        let mut droppers = std::mem::take(&mut self.scratch);
        let started = self.last_period.is_some();
        for (i, d) in droppers.iter_mut().enumerate() {
            *d = started && prices[i] < self.prev_prices[i];
        }
        let band = (self.phase == Phase::SecondDropped)
            .then(|| band(&self.punishers, [&self.prev_prices[..]]));
        let out = self.advance(prices, quantities, profits, period, &droppers, band);
        self.scratch = droppers;
        out?;
        Ok(&self.topups)
    }

    fn check_lengths(&self, prices: &[f64], quantities: &[f64], profits: &[f64]) -> Result<()> {
        let n = self.n_sellers;
        if prices.len() != n || quantities.len() != n || profits.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} prices, quantities and profits"),
                got: format!("{}, {}, {}", prices.len(), quantities.len(), profits.len()),
            });
        }
        Ok(())
    }

    /// Core transition. `droppers[i]` marks sellers that cut below their own
    /// previous price this period (on any platform, for the multi-platform
    /// rule); `band` is the punishers' previous-period price range.
    pub(crate) fn advance(
        &mut self,
        prices: &[f64],
        quantities: &[f64],
        profits: &[f64],
        period: usize,
        droppers: &[bool],
        band: Option<(f64, f64)>,
    ) -> Result<()> {
        if let Some(last) = self.last_period {
            if period != last + 1 {
                return Err(Error::Protocol(format!(
                    "period {period} observed after period {last}"
                )));
            }
        }
        let tau = self.config.activation_period;
        self.topups.fill(0.0);

        if period == tau {
            self.reference_profits = Some(profits.to_vec());
        } else if period == tau + 1 {
            if self.config.variant == Variant::SimplifiedAi && self.reference_profits.is_none() {
                return Err(Error::Protocol(format!(
                    "baseline period {period} reached without observing activation period {tau}"
                )));
            }
            self.baseline_prices.copy_from_slice(prices);
            self.phase = Phase::Baseline;
        } else if period > tau + 1 {
            match self.phase {
                Phase::Inactive => {
                    return Err(Error::Protocol(format!(
                        "period {period} observed before the baseline period {}",
                        tau + 1
                    )))
                }
                Phase::Baseline => self.detect_first_drop(prices, quantities, profits, period),
                Phase::FirstDropped => {
                    self.enforce_locked_price(prices);
                    if droppers.iter().any(|&d| d) {
                        self.tau2 = Some(period);
                        self.phase = Phase::SecondDropped;
                        self.punishers.copy_from_slice(droppers);
                        for i in 0..self.n_sellers {
                            if self.punishers[i] {
                                self.eligible[i] = false;
                            }
                            if self.eligible[i] && self.config.variant != Variant::SimplifiedAi {
                                let lock = self.locks[i].expect("first dropper has a lock");
                                self.eligible[i] =
                                    prices[i] == lock.price && quantities[i] <= lock.quantity;
                            }
                        }
                        self.pay_topups(prices, quantities, period)?;
                    }
                }
                Phase::SecondDropped => {
                    self.enforce_locked_price(prices);
                    if self.config.variant != Variant::SimplifiedAi {
                        let (lo, hi) = band.expect("band is supplied after the second drop");
                        for i in 0..self.n_sellers {
                            if self.eligible[i] {
                                let lock = self.locks[i].expect("eligible seller has a lock");
                                self.eligible[i] = prices[i] >= lo
                                    && prices[i] <= hi
                                    && quantities[i] <= lock.quantity;
                            }
                        }
                    }
                    self.pay_topups(prices, quantities, period)?;
                }
            }
        }
        self.prev_prices.copy_from_slice(prices);
        self.last_period = Some(period);
        Ok(())
    }

    fn detect_first_drop(
        &mut self,
        prices: &[f64],
        quantities: &[f64],
        profits: &[f64],
        period: usize,
    ) {
        let mut any = false;
        for i in 0..self.n_sellers {
            let below = prices[i] < self.baseline_prices[i];
            let gains = match (self.config.variant, &self.reference_profits) {
                (Variant::SimplifiedAi, Some(reference)) => profits[i] > reference[i],
                _ => true,
            };
            if below && gains {
                any = true;
                self.first_droppers[i] = true;
                self.eligible[i] = true;
                self.locks[i] = Some(Lock {
                    price: prices[i],
                    quantity: quantities[i],
                });
            }
        }
        if any {
            self.tau1 = Some(period);
            self.phase = Phase::FirstDropped;
        }
    }

    /// The simplified rule requires the drop price at every period from `tau1`.
    fn enforce_locked_price(&mut self, prices: &[f64]) {
        if self.config.variant != Variant::SimplifiedAi {
            return;
        }
        for i in 0..self.n_sellers {
            if self.eligible[i] {
                self.eligible[i] = self.locks[i].is_some_and(|l| l.price == prices[i]);
            }
        }
    }

    fn pay_topups(&mut self, prices: &[f64], quantities: &[f64], period: usize) -> Result<()> {
        for i in 0..self.n_sellers {
            if !self.eligible[i] {
                continue;
            }
            let lock = self.locks[i].expect("eligible seller has a lock");
            let topup = compute_topup(
                &lock,
                prices[i],
                quantities[i],
                self.config.variant,
                self.cost_estimate(i),
            )?;
            self.topups[i] = topup;
            self.ledger.push(TopupEntry {
                period,
                seller: i,
                topup,
                quantity: quantities[i],
            });
        }
        Ok(())
    }

    /// Would `seller` remain eligible if it sold `quantity` at `price` in
    /// `period`, given the prices observed so far?
    pub fn eligibility_check(
        &self,
        seller: usize,
        price: f64,
        quantity: f64,
        period: usize,
    ) -> bool {
        if self.phase != Phase::SecondDropped
            || !self.eligible.get(seller).copied().unwrap_or(false)
        {
            return false;
        }
        let lock = match self.locks[seller] {
            Some(lock) => lock,
            None => return false,
        };
        match self.config.variant {
            Variant::SimplifiedAi => price == lock.price,
            _ if Some(period) == self.tau2 => price == lock.price && quantity <= lock.quantity,
            _ => {
                let (lo, hi) = band(&self.punishers, [&self.prev_prices[..]]);
                price >= lo && price <= hi && quantity <= lock.quantity
            }
        }
    }

    /// Top-up owed to an eligible `seller` at the given price and quantity.
    pub fn compute_topup(&self, seller: usize, price: f64, quantity: f64) -> Result<f64> {
        check_index(seller, self.n_sellers)?;
        let lock = self.locks[seller].ok_or_else(|| {
            Error::InvalidArgument(format!("seller {seller} is not a first dropper"))
        })?;
        compute_topup(
            &lock,
            price,
            quantity,
            self.config.variant,
            self.cost_estimate(seller),
        )
    }
}

fn indices(flags: &[bool]) -> Vec<usize> {
    flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(i, _)| i)
        .collect()
}

/// `[min, max]` of the punishers' prices over the given price vectors.
pub(crate) fn band<'a>(
    punishers: &[bool],
    price_sets: impl IntoIterator<Item = &'a [f64]>,
) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for prices in price_sets {
        for (i, &p) in prices.iter().enumerate() {
            if punishers[i] {
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests;
