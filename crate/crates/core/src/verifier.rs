//! Exhaustive equilibrium checks over a finite family of cartel strategies.
//!
//! A strategy prescribes a constant profile. After any departure from the
//! prescribed play the others punish for `T` periods at a constant profile,
//! then revert; a departure during punishment restarts it. Strategies are
//! indexed by prescription, then `T = 0`, then `T in 1..=max_length` with
//! every punishment profile on the grid.
//!
//! For each strategy the search looks for a seller that departs in the second
//! period after activation and then follows the mechanism's guidance, earning
//! strictly more than the cartel flow in every period. The resulting path is
//! eventually periodic, so discounted values are computed exactly.
//!
//! Punishments are dropped (the others acquiesce) when every punisher would
//! earn less by punishing than by acquiescing in the first punishment period.

use serde::{Deserialize, Serialize};

use crate::equilibrium::{
    cournot_best_response, cournot_nash_quantities, nash_prices, quantity_incentive_margin,
};
use crate::error::{Error, Result};
use crate::market::{
    cournot_price, cournot_profit, logit_demand, shares_unchecked, CournotParams, MarketParams,
    PriceGrid,
};
use crate::mechanism::{
    band, compute_topup, DirectMarketState, Lock, MechanismConfig, MechanismState, Variant,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Discount factors every witness is checked against.
pub const DISCOUNT_FACTORS: [f64; 4] = [0.5, 0.9, 0.95, 0.99];

/// A witness must beat the cartel flow by more than this in every period.
pub const DOMINANCE_EPS: f64 = 1e-12;

/// Replayed flows must match the search within this tolerance.
pub const REPLAY_TOL: f64 = 1e-9;

const TAU: usize = 1;
const MAX_PATH: usize = 10_000;
const SURVIVOR_SAMPLE: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartelStrategy {
    pub prescription: Vec<f64>,
    pub punishment_length: usize,
    /// Empty when `punishment_length` is zero.
    pub punishment: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PunishmentFamily {
    pub max_length: usize,
    /// Refuse to enumerate more strategies than this.
    pub max_strategies: u64,
}

impl Default for PunishmentFamily {
    fn default() -> Self {
        Self {
            max_length: 2,
            max_strategies: 5_000_000,
        }
    }
}

/// `m^n (1 + max_length m^n)`, or `None` on overflow.
pub fn family_size(grid_len: usize, n_sellers: usize, max_length: usize) -> Option<u64> {
    let profiles = (grid_len as u64).checked_pow(n_sellers as u32)?;
    let per = (max_length as u64).checked_mul(profiles)?.checked_add(1)?;
    profiles.checked_mul(per)
}

fn profile(points: &[f64], n: usize, mut index: usize) -> Vec<f64> {
    let m = points.len();
    (0..n)
        .map(|_| {
            let p = points[index % m];
            index /= m;
            p
        })
        .collect()
}

/// Every member of the family sharing the prescription with index `k`.
pub fn members(
    points: &[f64],
    n_sellers: usize,
    max_length: usize,
    k: usize,
) -> impl Iterator<Item = CartelStrategy> + '_ {
    let profiles = points.len().pow(n_sellers as u32);
    let prescription = profile(points, n_sellers, k);
    let stay = CartelStrategy {
        prescription: prescription.clone(),
        punishment_length: 0,
        punishment: Vec::new(),
    };
    let punish = (1..=max_length).flat_map(move |t| {
        let prescription = prescription.clone();
        (0..profiles).map(move |j| CartelStrategy {
            prescription: prescription.clone(),
            punishment_length: t,
            punishment: profile(points, n_sellers, j),
        })
    });
    std::iter::once(stay).chain(punish)
}

/// The whole family in index order.
pub fn strategies(
    points: &[f64],
    n_sellers: usize,
    max_length: usize,
) -> impl Iterator<Item = CartelStrategy> + '_ {
    let profiles = points.len().pow(n_sellers as u32);
    (0..profiles).flat_map(move |k| members(points, n_sellers, max_length, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPeriod {
    /// Prices or quantities chosen.
    pub actions: Vec<f64>,
    /// Units sold (after any withholding).
    pub sold: Vec<f64>,
    /// Per-seller profit including top-ups or purchase offers.
    pub flows: Vec<f64>,
}

/// A prefix followed by a cycle repeated forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPath {
    pub prefix: Vec<PathPeriod>,
    pub cycle: Vec<PathPeriod>,
}

impl PeriodicPath {
    /// A path that repeats `flows` forever.
    pub fn constant(actions: Vec<f64>, flows: Vec<f64>) -> Self {
        Self {
            prefix: Vec::new(),
            cycle: vec![PathPeriod {
                sold: vec![0.0; actions.len()],
                actions,
                flows,
            }],
        }
    }

    pub fn period(&self, k: usize) -> &PathPeriod {
        if k < self.prefix.len() {
            &self.prefix[k]
        } else {
            &self.cycle[(k - self.prefix.len()) % self.cycle.len()]
        }
    }

    fn all(&self) -> impl Iterator<Item = &PathPeriod> {
        self.prefix.iter().chain(self.cycle.iter())
    }

    fn flow_bound(&self) -> f64 {
        self.all()
            .flat_map(|p| p.flows.iter())
            .fold(0.0, |m, f| m.max(f.abs()))
    }

    /// Exact discounted value of seller `i`'s flows.
    pub fn exact_value(&self, i: usize, delta: f64) -> f64 {
        let mut value = 0.0;
        let mut w = 1.0;
        for p in &self.prefix {
            value += w * p.flows[i];
            w *= delta;
        }
        let mut cycle = 0.0;
        let mut wc = 1.0;
        for p in &self.cycle {
            cycle += wc * p.flows[i];
            wc *= delta;
        }
        value + w * cycle / (1.0 - wc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedPayoff {
    pub values: Vec<f64>,
    pub horizon: usize,
    /// Bound on the omitted tail, per seller.
    pub tail_bound: f64,
}

/// Truncated discounted sum of every seller's flows. The horizon is the
/// shortest whose tail is below `rel_tol` times the largest flow.
pub fn discounted_payoff(
    path: &PeriodicPath,
    delta: f64,
    rel_tol: f64,
) -> Result<DiscountedPayoff> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!(
            "discount factor {delta} outside [0, 1)"
        )));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance {rel_tol} must be positive"
        )));
    }
    if path.cycle.is_empty() {
        return Err(Error::InvalidArgument(
            "path needs a non-empty cycle".into(),
        ));
    }
    let n = path.cycle[0].flows.len();
    let bound = path.flow_bound();
    let mut horizon = 0;
    let mut w = 1.0;
    while w / (1.0 - delta) > rel_tol {
        w *= delta;
        horizon += 1;
    }
    let mut values = vec![0.0; n];
    let mut wk = 1.0;
    for k in 0..horizon {
        let p = path.period(k);
        for (v, f) in values.iter_mut().zip(&p.flows) {
            *v += wk * f;
        }
        wk *= delta;
    }
    Ok(DiscountedPayoff {
        values,
        horizon,
        tail_bound: bound * w / (1.0 - delta),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountedCheck {
    pub delta: f64,
    pub deviation_value: f64,
    pub cartel_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub strategy: CartelStrategy,
    pub deviator: usize,
    pub deviation: f64,
    pub cartel_flow: f64,
    /// Whether the others actually punished.
    pub punishment_credible: bool,
    /// Smallest per-period gain over the cartel flow.
    pub min_gain: f64,
    pub path: PeriodicPath,
    pub discounted: Vec<DiscountedCheck>,
    pub replay_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Survivor {
    pub prescription: Vec<f64>,
    pub surviving_members: u64,
    pub members: u64,
    /// The first few surviving members.
    pub sample: Vec<CartelStrategy>,
}

/// A misallocated prescription with the Nash total: the seller short of its
/// Nash quantity by `delta` has marginal profit exactly `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginWitness {
    pub prescription: Vec<f64>,
    pub seller: usize,
    pub delta: f64,
    pub margin: f64,
    pub deviation: f64,
    pub members_refuted: u64,
    pub members: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyBounds {
    pub grid_points: usize,
    pub prescriptions: u64,
    pub max_punishment_length: usize,
    pub punishment: String,
    pub deviations: String,
    pub strategies_closed_form: u64,
    pub strategies_visited: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "setting", rename_all = "kebab-case")]
pub enum Instance {
    Platform {
        grid: Vec<f64>,
        params: MarketParams,
    },
    Direct {
        grid: Vec<f64>,
        params: CournotParams,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub instance: Instance,
    pub family: FamilyBounds,
    pub nash_profile: Vec<f64>,
    pub survivors: Vec<Survivor>,
    pub strategies_refuted: u64,
    /// One witness per refuted prescription: the longest, harshest punishment.
    pub witnesses: Vec<Witness>,
    /// Top-ups paid or purchases made along the Nash path.
    pub equilibrium_transfers: f64,
    pub discount_factors: Vec<f64>,
    /// Witnesses whose discounted value fails to beat the cartel at some factor.
    pub discounted_failures: u64,
    /// Largest replay discrepancy over all witnesses.
    pub max_replay_error: f64,
    pub margin_witnesses: Vec<MarginWitness>,
}

impl Certificate {
    /// The Nash prescription is the only survivor and survives every member.
    pub fn nash_unique_survivor(&self) -> bool {
        self.survivors.len() == 1
            && self.survivors[0].prescription == self.nash_profile
            && self.survivors[0].surviving_members == self.survivors[0].members
    }

    pub fn is_certified(&self) -> bool {
        self.nash_unique_survivor()
            && self.equilibrium_transfers == 0.0
            && self.discounted_failures == 0
            && self.max_replay_error <= REPLAY_TOL
            && self.family.strategies_visited == self.family.strategies_closed_form
            && self
                .margin_witnesses
                .iter()
                .all(|w| (w.margin - w.delta).abs() <= 1e-12 && w.members_refuted == w.members)
    }
}

struct Deviation {
    path: PeriodicPath,
    credible: bool,
}

/// One stage game with the mechanism attached.
trait Game: Sync {
    fn n(&self) -> usize;
    fn points(&self) -> &[f64];
    fn static_profit(&self, profile: &[f64], i: usize) -> f64;
    fn candidates(&self, strategy: &CartelStrategy, i: usize) -> Vec<f64>;
    fn simulate(
        &self,
        strategy: &CartelStrategy,
        deviator: usize,
        deviation: f64,
    ) -> Result<Deviation>;
    fn replay(
        &self,
        strategy: &CartelStrategy,
        deviator: usize,
        path: &PeriodicPath,
    ) -> Result<f64>;
    /// Representative punishment profile.
    fn harshest(&self) -> f64;

    /// Punishment is dropped when every punisher prefers to acquiesce
    /// against the deviator's current action `x`.
    fn is_credible(&self, s: &CartelStrategy, deviator: usize, x: f64) -> bool {
        let mut punish = s.punishment.clone();
        punish[deviator] = x;
        let mut acquiesce = s.prescription.clone();
        acquiesce[deviator] = x;
        let punishers: Vec<usize> = (0..self.n())
            .filter(|&j| j != deviator && s.punishment[j] != s.prescription[j])
            .collect();
        punishers.is_empty()
            || !punishers
                .iter()
                .all(|&j| self.static_profit(&punish, j) < self.static_profit(&acquiesce, j))
    }
}

fn period_key(
    counter: usize,
    credible: Option<bool>,
    prev: &[f64],
    flags: &[bool],
    locks: &[Option<(f64, f64)>],
) -> Vec<u64> {
    let mut key = vec![counter as u64, credible.map_or(2, u64::from)];
    key.extend(prev.iter().map(|p| p.to_bits()));
    key.extend(flags.iter().map(|&b| u64::from(b)));
    for l in locks {
        match l {
            Some((a, b)) => key.extend([1, a.to_bits(), b.to_bits()]),
            None => key.push(0),
        }
    }
    key
}

fn close_cycle(
    keys: &mut Vec<Vec<u64>>,
    periods: &mut Vec<PathPeriod>,
    key: Vec<u64>,
) -> Option<PeriodicPath> {
    if let Some(start) = keys.iter().position(|k| *k == key) {
        let cycle = periods.split_off(start + 1);
        return Some(PeriodicPath {
            prefix: std::mem::take(periods),
            cycle,
        });
    }
    keys.push(key);
    None
}

fn path_too_long() -> Error {
    Error::ResourceLimit(format!(
        "deviation path did not cycle within {MAX_PATH} periods"
    ))
}

/// Punishment bookkeeping shared by both settings.
struct Punishment {
    counter: usize,
    credible: Option<bool>,
}

impl Punishment {
    /// Profile the others play this period given the deviator's action `x`.
    fn profile<G: Game + ?Sized>(
        &mut self,
        game: &G,
        s: &CartelStrategy,
        deviator: usize,
        x: f64,
    ) -> (Vec<f64>, bool) {
        let punishing = self.counter > 0;
        if punishing && self.credible.is_none() {
            self.credible = Some(game.is_credible(s, deviator, x));
        }
        let active = punishing && self.credible == Some(true);
        let mut profile = if active {
            s.punishment.clone()
        } else {
            s.prescription.clone()
        };
        let prescribed = profile[deviator];
        profile[deviator] = x;
        (profile, x != prescribed)
    }

    fn advance(&mut self, s: &CartelStrategy, departed: bool) {
        self.counter = if departed && s.punishment_length > 0 {
            s.punishment_length
        } else {
            self.counter.saturating_sub(1)
        };
    }
}

struct PlatformGame<'a> {
    grid: &'a PriceGrid,
    params: &'a MarketParams,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Stage {
    Baseline,
    First,
    Second,
}

impl Game for PlatformGame<'_> {
    fn n(&self) -> usize {
        self.params.n_sellers()
    }
    fn points(&self) -> &[f64] {
        self.grid.points()
    }
    fn static_profit(&self, prices: &[f64], i: usize) -> f64 {
        let mut shares = vec![0.0; prices.len()];
        shares_unchecked(prices, self.params, &mut shares);
        (prices[i] - self.params.c[i]) * shares[i]
    }
    fn candidates(&self, s: &CartelStrategy, i: usize) -> Vec<f64> {
        self.grid
            .points()
            .iter()
            .copied()
            .filter(|&p| p != s.prescription[i])
            .collect()
    }
    fn harshest(&self) -> f64 {
        self.grid.p_min()
    }

    fn simulate(&self, s: &CartelStrategy, dev: usize, d: f64) -> Result<Deviation> {
        let n = self.n();
        let c = &self.params.c;
        let baseline = &s.prescription;
        let mut prev = baseline.clone();
        let mut punishment = Punishment {
            counter: 0,
            credible: None,
        };
        let mut stage = Stage::Baseline;
        let mut first = vec![false; n];
        let mut eligible = vec![false; n];
        let mut punishers = vec![false; n];
        let mut locks: Vec<Option<Lock>> = vec![None; n];
        let mut shares = vec![0.0; n];
        let mut keys = Vec::new();
        let mut periods = Vec::new();
        for k in 0..MAX_PATH {
            if k > 0 {
                let mut flags = first.clone();
                flags.extend(&eligible);
                flags.extend(&punishers);
                flags.extend([stage == Stage::First, stage == Stage::Second]);
                let lock_bits: Vec<_> = locks
                    .iter()
                    .map(|l| l.map(|l| (l.price, l.quantity)))
                    .collect();
                let key = period_key(
                    punishment.counter,
                    punishment.credible,
                    &prev,
                    &flags,
                    &lock_bits,
                );
                if let Some(path) = close_cycle(&mut keys, &mut periods, key) {
                    return Ok(Deviation {
                        path,
                        credible: punishment.credible.unwrap_or(true),
                    });
                }
            }
            let x = if stage == Stage::Second && eligible[dev] {
                let (lo, hi) = band(&punishers, [&prev[..]]);
                d.clamp(lo, hi)
            } else {
                d
            };
            let (prices, departed) = punishment.profile(self, s, dev, x);
            shares_unchecked(&prices, self.params, &mut shares);
            let mut sold = shares.clone();
            if let Some(lock) = locks[dev] {
                sold[dev] = sold[dev].min(lock.quantity);
            }

            let mut pay = false;
            match stage {
                Stage::Baseline => {
                    for j in 0..n {
                        if prices[j] < baseline[j] {
                            first[j] = true;
                            eligible[j] = true;
                            locks[j] = Some(Lock {
                                price: prices[j],
                                quantity: sold[j],
                            });
                            stage = Stage::First;
                        }
                    }
                }
                Stage::First => {
                    if (0..n).any(|j| prices[j] < prev[j]) {
                        stage = Stage::Second;
                        for j in 0..n {
                            punishers[j] = prices[j] < prev[j];
                            if punishers[j] {
                                eligible[j] = false;
                            }
                            if let (true, Some(lock)) = (eligible[j], locks[j]) {
                                eligible[j] = prices[j] == lock.price && sold[j] <= lock.quantity;
                            }
                        }
                        pay = true;
                    }
                }
                Stage::Second => {
                    let (lo, hi) = band(&punishers, [&prev[..]]);
                    for j in 0..n {
                        if let (true, Some(lock)) = (eligible[j], locks[j]) {
                            eligible[j] =
                                prices[j] >= lo && prices[j] <= hi && sold[j] <= lock.quantity;
                        }
                    }
                    pay = true;
                }
            }
            let mut flows = vec![0.0; n];
            for j in 0..n {
                let topup = match (pay && eligible[j], locks[j]) {
                    (true, Some(lock)) => {
                        compute_topup(&lock, prices[j], sold[j], Variant::PlatformFull, None)?
                    }
                    _ => 0.0,
                };
                flows[j] = (prices[j] + topup - c[j]) * sold[j];
            }
            punishment.advance(s, departed);
            prev.copy_from_slice(&prices);
            periods.push(PathPeriod {
                actions: prices,
                sold,
                flows,
            });
        }
        Err(path_too_long())
    }

    fn replay(&self, s: &CartelStrategy, dev: usize, path: &PeriodicPath) -> Result<f64> {
        let n = self.n();
        let c = &self.params.c;
        let mut mech = MechanismState::new(MechanismConfig::platform_full(TAU), n)?;
        let cartel = logit_demand(&s.prescription, self.params)?;
        let cartel_profits: Vec<f64> = (0..n)
            .map(|j| (s.prescription[j] - c[j]) * cartel.shares[j])
            .collect();
        mech.observe_period(&s.prescription, &cartel.shares, &cartel_profits, TAU)?;
        mech.observe_period(&s.prescription, &cartel.shares, &cartel_profits, TAU + 1)?;
        let horizon = path.prefix.len() + 2 * path.cycle.len();
        let mut err: f64 = 0.0;
        for k in 0..horizon {
            let period = path.period(k);
            let prices = &period.actions;
            let mut sold = logit_demand(prices, self.params)?.shares;
            if let Some(lock) = mech.lock(dev) {
                sold[dev] = sold[dev].min(lock.quantity);
            }
            let profits: Vec<f64> = (0..n).map(|j| (prices[j] - c[j]) * sold[j]).collect();
            let topups = mech.observe_period(prices, &sold, &profits, TAU + 2 + k)?;
            for j in 0..n {
                let flow = (prices[j] + topups[j] - c[j]) * sold[j];
                err = err.max((flow - period.flows[j]).abs());
            }
        }
        Ok(err)
    }
}

struct DirectGame<'a> {
    grid: &'a PriceGrid,
    params: &'a CournotParams,
}

#[derive(Clone, Copy)]
struct Offer {
    quantity: f64,
    price: f64,
}

/// A seller holding an offer sells up to the offered quantity at the offered
/// price when that beats the market price.
fn offer_flow(q: f64, market: f64, cost: f64, offer: Option<Offer>) -> f64 {
    let plain = (market - cost) * q;
    match offer {
        Some(o) => {
            let covered = q.min(o.quantity);
            plain.max(o.price * covered + market * (q - covered) - cost * q)
        }
        None => plain,
    }
}

impl Game for DirectGame<'_> {
    fn n(&self) -> usize {
        self.params.n_sellers()
    }
    fn points(&self) -> &[f64] {
        self.grid.points()
    }
    fn static_profit(&self, q: &[f64], i: usize) -> f64 {
        (cournot_price(q, self.params) - self.params.c[i]) * q[i]
    }
    fn candidates(&self, s: &CartelStrategy, i: usize) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .grid
            .points()
            .iter()
            .copied()
            .filter(|&q| q != s.prescription[i])
            .collect();
        let br = cournot_best_response(&s.prescription, self.params, i);
        if br != s.prescription[i] && !out.contains(&br) {
            out.push(br);
        }
        out
    }
    fn harshest(&self) -> f64 {
        self.grid.p_max()
    }

    fn simulate(&self, s: &CartelStrategy, dev: usize, d: f64) -> Result<Deviation> {
        let n = self.n();
        let c = &self.params.c;
        let baseline = &s.prescription;
        let mut prev = baseline.clone();
        let mut punishment = Punishment {
            counter: 0,
            credible: None,
        };
        let (mut tau1, mut tau2) = (false, false);
        let mut first = vec![false; n];
        let mut punishers = vec![false; n];
        let mut offers: Vec<Option<Offer>> = vec![None; n];
        let mut keys = Vec::new();
        let mut periods = Vec::new();
        for k in 0..MAX_PATH {
            if k > 0 {
                let mut flags = first.clone();
                flags.extend(&punishers);
                flags.extend([tau1, tau2]);
                let offer_bits: Vec<_> = offers
                    .iter()
                    .map(|o| o.map(|o| (o.price, o.quantity)))
                    .collect();
                let key = period_key(
                    punishment.counter,
                    punishment.credible,
                    &prev,
                    &flags,
                    &offer_bits,
                );
                if let Some(path) = close_cycle(&mut keys, &mut periods, key) {
                    return Ok(Deviation {
                        path,
                        credible: punishment.credible.unwrap_or(true),
                    });
                }
            }
            let (q, departed) = punishment.profile(self, s, dev, d);
            let price = cournot_price(&q, self.params);
            if !tau1 {
                for j in 0..n {
                    if q[j] > baseline[j] {
                        first[j] = true;
                        offers[j] = Some(Offer {
                            quantity: q[j],
                            price,
                        });
                        tau1 = true;
                    }
                }
            } else if !tau2 {
                for j in 0..n {
                    if q[j] > prev[j] {
                        punishers[j] = true;
                        tau2 = true;
                    }
                }
            }
            let flows: Vec<f64> = (0..n)
                .map(|j| {
                    let offer = if tau2 && first[j] && !punishers[j] {
                        offers[j]
                    } else {
                        None
                    };
                    offer_flow(q[j], price, c[j], offer)
                })
                .collect();
            punishment.advance(s, departed);
            prev.copy_from_slice(&q);
            periods.push(PathPeriod {
                sold: q.clone(),
                actions: q,
                flows,
            });
        }
        Err(path_too_long())
    }

    fn replay(&self, s: &CartelStrategy, _dev: usize, path: &PeriodicPath) -> Result<f64> {
        let n = self.n();
        let mut state = DirectMarketState::new(TAU, n)?;
        state.observe_quantities(&s.prescription, self.params, TAU)?;
        state.observe_quantities(&s.prescription, self.params, TAU + 1)?;
        let horizon = path.prefix.len() + 2 * path.cycle.len();
        let mut err: f64 = 0.0;
        for k in 0..horizon {
            let period = path.period(k);
            let q = &period.actions;
            let t = TAU + 2 + k;
            state.observe_quantities(q, self.params, t)?;
            let price = cournot_price(q, self.params);
            for j in 0..n {
                let offer = state.direct_market_guarantee(j, t).map(|o| Offer {
                    quantity: o.quantity,
                    price: o.price,
                });
                let flow = offer_flow(q[j], price, self.params.c[j], offer);
                let plain = cournot_profit(q, self.params, j)?;
                err = err.max((flow - period.flows[j]).abs());
                if offer.is_none() {
                    err = err.max((plain - period.flows[j]).abs());
                }
            }
        }
        Ok(err)
    }
}

struct Found {
    deviator: usize,
    deviation: f64,
    cartel_flow: f64,
    deviation_path: Deviation,
    min_gain: f64,
}

/// First deviation that beats the cartel flow in every period, trying each
/// seller's candidates in order of static gain.
fn find_witness<G: Game>(game: &G, s: &CartelStrategy) -> Result<Option<Found>> {
    for i in 0..game.n() {
        let cartel_flow = game.static_profit(&s.prescription, i);
        let mut candidates: Vec<(f64, f64)> = game
            .candidates(s, i)
            .into_iter()
            .map(|d| {
                let mut profile = s.prescription.clone();
                profile[i] = d;
                (game.static_profit(&profile, i), d)
            })
            .filter(|(gain, _)| *gain > cartel_flow + DOMINANCE_EPS)
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
        for (_, d) in candidates {
            let dev = game.simulate(s, i, d)?;
            let min_flow = dev
                .path
                .prefix
                .iter()
                .chain(&dev.path.cycle)
                .map(|p| p.flows[i])
                .fold(f64::INFINITY, f64::min);
            if min_flow > cartel_flow + DOMINANCE_EPS {
                return Ok(Some(Found {
                    deviator: i,
                    deviation: d,
                    cartel_flow,
                    deviation_path: dev,
                    min_gain: min_flow - cartel_flow,
                }));
            }
        }
    }
    Ok(None)
}

fn discounted_checks(found: &Found) -> Vec<DiscountedCheck> {
    DISCOUNT_FACTORS
        .iter()
        .map(|&delta| DiscountedCheck {
            delta,
            deviation_value: found.deviation_path.path.exact_value(found.deviator, delta),
            cartel_value: found.cartel_flow / (1.0 - delta),
        })
        .collect()
}

#[derive(Default)]
struct Outcome {
    visited: u64,
    surviving: u64,
    sample: Vec<CartelStrategy>,
    refuted: u64,
    discounted_failures: u64,
    max_replay_error: f64,
    representative: Option<Witness>,
}

fn check_prescription<G: Game>(game: &G, max_length: usize, k: usize) -> Result<Outcome> {
    let n = game.n();
    let harsh = vec![game.harshest(); n];
    let mut out = Outcome::default();
    for s in members(game.points(), n, max_length, k) {
        out.visited += 1;
        let Some(found) = find_witness(game, &s)? else {
            out.surviving += 1;
            if out.sample.len() < SURVIVOR_SAMPLE {
                out.sample.push(s);
            }
            continue;
        };
        out.refuted += 1;
        let checks = discounted_checks(&found);
        if checks.iter().any(|c| !(c.deviation_value > c.cartel_value)) {
            out.discounted_failures += 1;
        }
        let replay_error = game.replay(&s, found.deviator, &found.deviation_path.path)?;
        out.max_replay_error = out.max_replay_error.max(replay_error);
        if s.punishment_length == max_length && s.punishment == harsh || max_length == 0 {
            out.representative = Some(Witness {
                deviator: found.deviator,
                deviation: found.deviation,
                cartel_flow: found.cartel_flow,
                punishment_credible: found.deviation_path.credible,
                min_gain: found.min_gain,
                path: found.deviation_path.path,
                discounted: checks,
                replay_error,
                strategy: s,
            });
        }
    }
    Ok(out)
}

fn map_indices<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

fn run<G: Game>(
    game: &G,
    family: &PunishmentFamily,
    deviations: &str,
) -> Result<(FamilyBounds, Vec<Survivor>, Vec<Outcome>)> {
    let (m, n) = (game.points().len(), game.n());
    let closed = family_size(m, n, family.max_length)
        .filter(|&c| c <= family.max_strategies)
        .ok_or_else(|| {
            Error::ResourceLimit(format!(
                "family of {m}^{n} prescriptions with punishments up to {} periods exceeds {} strategies",
                family.max_length, family.max_strategies
            ))
        })?;
    let prescriptions = m.pow(n as u32);
    let outcomes: Vec<Outcome> = map_indices(prescriptions, |k| {
        check_prescription(game, family.max_length, k)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let survivors = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.surviving > 0)
        .map(|(k, o)| Survivor {
            prescription: profile(game.points(), n, k),
            surviving_members: o.surviving,
            members: o.visited,
            sample: o.sample.clone(),
        })
        .collect();
    let bounds = FamilyBounds {
        grid_points: m,
        prescriptions: prescriptions as u64,
        max_punishment_length: family.max_length,
        punishment: "constant profile on the grid, restarted by any departure".into(),
        deviations: deviations.into(),
        strategies_closed_form: closed,
        strategies_visited: outcomes.iter().map(|o| o.visited).sum(),
    };
    Ok((bounds, survivors, outcomes))
}

fn assemble(
    instance: Instance,
    nash_profile: Vec<f64>,
    bounds: FamilyBounds,
    survivors: Vec<Survivor>,
    outcomes: Vec<Outcome>,
    equilibrium_transfers: f64,
    margin_witnesses: Vec<MarginWitness>,
) -> Certificate {
    Certificate {
        instance,
        family: bounds,
        nash_profile,
        survivors,
        strategies_refuted: outcomes.iter().map(|o| o.refuted).sum(),
        discounted_failures: outcomes.iter().map(|o| o.discounted_failures).sum(),
        max_replay_error: outcomes.iter().fold(0.0, |m, o| m.max(o.max_replay_error)),
        witnesses: outcomes
            .into_iter()
            .filter_map(|o| o.representative)
            .collect(),
        equilibrium_transfers,
        discount_factors: DISCOUNT_FACTORS.to_vec(),
        margin_witnesses,
    }
}

/// Certify repeated Nash pricing as the only surviving prescription on the
/// platform, with no top-ups on its path.
pub fn verify_platform_theorem(
    grid: &PriceGrid,
    params: &MarketParams,
    family: &PunishmentFamily,
) -> Result<Certificate> {
    params.validate()?;
    let nash = nash_prices(params)?;
    let nash_profile: Vec<f64> = nash
        .prices
        .iter()
        .map(|&p| grid.price(grid.nearest_index(p)))
        .collect();
    let game = PlatformGame { grid, params };
    let (bounds, survivors, outcomes) = run(&game, family, "every other grid price")?;

    let n = params.n_sellers();
    let mut mech = MechanismState::new(MechanismConfig::platform_full(TAU), n)?;
    let demand = logit_demand(&nash_profile, params)?;
    let profits: Vec<f64> = (0..n)
        .map(|j| (nash_profile[j] - params.c[j]) * demand.shares[j])
        .collect();
    for t in TAU..TAU + 100 {
        mech.observe_period(&nash_profile, &demand.shares, &profits, t)?;
    }
    let transfers = mech.ledger().cumulative_total + mech.ledger().entries.len() as f64;

    Ok(assemble(
        Instance::Platform {
            grid: grid.points().to_vec(),
            params: params.clone(),
        },
        nash_profile,
        bounds,
        survivors,
        outcomes,
        transfers,
        Vec::new(),
    ))
}

/// Certify Cournot quantities as the only surviving prescription in the
/// direct market, with no purchase offers on its path.
pub fn verify_direct_theorem(
    qgrid: &PriceGrid,
    params: &CournotParams,
    family: &PunishmentFamily,
) -> Result<Certificate> {
    params.validate()?;
    let nash = cournot_nash_quantities(params)?;
    let nash_profile: Vec<f64> = nash
        .iter()
        .map(|&q| qgrid.price(qgrid.nearest_index(q)))
        .collect();
    let game = DirectGame {
        grid: qgrid,
        params,
    };
    let (bounds, survivors, outcomes) = run(
        &game,
        family,
        "every other grid quantity and the exact best response",
    )?;

    let n = params.n_sellers();
    let mut state = DirectMarketState::new(TAU, n)?;
    let mut offers = 0usize;
    for t in TAU..TAU + 100 {
        state.observe_quantities(&nash_profile, params, t)?;
        offers += (0..n)
            .filter(|&j| state.direct_market_guarantee(j, t).is_some())
            .count();
    }

    let margin_witnesses = margin_witnesses(&game, &nash_profile, family.max_length)?;
    Ok(assemble(
        Instance::Direct {
            grid: qgrid.points().to_vec(),
            params: params.clone(),
        },
        nash_profile,
        bounds,
        survivors,
        outcomes,
        offers as f64,
        margin_witnesses,
    ))
}

/// Prescriptions with the Nash total but a different split: the seller
/// furthest below its Nash quantity best-responds against every member.
fn margin_witnesses(
    game: &DirectGame,
    nash: &[f64],
    max_length: usize,
) -> Result<Vec<MarginWitness>> {
    let (m, n) = (game.points().len(), game.n());
    let total: f64 = nash.iter().sum();
    let mut out = Vec::new();
    for k in 0..m.pow(n as u32) {
        let qc = profile(game.points(), n, k);
        if qc == nash || (qc.iter().sum::<f64>() - total).abs() > 1e-12 {
            continue;
        }
        let (seller, delta) = (0..n)
            .map(|j| (j, nash[j] - qc[j]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least two sellers");
        let deviation = cournot_best_response(&qc, game.params, seller);
        let cartel_flow = game.static_profit(&qc, seller);
        let mut refuted = 0;
        let mut count = 0;
        for s in members(game.points(), n, max_length, k) {
            count += 1;
            let dev = game.simulate(&s, seller, deviation)?;
            if dev
                .path
                .prefix
                .iter()
                .chain(&dev.path.cycle)
                .all(|p| p.flows[seller] > cartel_flow + DOMINANCE_EPS)
            {
                refuted += 1;
            }
        }
        out.push(MarginWitness {
            margin: quantity_incentive_margin(&qc, game.params, seller),
            prescription: qc,
            seller,
            delta,
            deviation,
            members_refuted: refuted,
            members: count,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn family_counted_two_ways() {
        let points = [1.0, 2.0, 3.0];
        for t in 0..3 {
            let visited = strategies(&points, 2, t).count() as u64;
            assert_eq!(Some(visited), family_size(3, 2, t));
        }
        assert_eq!(family_size(15, 2, 2), Some(101_475));
        assert_eq!(family_size(20, 2, 2), Some(320_400));
        assert_eq!(family_size(usize::MAX, 2, 2), None);
    }

    #[test]
    fn constant_flow_is_geometric() {
        let path = PeriodicPath::constant(vec![1.0], vec![0.3]);
        for delta in DISCOUNT_FACTORS {
            let v = discounted_payoff(&path, delta, 1e-9).unwrap();
            assert!((v.values[0] - 0.3 / (1.0 - delta)).abs() <= v.tail_bound + 1e-12);
            assert!(v.tail_bound <= 0.3 * 1e-9);
            assert_abs_diff_eq!(
                path.exact_value(0, delta),
                0.3 / (1.0 - delta),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn zero_flow_is_zero() {
        let path = PeriodicPath::constant(vec![1.0, 1.0], vec![0.0, 0.0]);
        let v = discounted_payoff(&path, 0.95, 1e-9).unwrap();
        assert_eq!(v.values, vec![0.0, 0.0]);
        assert_eq!(v.tail_bound, 0.0);
    }

    #[test]
    fn three_period_script_by_hand() {
        // Cartel flow 2, one punishment period at 1, then 3 forever.
        let period = |f: f64| PathPeriod {
            actions: vec![0.0],
            sold: vec![0.0],
            flows: vec![f],
        };
        let path = PeriodicPath {
            prefix: vec![period(2.0), period(1.0)],
            cycle: vec![period(3.0)],
        };
        let delta = 0.5;
        let hand = 2.0 + 0.5 * 1.0 + 0.25 * 3.0 / 0.5;
        assert_abs_diff_eq!(path.exact_value(0, delta), hand, epsilon = 1e-15);
        let v = discounted_payoff(&path, delta, 1e-9).unwrap();
        assert!((v.values[0] - hand).abs() <= v.tail_bound);
    }

    #[test]
    fn bad_discount_rejected() {
        let path = PeriodicPath::constant(vec![1.0], vec![1.0]);
        assert!(discounted_payoff(&path, 1.0, 1e-9).is_err());
        assert!(discounted_payoff(&path, 0.5, 0.0).is_err());
    }

    #[test]
    fn oversized_family_is_a_resource_limit() {
        let family = PunishmentFamily {
            max_length: 2,
            max_strategies: 1000,
        };
        let err =
            verify_platform_theorem(&PriceGrid::baseline(), &MarketParams::baseline(), &family)
                .unwrap_err();
        assert!(matches!(err, Error::ResourceLimit(_)));
    }

    #[test]
    fn small_platform_instance_certifies() {
        let grid = PriceGrid::new(5, 1.2, 1.76).unwrap();
        let cert = verify_platform_theorem(
            &grid,
            &MarketParams::baseline(),
            &PunishmentFamily::default(),
        )
        .unwrap();
        assert!(cert.is_certified(), "{:?}", cert.survivors);
        assert_eq!(cert.family.strategies_visited, 25 * 51);
        assert_eq!(cert.witnesses.len(), 24);
    }

    #[test]
    fn above_nash_cartel_refuted_by_undercutting() {
        let grid = PriceGrid::baseline();
        let params = MarketParams::baseline();
        let game = PlatformGame {
            grid: &grid,
            params: &params,
        };
        let s = CartelStrategy {
            prescription: vec![grid.price(9); 2],
            punishment_length: 1,
            punishment: vec![grid.price(6); 2],
        };
        let found = find_witness(&game, &s)
            .unwrap()
            .expect("cartel above Nash is refuted");
        assert!(found.deviation < s.prescription[found.deviator]);
        let mut profile = s.prescription.clone();
        profile[found.deviator] = found.deviation;
        let guaranteed = game.static_profit(&profile, found.deviator);
        assert!(guaranteed > found.cartel_flow);
        // Every later flow is at least the undercutting profit.
        for p in found
            .deviation_path
            .path
            .prefix
            .iter()
            .chain(&found.deviation_path.path.cycle)
        {
            assert!(p.flows[found.deviator] >= guaranteed - 1e-12);
        }
    }

    #[test]
    fn below_nash_punishment_is_not_credible() {
        let grid = PriceGrid::baseline();
        let params = MarketParams::baseline();
        let game = PlatformGame {
            grid: &grid,
            params: &params,
        };
        let s = CartelStrategy {
            prescription: vec![grid.price(3); 2],
            punishment_length: 2,
            punishment: vec![grid.price(0); 2],
        };
        let found = find_witness(&game, &s)
            .unwrap()
            .expect("cartel below Nash is refuted");
        assert!(found.deviation > s.prescription[found.deviator]);
        assert!(!found.deviation_path.credible);
    }

    #[test]
    fn cournot_misallocation_needs_exact_best_response() {
        let grid = PriceGrid::new(20, 0.0, 9.5).unwrap();
        let params = CournotParams::symmetric(10.0, 1.0, 2).unwrap();
        let game = DirectGame {
            grid: &grid,
            params: &params,
        };
        let qc = [3.5, 2.5];
        // On the grid, 3.0 only ties the cartel flow.
        assert_abs_diff_eq!(
            game.static_profit(&[3.5, 3.0], 1),
            game.static_profit(&qc, 1),
            epsilon = 1e-12
        );
        let s = CartelStrategy {
            prescription: qc.to_vec(),
            punishment_length: 0,
            punishment: Vec::new(),
        };
        assert!(find_witness(&game, &s).unwrap().is_some());
        let cartel = game.static_profit(&qc, 1);
        let beats = |d: f64| {
            let dev = game.simulate(&s, 1, d).unwrap();
            dev.path
                .prefix
                .iter()
                .chain(&dev.path.cycle)
                .all(|p| p.flows[1] > cartel + DOMINANCE_EPS)
        };
        assert!(!beats(3.0));
        assert!(beats(cournot_best_response(&qc, &params, 1)));
        assert_eq!(cournot_best_response(&qc, &params, 1), 2.75);
        assert_abs_diff_eq!(
            quantity_incentive_margin(&qc, &params, 1),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn witnesses_replay_exactly() {
        let grid = PriceGrid::new(5, 1.2, 1.76).unwrap();
        let params = MarketParams::baseline();
        let game = PlatformGame {
            grid: &grid,
            params: &params,
        };
        for s in strategies(grid.points(), 2, 2).step_by(7) {
            if let Some(found) = find_witness(&game, &s).unwrap() {
                let err = game
                    .replay(&s, found.deviator, &found.deviation_path.path)
                    .unwrap();
                assert!(err <= REPLAY_TOL, "{s:?} replay error {err}");
            }
        }
    }
}
