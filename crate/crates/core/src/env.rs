//! The repeated two-seller pricing game as a finite-state environment.
//!
//! An agent's state is the previous period's grid prices plus the public
//! mechanism flags and its own first-drop record.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{shares_unchecked, MarketParams, PriceGrid};
use crate::mechanism::{MechanismConfig, MechanismState, Phase};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub last_price_indices: Vec<usize>,
    /// Set in the state that follows the activation period.
    pub mech_first_period: bool,
    pub first_drop_occurred: bool,
    pub i_was_first_dropper: Vec<bool>,
    /// Each first dropper's own grid index at `tau1`.
    pub first_drop_price_index: Vec<Option<usize>>,
    pub second_drop_occurred: bool,
}

impl EnvState {
    pub fn new(n_agents: usize) -> Self {
        Self {
            last_price_indices: vec![0; n_agents],
            mech_first_period: false,
            first_drop_occurred: false,
            i_was_first_dropper: vec![false; n_agents],
            first_drop_price_index: vec![None; n_agents],
            second_drop_occurred: false,
        }
    }

    fn clear_flags(&mut self) {
        self.mech_first_period = false;
        self.first_drop_occurred = false;
        self.i_was_first_dropper.fill(false);
        self.first_drop_price_index.fill(None);
        self.second_drop_occurred = false;
    }

    /// What agent `agent` observes.
    pub fn view(&self, agent: usize) -> StateView {
        StateView {
            prices: self.last_price_indices.clone(),
            first_period: self.mech_first_period,
            first_drop: self.first_drop_occurred,
            own_drop_index: self.first_drop_price_index[agent],
            second_drop: self.second_drop_occurred,
        }
    }
}

/// One agent's observation. `own_drop_index.is_some()` is the
/// "I was the first dropper" flag.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateView {
    pub prices: Vec<usize>,
    pub first_period: bool,
    pub first_drop: bool,
    pub own_drop_index: Option<usize>,
    pub second_drop: bool,
}

impl StateView {
    /// Flag combinations that can occur: no drop before the first-period
    /// flag clears, no second drop without a first, and a drop price only
    /// for a first dropper.
    pub fn is_admissible(&self, n_prices: usize) -> bool {
        let own_ok = match self.own_drop_index {
            Some(k) => self.first_drop && k < n_prices,
            None => true,
        };
        own_ok
            && !(self.second_drop && !self.first_drop)
            && !(self.first_period && self.first_drop)
            && self.prices.iter().all(|&p| p < n_prices)
    }
}

/// Dense bijection between admissible views and `0..total_state_count()`.
///
/// Layout: `flag_block * m^n + price_profile`, where the flag blocks are
/// plain, first-period, first-drop (not mine), first-drop (mine, one block per
/// drop price), then the same two groups again with the second drop set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCodec {
    n_prices: usize,
    n_agents: usize,
    augmented: bool,
    base_count: usize,
}

pub fn enumerate_states(grid: &PriceGrid, n_agents: usize, augmented: bool) -> Result<StateCodec> {
    StateCodec::new(grid.len(), n_agents, augmented)
}

impl StateCodec {
    pub fn new(n_prices: usize, n_agents: usize, augmented: bool) -> Result<Self> {
        if n_prices == 0 || n_agents == 0 {
            return Err(Error::InvalidArgument(
                "need at least one price and one agent".into(),
            ));
        }
        let base_count = (0..n_agents)
            .try_fold(1usize, |acc, _| acc.checked_mul(n_prices))
            .ok_or_else(|| {
                Error::ResourceLimit(format!("{n_prices}^{n_agents} states overflow"))
            })?;
        let codec = Self {
            n_prices,
            n_agents,
            augmented,
            base_count,
        };
        codec
            .flag_count()
            .checked_mul(base_count)
            .ok_or_else(|| Error::ResourceLimit("state count overflows".into()))?;
        Ok(codec)
    }

    pub fn n_prices(&self) -> usize {
        self.n_prices
    }
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }
    pub fn is_augmented(&self) -> bool {
        self.augmented
    }
    /// Price profiles only, `m^n`.
    pub fn base_count(&self) -> usize {
        self.base_count
    }

    pub fn flag_count(&self) -> usize {
        if self.augmented {
            4 + 2 * self.n_prices
        } else {
            1
        }
    }

    pub fn total_state_count(&self) -> usize {
        self.flag_count() * self.base_count
    }

    fn profile_index(&self, prices: &[usize]) -> usize {
        prices
            .iter()
            .rev()
            .fold(0, |acc, &p| acc * self.n_prices + p)
    }

    fn flag_block(
        &self,
        first_period: bool,
        first_drop: bool,
        own: Option<usize>,
        second_drop: bool,
    ) -> usize {
        let m = self.n_prices;
        if first_period {
            return 1;
        }
        if !first_drop {
            return 0;
        }
        let offset = if second_drop { 2 + 1 + m } else { 2 };
        match own {
            None => offset,
            Some(k) => offset + 1 + k,
        }
    }

    pub fn encode(&self, view: &StateView) -> Result<usize> {
        if view.prices.len() != self.n_agents {
            return Err(Error::DimensionMismatch {
                expected: format!("{} prices", self.n_agents),
                got: format!("{}", view.prices.len()),
            });
        }
        let plain = !view.first_period
            && !view.first_drop
            && !view.second_drop
            && view.own_drop_index.is_none();
        if !view.is_admissible(self.n_prices) || (!self.augmented && !plain) {
            return Err(Error::InvalidArgument(format!(
                "inadmissible state {view:?}"
            )));
        }
        let block = self.flag_block(
            view.first_period,
            view.first_drop,
            view.own_drop_index,
            view.second_drop,
        );
        Ok(block * self.base_count + self.profile_index(&view.prices))
    }

    /// Index of agent `agent`'s view without building it. The state must be
    /// admissible for this codec.
    #[inline]
    pub fn encode_agent(&self, state: &EnvState, agent: usize) -> usize {
        let block = if self.augmented {
            self.flag_block(
                state.mech_first_period,
                state.first_drop_occurred,
                state.first_drop_price_index[agent],
                state.second_drop_occurred,
            )
        } else {
            0
        };
        block * self.base_count + self.profile_index(&state.last_price_indices)
    }

    pub fn decode(&self, index: usize) -> Result<StateView> {
        if index >= self.total_state_count() {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.total_state_count(),
            });
        }
        let m = self.n_prices;
        let block = index / self.base_count;
        let mut rest = index % self.base_count;
        let mut prices = Vec::with_capacity(self.n_agents);
        for _ in 0..self.n_agents {
            prices.push(rest % m);
            rest /= m;
        }
        let (first_period, first_drop, own_drop_index, second_drop) = match block {
            0 => (false, false, None, false),
            1 => (true, false, None, false),
            b => {
                let b = b - 2;
                let second = b > m;
                let k = if second { b - (m + 1) } else { b };
                (false, true, k.checked_sub(1), second)
            }
        };
        Ok(StateView {
            prices,
            first_period,
            first_drop,
            own_drop_index,
            second_drop,
        })
    }
}

/// Per-period quantities of the most recent step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub period: usize,
    pub actions: Vec<usize>,
    pub prices: Vec<f64>,
    pub quantities: Vec<f64>,
    /// `(p - c) q` before any top-up.
    pub base_profits: Vec<f64>,
    /// Per-unit top-ups paid this period.
    pub topups: Vec<f64>,
    /// Base profit plus `topup * q`.
    pub rewards: Vec<f64>,
    pub phase: Option<Phase>,
}

/// When the activation flag is raised in the observed state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationFlag {
    /// Only in the state observed right after the activation period.
    #[default]
    FirstPeriod,
    /// Only in the state observed right before the activation period.
    BeforeActivation,
    /// From the activation period until the first drop.
    UntilFirstDrop,
}

#[derive(Debug, Clone)]
pub struct PricingEnv {
    activation_flag: ActivationFlag,
    grid: PriceGrid,
    params: MarketParams,
    codec: StateCodec,
    profit_table: Vec<f64>,
    quantity_table: Vec<f64>,
    mechanism: Option<MechanismState>,
    state: EnvState,
    period: usize,
    record: StepRecord,
}

impl PricingEnv {
    /// The state codec is augmented whenever `mechanism` is given; pass
    /// `augmented = true` to share one table layout between runs with and
    /// without the mechanism.
    pub fn new(
        grid: PriceGrid,
        params: MarketParams,
        mechanism: Option<MechanismConfig>,
        augmented: bool,
    ) -> Result<Self> {
        params.validate()?;
        let n = params.n_sellers();
        let codec = StateCodec::new(grid.len(), n, augmented || mechanism.is_some())?;
        let mechanism = mechanism
            .map(|cfg| MechanismState::new(cfg, n))
            .transpose()?;

        let base = codec.base_count();
        let mut profit_table = vec![0.0; base * n];
        let mut quantity_table = vec![0.0; base * n];
        let mut prices = vec![0.0; n];
        let mut shares = vec![0.0; n];
        for profile in 0..base {
            let mut rest = profile;
            for p in prices.iter_mut() {
                *p = grid.price(rest % grid.len());
                rest /= grid.len();
            }
            shares_unchecked(&prices, &params, &mut shares);
            for i in 0..n {
                quantity_table[profile * n + i] = shares[i];
                profit_table[profile * n + i] = (prices[i] - params.c[i]) * shares[i];
            }
        }
        Ok(Self {
            activation_flag: ActivationFlag::default(),
            grid,
            params,
            codec,
            profit_table,
            quantity_table,
            mechanism,
            state: EnvState::new(n),
            period: 0,
            record: StepRecord {
                actions: vec![0; n],
                prices: vec![0.0; n],
                quantities: vec![0.0; n],
                base_profits: vec![0.0; n],
                topups: vec![0.0; n],
                rewards: vec![0.0; n],
                ..StepRecord::default()
            },
        })
    }

    pub fn with_activation_flag(mut self, flag: ActivationFlag) -> Self {
        self.activation_flag = flag;
        self
    }

    pub fn n_agents(&self) -> usize {
        self.params.n_sellers()
    }
    pub fn n_actions(&self) -> usize {
        self.grid.len()
    }
    pub fn grid(&self) -> &PriceGrid {
        &self.grid
    }
    pub fn params(&self) -> &MarketParams {
        &self.params
    }
    pub fn codec(&self) -> &StateCodec {
        &self.codec
    }
    pub fn state(&self) -> &EnvState {
        &self.state
    }
    pub fn period(&self) -> usize {
        self.period
    }
    pub fn mechanism(&self) -> Option<&MechanismState> {
        self.mechanism.as_ref()
    }
    pub fn last_step(&self) -> &StepRecord {
        &self.record
    }

    #[inline]
    pub fn state_index(&self, agent: usize) -> usize {
        self.codec.encode_agent(&self.state, agent)
    }

    fn profile(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .rev()
            .fold(0, |acc, &a| acc * self.grid.len() + a)
    }

    /// Profit of agent `i` at a grid action profile, without the mechanism.
    pub fn base_profit(&self, actions: &[usize], i: usize) -> f64 {
        self.profit_table[self.profile(actions) * self.n_agents() + i]
    }

    /// Start a new trajectory at period 0 with the mechanism re-armed.
    pub fn reset(&mut self) {
        self.period = 0;
        self.state.last_price_indices.fill(0);
        self.state.clear_flags();
        if let Some(m) = self.mechanism.as_mut() {
            m.reset();
        }
    }

    /// Play one period.
    pub fn step(&mut self, actions: &[usize]) -> Result<&StepRecord> {
        let n = self.n_agents();
        if actions.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} actions"),
                got: format!("{}", actions.len()),
            });
        }
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.grid.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: self.grid.len(),
            });
        }
        let profile = self.profile(actions);
        let rec = &mut self.record;
        rec.period = self.period;
        rec.actions.copy_from_slice(actions);
        for i in 0..n {
            rec.prices[i] = self.grid.price(actions[i]);
            rec.quantities[i] = self.quantity_table[profile * n + i];
            rec.base_profits[i] = self.profit_table[profile * n + i];
        }
        rec.topups.fill(0.0);
        rec.phase = None;

        self.state.mech_first_period = false;
        if let Some(mech) = self.mechanism.as_mut() {
            let topups =
                mech.observe_period(&rec.prices, &rec.quantities, &rec.base_profits, self.period)?;
            rec.topups.copy_from_slice(topups);
            let phase = mech.phase();
            rec.phase = Some(phase);
            let tau = mech.config().activation_period;
            self.state.first_drop_occurred =
                matches!(phase, Phase::FirstDropped | Phase::SecondDropped);
            self.state.mech_first_period = match self.activation_flag {
                ActivationFlag::FirstPeriod => self.period == tau,
                ActivationFlag::BeforeActivation => self.period + 1 == tau,
                ActivationFlag::UntilFirstDrop => {
                    self.period >= tau && !self.state.first_drop_occurred
                }
            };
            self.state.second_drop_occurred = phase == Phase::SecondDropped;
            if mech.tau1() == Some(self.period) {
                for i in 0..n {
                    if mech.is_first_dropper(i) {
                        self.state.i_was_first_dropper[i] = true;
                        self.state.first_drop_price_index[i] = Some(actions[i]);
                    }
                }
            }
        }
        for i in 0..n {
            rec.rewards[i] = rec.base_profits[i] + rec.topups[i] * rec.quantities[i];
        }
        self.state.last_price_indices.copy_from_slice(actions);
        self.period += 1;
        Ok(&self.record)
    }
}
