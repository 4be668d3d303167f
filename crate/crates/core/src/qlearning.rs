//! Tabular Q-learning with exponentially decaying ε-greedy exploration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CONVERGENCE_WINDOW: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub seed: u64,
    /// Iterations without any greedy-action change before an agent counts as
    /// converged.
    pub convergence_window: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.15,
            beta: 4e-6,
            delta: 0.95,
            seed: 0,
            convergence_window: DEFAULT_CONVERGENCE_WINDOW,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if !(self.delta >= 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in [0, 1), got {}",
                self.delta
            )));
        }
        if self.convergence_window == 0 {
            return Err(Error::InvalidArgument(
                "convergence window must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Exploration probability `exp(-beta * iteration)`.
pub fn epsilon(beta: f64, iteration: u64) -> f64 {
    (-beta * iteration as f64).exp()
}

/// Dense state-by-action value table with a cached greedy action per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
    argmax: Vec<u32>,
    last_change_iteration: u64,
}

impl QTable {
    /// Zero-initialised table.
    pub fn new(n_states: usize, n_actions: usize) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument(
                "a Q-table needs at least one state and one action".into(),
            ));
        }
        if n_actions > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "{n_actions} actions exceed the supported range"
            )));
        }
        let cells = n_states.checked_mul(n_actions).ok_or_else(|| {
            Error::ResourceLimit(format!("{n_states} x {n_actions} table overflows"))
        })?;
        Ok(Self {
            n_states,
            n_actions,
            values: vec![0.0; cells],
            argmax: vec![0; n_states],
            last_change_iteration: 0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }
    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
    pub fn last_change_iteration(&self) -> u64 {
        self.last_change_iteration
    }

    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.n_actions + action]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.values[state * self.n_actions..(state + 1) * self.n_actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Greedy action, ties broken towards the lowest index.
    pub fn greedy(&self, state: usize) -> usize {
        self.argmax[state] as usize
    }

    pub fn max_value(&self, state: usize) -> f64 {
        self.value(state, self.greedy(state))
    }

    fn check(&self, state: usize, action: usize) -> Result<()> {
        if state >= self.n_states {
            return Err(Error::IndexOutOfRange {
                index: state,
                len: self.n_states,
            });
        }
        if action >= self.n_actions {
            return Err(Error::IndexOutOfRange {
                index: action,
                len: self.n_actions,
            });
        }
        Ok(())
    }

    /// `Q(s,a) <- (1 - alpha) Q(s,a) + alpha (r + delta max Q(s', .))`.
    pub fn update(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
        config: &AgentConfig,
        iteration: u64,
    ) -> Result<()> {
        if !reward.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite reward {reward}"
            )));
        }
        self.check(state, action)?;
        self.check(next_state, 0)?;
        let target = reward + config.delta * self.max_value(next_state);
        let cell = &mut self.values[state * self.n_actions + action];
        *cell = (1.0 - config.alpha) * *cell + config.alpha * target;

        let best = first_argmax(self.row(state)) as u32;
        if best != self.argmax[state] {
            self.argmax[state] = best;
            self.last_change_iteration = iteration;
        }
        Ok(())
    }

    pub fn is_converged(&self, iteration: u64, window: u64) -> bool {
        iteration.saturating_sub(self.last_change_iteration) >= window
    }

    /// Rebuild the greedy cache after the values were replaced wholesale.
    fn refresh_argmax(&mut self) {
        for s in 0..self.n_states {
            self.argmax[s] = first_argmax(self.row(s)) as u32;
        }
    }

    /// Rows of `(state, action, value)` for dumping learned strategies.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (k / self.n_actions, k % self.n_actions, v))
    }

    /// Rebuild a table from a dump, recomputing the greedy cache.
    pub fn from_values(n_states: usize, n_actions: usize, values: Vec<f64>) -> Result<Self> {
        let mut table = Self::new(n_states, n_actions)?;
        if values.len() != table.values.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} values", table.values.len()),
                got: format!("{}", values.len()),
            });
        }
        table.values = values;
        table.refresh_argmax();
        Ok(table)
    }
}

fn first_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = a;
        }
    }
    best
}

/// ε-greedy choice. One uniform draw decides between exploring and
/// exploiting; exploring draws a second, uniform action.
pub fn choose_action<R: Rng + ?Sized>(
    table: &QTable,
    state: usize,
    epsilon: f64,
    rng: &mut R,
) -> usize {
    if rng.random::<f64>() < epsilon {
        rng.random_range(0..table.n_actions)
    } else {
        table.greedy(state)
    }
}

/// A learning agent: its table plus a private random stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Agent {
    pub config: AgentConfig,
    pub table: QTable,
    rng: ChaCha8Rng,
}

impl Agent {
    pub fn new(
        config: AgentConfig,
        n_states: usize,
        n_actions: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            table: QTable::new(n_states, n_actions)?,
            rng,
        })
    }

    /// Agent whose stream is seeded from `config.seed`.
    pub fn seeded(config: AgentConfig, n_states: usize, n_actions: usize) -> Result<Self> {
        Self::new(
            config,
            n_states,
            n_actions,
            ChaCha8Rng::seed_from_u64(config.seed),
        )
    }

    /// ε-greedy action with ε from the decay schedule at `iteration`.
    pub fn act(&mut self, state: usize, iteration: u64) -> usize {
        let eps = epsilon(self.config.beta, iteration);
        choose_action(&self.table, state, eps, &mut self.rng)
    }

    /// ε-greedy action with an explicit ε.
    pub fn act_with(&mut self, state: usize, eps: f64) -> usize {
        choose_action(&self.table, state, eps, &mut self.rng)
    }

    pub fn greedy(&self, state: usize) -> usize {
        self.table.greedy(state)
    }

    pub fn learn(
        &mut self,
        state: usize,
        action: usize,
        reward: f64,
        next_state: usize,
        iteration: u64,
    ) -> Result<()> {
        self.table
            .update(state, action, reward, next_state, &self.config, iteration)
    }

    pub fn is_converged(&self, iteration: u64) -> bool {
        self.table
            .is_converged(iteration, self.config.convergence_window)
    }
}
