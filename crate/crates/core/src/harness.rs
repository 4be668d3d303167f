//! Experiment orchestration: collusion training without the mechanism,
//! episodic training with it, greedy evaluation and aggregation.
//!
//! Seeding: simulation `k` draws every random number from
//! `ChaCha8Rng::seed_from_u64(base_seed)` with stream `4k + role`, where role
//! 0 and 1 are the two agents, 2 drives the random first-period prices during
//! training and 3 the evaluation episode. Results therefore do not depend on
//! how simulations are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActivationFlag, PricingEnv};
use crate::equilibrium::nash_prices;
use crate::error::{Error, Result};
use crate::market::{MarketParams, PriceGrid};
use crate::mechanism::{MechanismConfig, Phase, Variant};
use crate::qlearning::{epsilon, Agent, AgentConfig};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    pub p_min: f64,
    pub p_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            points: 15,
            p_min: 1.0,
            p_max: 2.1,
        }
    }
}

impl GridConfig {
    pub fn build(&self) -> Result<PriceGrid> {
        PriceGrid::new(self.points, self.p_min, self.p_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismSettings {
    pub variant: Variant,
    /// Platform's cost estimate per seller; `None` uses the true costs.
    pub cost_estimate: Option<Vec<f64>>,
}

impl Default for MechanismSettings {
    fn default() -> Self {
        Self {
            variant: Variant::SimplifiedAi,
            cost_estimate: None,
        }
    }
}

/// Which clock drives ε during mechanism training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exploration {
    /// One iteration counter for the whole simulation.
    Global,
    /// The counter restarts at zero when mechanism training begins.
    PhaseReset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_simulations: usize,
    pub base_seed: u64,
    pub phase2_experiment_count: usize,
    pub episode_length: usize,
    pub mechanism_on_period: usize,
    /// Iteration cap for collusion training.
    pub max_iterations: u64,
    pub grid: GridConfig,
    pub market: MarketParams,
    pub agent: AgentConfig,
    pub mechanism: MechanismSettings,
    pub exploration: Exploration,
    /// Explore in the periods before activation as well.
    pub explore_before_activation: bool,
    pub activation_flag: ActivationFlag,
    /// First period of the pre-activation averaging window.
    pub pre_window_start: usize,
    /// Length of the post-activation averaging window at the episode end.
    pub eval_window: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_simulations: 1,
            base_seed: 0,
            phase2_experiment_count: 500_000,
            episode_length: 100,
            mechanism_on_period: 50,
            max_iterations: 50_000_000,
            grid: GridConfig::default(),
            market: MarketParams::baseline(),
            agent: AgentConfig::default(),
            mechanism: MechanismSettings::default(),
            exploration: Exploration::Global,
            explore_before_activation: false,
            activation_flag: ActivationFlag::default(),
            pre_window_start: 30,
            eval_window: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        self.agent.validate()?;
        self.grid.build()?;
        if self.n_simulations == 0 {
            return Err(Error::InvalidArgument(
                "n_simulations must be at least 1".into(),
            ));
        }
        if self.mechanism_on_period == 0 || self.mechanism_on_period >= self.episode_length {
            return Err(Error::InvalidArgument(format!(
                "mechanism_on_period {} must lie in [1, episode_length = {})",
                self.mechanism_on_period, self.episode_length
            )));
        }
        if self.pre_window_start >= self.mechanism_on_period {
            return Err(Error::InvalidArgument(
                "pre window must start before activation".into(),
            ));
        }
        if self.eval_window == 0
            || self.eval_window > self.episode_length - self.mechanism_on_period
        {
            return Err(Error::InvalidArgument(format!(
                "eval_window {} must lie in [1, {}]",
                self.eval_window,
                self.episode_length - self.mechanism_on_period
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument(
                "max_iterations must be positive".into(),
            ));
        }
        self.mechanism_config()?.validate()
    }

    pub fn mechanism_config(&self) -> Result<MechanismConfig> {
        let tau = self.mechanism_on_period;
        match self.mechanism.variant {
            Variant::SimplifiedAi => {
                let c = self
                    .mechanism
                    .cost_estimate
                    .clone()
                    .unwrap_or_else(|| self.market.c.clone());
                if c.len() != self.market.n_sellers() {
                    return Err(Error::DimensionMismatch {
                        expected: format!("{} cost estimates", self.market.n_sellers()),
                        got: format!("{}", c.len()),
                    });
                }
                Ok(MechanismConfig::simplified_ai(tau, c))
            }
            Variant::PlatformFull => Ok(MechanismConfig::platform_full(tau)),
            other => Err(Error::UnsupportedParameters(format!(
                "the pricing environment cannot run the {} rule",
                other.name()
            ))),
        }
    }
}

/// Random stream `role` of simulation `sim_id`.
pub fn sim_rng(base_seed: u64, sim_id: usize, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(sim_id as u64 * 4 + role);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: u64,
    /// Mean price of each seller over the greedy cycle reached from the final
    /// training state.
    pub greedy_prices: Vec<f64>,
    pub greedy_cycle_len: usize,
}

/// Trained agents of one simulation and the streams they continue with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Simulation {
    pub sim_id: usize,
    pub agents: Vec<Agent>,
    pub iteration: u64,
    pub report: ConvergenceReport,
    env_rng: ChaCha8Rng,
}

fn random_actions<R: Rng>(rng: &mut R, n: usize, m: usize, out: &mut [usize]) {
    for a in out.iter_mut().take(n) {
        *a = rng.random_range(0..m);
    }
}

/// Train both agents with the mechanism switched off until each greedy
/// policy has been stable for the convergence window, or the cap is hit.
pub fn train_phase1(config: &ExperimentConfig, sim_id: usize) -> Result<Simulation> {
    config.validate()?;
    let grid = config.grid.build()?;
    let mut env = PricingEnv::new(grid, config.market.clone(), None, true)?;
    let n = env.n_agents();
    let (ns, na) = (env.codec().total_state_count(), env.n_actions());
    let mut agents = (0..n)
        .map(|i| {
            Agent::new(
                config.agent,
                ns,
                na,
                sim_rng(config.base_seed, sim_id, i as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut env_rng = sim_rng(config.base_seed, sim_id, 2);

    let mut actions = vec![0; n];
    random_actions(&mut env_rng, n, na, &mut actions);
    env.step(&actions)?;
    let mut states: Vec<usize> = (0..n).map(|i| env.state_index(i)).collect();
    let mut next = states.clone();
    let mut rewards = vec![0.0; n];

    let mut t: u64 = 0;
    let converged = loop {
        for i in 0..n {
            actions[i] = agents[i].act(states[i], t);
        }
        rewards.copy_from_slice(&env.step(&actions)?.rewards);
        for i in 0..n {
            next[i] = env.state_index(i);
            agents[i].learn(states[i], actions[i], rewards[i], next[i], t)?;
        }
        std::mem::swap(&mut states, &mut next);
        t += 1;
        if agents.iter().all(|a| a.is_converged(t)) {
            break true;
        }
        if t >= config.max_iterations {
            break false;
        }
    };

    let (greedy_prices, greedy_cycle_len) = greedy_cycle(&mut env, &agents)?;
    Ok(Simulation {
        sim_id,
        agents,
        iteration: t,
        report: ConvergenceReport {
            converged,
            iterations: t,
            greedy_prices,
            greedy_cycle_len,
        },
        env_rng,
    })
}

/// Follow greedy play from the environment's current state until a state
/// repeats; return mean prices over the cycle and its length.
fn greedy_cycle(env: &mut PricingEnv, agents: &[Agent]) -> Result<(Vec<f64>, usize)> {
    let n = env.n_agents();
    let mut seen = std::collections::HashMap::new();
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut actions = vec![0; n];
    loop {
        let key: Vec<usize> = (0..n).map(|i| env.state_index(i)).collect();
        if let Some(&start) = seen.get(&key) {
            let cycle = &history[start..];
            let mean = (0..n)
                .map(|i| cycle.iter().map(|p| p[i]).sum::<f64>() / cycle.len() as f64)
                .collect();
            return Ok((mean, cycle.len()));
        }
        seen.insert(key.clone(), history.len());
        for i in 0..n {
            actions[i] = agents[i].greedy(key[i]);
        }
        history.push(env.step(&actions)?.prices.clone());
    }
}

/// Episodic training with the mechanism: random first-period prices, greedy
/// play with learning until activation, ε-greedy learning afterwards.
pub fn train_phase2(sim: &mut Simulation, config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    let grid = config.grid.build()?;
    let mut env = PricingEnv::new(
        grid,
        config.market.clone(),
        Some(config.mechanism_config()?),
        true,
    )?
    .with_activation_flag(config.activation_flag);
    let n = env.n_agents();
    let na = env.n_actions();
    let tau = config.mechanism_on_period;
    let clock_start = match config.exploration {
        Exploration::Global => 0,
        Exploration::PhaseReset => sim.iteration,
    };
    let beta = config.agent.beta;

    let mut actions = vec![0; n];
    let mut states = vec![0; n];
    let mut next = vec![0; n];
    let mut rewards = vec![0.0; n];
    for _ in 0..config.phase2_experiment_count {
        env.reset();
        random_actions(&mut sim.env_rng, n, na, &mut actions);
        env.step(&actions)?;
        for i in 0..n {
            states[i] = env.state_index(i);
        }
        for period in 1..config.episode_length {
            let t = sim.iteration;
            let explore = period >= tau || config.explore_before_activation;
            let eps = epsilon(beta, t - clock_start);
            for i in 0..n {
                actions[i] = if explore {
                    sim.agents[i].act_with(states[i], eps)
                } else {
                    sim.agents[i].greedy(states[i])
                };
            }
            rewards.copy_from_slice(&env.step(&actions)?.rewards);
            for i in 0..n {
                next[i] = env.state_index(i);
                sim.agents[i].learn(states[i], actions[i], rewards[i], next[i], t)?;
            }
            std::mem::swap(&mut states, &mut next);
            sim.iteration += 1;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub period: usize,
    pub prices: Vec<f64>,
    pub profits: Vec<f64>,
    pub topups: Vec<f64>,
    pub quantities: Vec<f64>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sim_id: usize,
    pub converged: bool,
    pub phase1: ConvergenceReport,
    pub cycle_detected: bool,
    /// Smallest period of the price sequence in the pre / post window;
    /// `None` if the window is not periodic.
    pub pre_period: Option<usize>,
    pub post_period: Option<usize>,
    pub avg_price_pre: Vec<f64>,
    pub avg_price_post: Vec<f64>,
    pub markup_pre: Vec<f64>,
    pub markup_post: Vec<f64>,
    /// Sum of `topup * q` over the evaluation episode.
    pub topup_total: f64,
    pub trajectory: Vec<TrajectoryRow>,
}

/// Smallest `k <= len / 2` with `seq[t] == seq[t - k]` throughout.
pub fn window_period<T: PartialEq>(seq: &[T]) -> Option<usize> {
    (1..=seq.len() / 2).find(|&k| (k..seq.len()).all(|t| seq[t] == seq[t - k]))
}

fn mean_prices(rows: &[TrajectoryRow], n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| rows.iter().map(|r| r.prices[i]).sum::<f64>() / rows.len() as f64)
        .collect()
}

/// `(p - p*) / p*` per seller.
pub fn markups(prices: &[f64], nash: &[f64]) -> Vec<f64> {
    prices.iter().zip(nash).map(|(p, s)| (p - s) / s).collect()
}

/// One greedy episode with the mechanism; no exploration, no learning.
pub fn evaluate(sim: &Simulation, config: &ExperimentConfig, nash: &[f64]) -> Result<RunRecord> {
    config.validate()?;
    let grid = config.grid.build()?;
    let mut env = PricingEnv::new(
        grid,
        config.market.clone(),
        Some(config.mechanism_config()?),
        true,
    )?
    .with_activation_flag(config.activation_flag);
    let n = env.n_agents();
    let mut rng = sim_rng(config.base_seed, sim.sim_id, 3);
    let mut actions = vec![0; n];
    random_actions(&mut rng, n, env.n_actions(), &mut actions);

    let mut trajectory = Vec::with_capacity(config.episode_length);
    let mut profiles = Vec::with_capacity(config.episode_length);
    let mut topup_total = 0.0;
    for period in 0..config.episode_length {
        if period > 0 {
            for i in 0..n {
                actions[i] = sim.agents[i].greedy(env.state_index(i));
            }
        }
        let rec = env.step(&actions)?;
        topup_total += rec
            .topups
            .iter()
            .zip(&rec.quantities)
            .map(|(t, q)| t * q)
            .sum::<f64>();
        profiles.push(rec.actions.clone());
        trajectory.push(TrajectoryRow {
            period,
            prices: rec.prices.clone(),
            profits: rec.rewards.clone(),
            topups: rec.topups.clone(),
            quantities: rec.quantities.clone(),
            phase: rec.phase.unwrap_or(Phase::Inactive),
        });
    }

    let pre = config.pre_window_start..config.mechanism_on_period;
    let post = config.episode_length - config.eval_window..config.episode_length;
    let pre_period = window_period(&profiles[pre.clone()]);
    let post_period = window_period(&profiles[post.clone()]);
    let avg_price_pre = mean_prices(&trajectory[pre], n);
    let avg_price_post = mean_prices(&trajectory[post], n);
    Ok(RunRecord {
        sim_id: sim.sim_id,
        converged: sim.report.converged,
        phase1: sim.report.clone(),
        cycle_detected: pre_period != Some(1) || post_period != Some(1),
        pre_period,
        post_period,
        markup_pre: markups(&avg_price_pre, nash),
        markup_post: markups(&avg_price_post, nash),
        avg_price_pre,
        avg_price_post,
        topup_total,
        trajectory,
    })
}

/// Nash prices of the configured market.
pub fn nash_reference(config: &ExperimentConfig) -> Result<Vec<f64>> {
    Ok(nash_prices(&config.market)?.prices)
}

fn unconverged_record(sim: &Simulation) -> RunRecord {
    RunRecord {
        sim_id: sim.sim_id,
        converged: false,
        phase1: sim.report.clone(),
        cycle_detected: false,
        pre_period: None,
        post_period: None,
        avg_price_pre: Vec::new(),
        avg_price_post: Vec::new(),
        markup_pre: Vec::new(),
        markup_post: Vec::new(),
        topup_total: 0.0,
        trajectory: Vec::new(),
    }
}

/// Phase 2 and evaluation on a phase-1 result, training `sim` in place.
/// Unconverged simulations are recorded but not trained further.
pub fn finish(sim: &mut Simulation, config: &ExperimentConfig, nash: &[f64]) -> Result<RunRecord> {
    if !sim.report.converged {
        return Ok(unconverged_record(sim));
    }
    train_phase2(sim, config)?;
    evaluate(sim, config, nash)
}

/// The full pipeline for one simulation.
pub fn run_simulation(config: &ExperimentConfig, sim_id: usize, nash: &[f64]) -> Result<RunRecord> {
    finish(&mut train_phase1(config, sim_id)?, config, nash)
}

pub fn run_sequential(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let nash = nash_reference(config)?;
    (0..config.n_simulations)
        .map(|k| run_simulation(config, k, &nash))
        .collect()
}

#[cfg(feature = "parallel")]
pub fn run_parallel(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let nash = nash_reference(config)?;
    (0..config.n_simulations)
        .into_par_iter()
        .map(|k| run_simulation(config, k, &nash))
        .collect()
}

/// All simulations of `config`, in simulation order.
pub fn run_simulations(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    #[cfg(feature = "parallel")]
    {
        run_parallel(config)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_sequential(config)
    }
}

/// Collusion training for every simulation, in simulation order.
pub fn phase1_all(config: &ExperimentConfig) -> Result<Vec<Simulation>> {
    let ids = 0..config.n_simulations;
    #[cfg(feature = "parallel")]
    let sims = ids
        .into_par_iter()
        .map(|k| train_phase1(config, k))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let sims = ids.map(|k| train_phase1(config, k)).collect();
    sims
}

/// `finish` for each simulation, training them in place.
pub fn finish_all(sims: &mut [Simulation], config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let nash = nash_reference(config)?;
    #[cfg(feature = "parallel")]
    let records = sims
        .par_iter_mut()
        .map(|s| finish(s, config, &nash))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let records = sims.iter_mut().map(|s| finish(s, config, &nash)).collect();
    records
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryStatus {
    Ok,
    /// Every record was excluded.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: SummaryStatus,
    pub nash: Vec<f64>,
    pub avg_pre: Vec<f64>,
    pub avg_post: Vec<f64>,
    pub markup_pre: Vec<f64>,
    pub markup_post: Vec<f64>,
    /// `100 * (1 - markup_post / markup_pre)` per seller.
    pub improvement_pct: Vec<f64>,
    /// Mean greedy price after collusion training, converged runs only.
    pub avg_phase1: Vec<f64>,
    pub n_total: usize,
    pub n_converged: usize,
    pub n_cycles: usize,
    pub n_used: usize,
    /// Over every evaluated episode, cycles included.
    pub topup_total: f64,
}

impl Summary {
    /// Mean of the per-seller values.
    pub fn mean_improvement_pct(&self) -> f64 {
        mean(&self.improvement_pct)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn column_means<'a>(rows: impl Iterator<Item = &'a Vec<f64>>, n: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n];
    let mut count = 0usize;
    for r in rows {
        for (s, v) in sum.iter_mut().zip(r) {
            *s += v;
        }
        count += 1;
    }
    sum.iter().map(|s| s / count as f64).collect()
}

/// Means over converged, cycle-free records. Sums are taken in simulation
/// order so the result does not depend on the order of `records`.
pub fn aggregate(records: &[RunRecord], nash: &[f64]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot aggregate zero records".into(),
        ));
    }
    let n = nash.len();
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.sim_id);
    let converged: Vec<&RunRecord> = sorted.iter().copied().filter(|r| r.converged).collect();
    let used: Vec<&RunRecord> = converged
        .iter()
        .copied()
        .filter(|r| !r.cycle_detected)
        .collect();
    let topup_total = converged.iter().map(|r| r.topup_total).sum();
    let avg_phase1 = if converged.is_empty() {
        Vec::new()
    } else {
        column_means(converged.iter().map(|r| &r.phase1.greedy_prices), n)
    };
    let mut summary = Summary {
        status: SummaryStatus::Empty,
        nash: nash.to_vec(),
        avg_pre: Vec::new(),
        avg_post: Vec::new(),
        markup_pre: Vec::new(),
        markup_post: Vec::new(),
        improvement_pct: Vec::new(),
        avg_phase1,
        n_total: records.len(),
        n_converged: converged.len(),
        n_cycles: converged.len() - used.len(),
        n_used: used.len(),
        topup_total,
    };
    if used.is_empty() {
        return Ok(summary);
    }
    summary.status = SummaryStatus::Ok;
    summary.avg_pre = column_means(used.iter().map(|r| &r.avg_price_pre), n);
    summary.avg_post = column_means(used.iter().map(|r| &r.avg_price_post), n);
    summary.markup_pre = markups(&summary.avg_pre, nash);
    summary.markup_post = markups(&summary.avg_post, nash);
    summary.improvement_pct = summary
        .markup_pre
        .iter()
        .zip(&summary.markup_post)
        .map(|(pre, post)| 100.0 * (1.0 - post / pre))
        .collect();
    Ok(summary)
}

/// Per-period mean prices over the records `aggregate` would use.
pub fn average_series(records: &[RunRecord]) -> Vec<(usize, Vec<f64>)> {
    let mut used: Vec<&RunRecord> = records
        .iter()
        .filter(|r| r.converged && !r.cycle_detected)
        .collect();
    used.sort_by_key(|r| r.sim_id);
    let Some(first) = used.first() else {
        return Vec::new();
    };
    let n = first.avg_price_pre.len();
    (0..first.trajectory.len())
        .map(|t| {
            (
                t,
                column_means(used.iter().map(|r| &r.trajectory[t].prices), n),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cost: f64,
    /// Converged simulations.
    pub n_sims: usize,
    pub n_no_cycle: usize,
    /// Seller-averaged markup fractions before and after activation.
    pub markup: f64,
    pub markup_2spdr: f64,
    pub improvement_pct: f64,
    pub summary: Summary,
}

/// Mechanism training and evaluation for each symmetric cost estimate. The
/// collusion phase does not involve the estimate, so it runs once per
/// simulation and each estimate continues from a copy.
pub fn cost_sweep(config: &ExperimentConfig, estimates: &[f64]) -> Result<Vec<SweepRow>> {
    if let Some(bad) = estimates.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "cost estimate {bad} must be positive"
        )));
    }
    if estimates.is_empty() {
        return Ok(Vec::new());
    }
    config.validate()?;
    let nash = nash_reference(config)?;
    let sims = phase1_all(config)?;
    let n = config.market.n_sellers();
    let configs: Vec<ExperimentConfig> = estimates
        .iter()
        .map(|&c| {
            let mut cfg = config.clone();
            cfg.mechanism.variant = Variant::SimplifiedAi;
            cfg.mechanism.cost_estimate = Some(vec![c; n]);
            cfg
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|e| (0..sims.len()).map(move |s| (e, s)))
        .collect();
    let run = |&(e, s): &(usize, usize)| finish(&mut sims[s].clone(), &configs[e], &nash);
    #[cfg(feature = "parallel")]
    let records: Vec<RunRecord> = jobs.par_iter().map(run).collect::<Result<_>>()?;
    #[cfg(not(feature = "parallel"))]
    let records: Vec<RunRecord> = jobs.iter().map(run).collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(estimates.len());
    for (e, &cost) in estimates.iter().enumerate() {
        let chunk = &records[e * sims.len()..(e + 1) * sims.len()];
        let summary = aggregate(chunk, &nash)?;
        let (markup, markup_2spdr, improvement_pct) = if summary.status == SummaryStatus::Ok {
            (
                mean(&summary.markup_pre),
                mean(&summary.markup_post),
                summary.mean_improvement_pct(),
            )
        } else {
            (f64::NAN, f64::NAN, f64::NAN)
        };
        rows.push(SweepRow {
            cost,
            n_sims: summary.n_converged,
            n_no_cycle: summary.n_used,
            markup,
            markup_2spdr,
            improvement_pct,
            summary,
        });
    }
    Ok(rows)
}
