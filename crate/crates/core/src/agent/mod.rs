//! Online deep Q-learning controller.
//!
//! Each step: observe, pick an action epsilon-greedily, step the
//! environment, store the transition. When the memory fills, every stored
//! transition is replayed once in insertion order with a double-Q target and
//! an Adam update, then the memory is cleared. The target network tracks the
//! online network by a soft update after every step.

mod epsilon;
mod memory;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, EnvState, Environment, StepLogEntry, StepResult, TradeRecord};
use crate::market::FeatureWindow;
use crate::qnet::{
    adam_step, init_params, soft_update, AdamState, HeadActivation, NetDims, NetworkParams,
    QNetError, QValues, POSITION_INPUTS,
};

pub use epsilon::EpsilonGreedy;
pub use memory::ReplayMemory;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid hyperparameters: {0}")]
    Config(String),
    #[error(transparent)]
    QNet(#[from] QNetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Price-point PnL.
    #[default]
    Arithmetic,
    /// Log returns, commission taken relative to price.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub gamma: f64,
    pub lr: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub tau: f64,
    pub memory_capacity: usize,
    /// Write a checkpoint every this many replay cycles; 0 disables.
    pub checkpoint_every: usize,
    pub reward_mode: RewardMode,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            lr: 0.001,
            epsilon: 1.0,
            epsilon_decay: 0.995,
            epsilon_min: 0.01,
            tau: 0.001,
            memory_capacity: 480,
            checkpoint_every: 0,
            reward_mode: RewardMode::Arithmetic,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1]");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return fail("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail("epsilon must lie in [0, 1]");
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay < 1.0) {
            return fail("epsilon_decay must lie in (0, 1)");
        }
        if !(self.epsilon_min > 0.0 && self.epsilon_min <= 1.0) {
            return fail("epsilon_min must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return fail("tau must lie in [0, 1]");
        }
        if self.memory_capacity < 1 {
            return fail("memory_capacity must be at least 1");
        }
        Ok(())
    }
}

/// Network input for one state: the market window plus the normalized
/// position vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub market: FeatureWindow,
    pub position: [f64; POSITION_INPUTS],
}

impl Observation {
    pub fn q_values(&self, params: &NetworkParams) -> Result<QValues, QNetError> {
        params.forward(self.market.as_flat(), &self.position)
    }
}

/// Maps `[L, S, PnL]` to `[L/max, S/max, PnL/max|PnL seen so far|]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionNormalizer {
    max_contracts: f64,
    max_abs_pnl: f64,
}

impl PositionNormalizer {
    pub fn new(max_contracts: u32) -> Self {
        Self {
            max_contracts: f64::from(max_contracts.max(1)),
            max_abs_pnl: 0.0,
        }
    }

    pub fn observe(&mut self, state: &EnvState) -> Observation {
        let p = &state.position;
        self.max_abs_pnl = self.max_abs_pnl.max(p.pnl.abs());
        let pnl = if self.max_abs_pnl > 0.0 {
            p.pnl / self.max_abs_pnl
        } else {
            0.0
        };
        Observation {
            market: state.market.clone(),
            position: [
                f64::from(p.long) / self.max_contracts,
                f64::from(p.short) / self.max_contracts,
                pnl,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_state: Observation,
    pub terminal: bool,
}

/// Learning reward for one step: the immediate reward, plus the closed
/// episode's long-term PnL when this step closed a trade.
pub fn assemble_reward(result: &StepResult, mode: RewardMode) -> f64 {
    match mode {
        RewardMode::Arithmetic => {
            result.immediate_reward
                + result
                    .closed_trade
                    .as_ref()
                    .map_or(0.0, |t| t.long_term_pnl)
        }
        RewardMode::Log => {
            result.log_reward
                + result
                    .closed_trade
                    .as_ref()
                    .map_or(0.0, |t| t.long_term_log_return)
        }
    }
}

/// Epsilon-greedy choice. Returns the action and whether it was random.
pub fn select_action<R: Rng + ?Sized>(
    params: &NetworkParams,
    obs: &Observation,
    epsilon: &mut EpsilonGreedy,
    rng: &mut R,
) -> Result<(Action, bool), QNetError> {
    if epsilon.explore(rng) {
        Ok((Action::ALL[rng.gen_range(0..Action::ALL.len())], true))
    } else {
        Ok((obs.q_values(params)?.argmax(), false))
    }
}

/// `y = r + γ·Q_target(s′, argmax_a Q_online(s′, a))`, or `y = r` when terminal.
pub fn compute_target(
    online: &NetworkParams,
    target: &NetworkParams,
    transition: &Transition,
    gamma: f64,
) -> Result<f64, QNetError> {
    if transition.terminal {
        return Ok(transition.reward);
    }
    let best = transition.next_state.q_values(online)?.argmax();
    let bootstrap = transition.next_state.q_values(target)?.get(best);
    Ok(transition.reward + gamma * bootstrap)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReplayStats {
    pub transitions: usize,
    pub mean_loss: f64,
}

/// One incremental pass over the whole memory in insertion order, then clears it.
///
/// Each transition contributes `(y − Q(s, a))²` through the taken action's
/// output only.
pub fn replay_fit(
    online: &mut NetworkParams,
    target: &NetworkParams,
    memory: &mut ReplayMemory,
    adam: &mut AdamState,
    hyper: &HyperParams,
) -> Result<ReplayStats, QNetError> {
    let mut total_loss = 0.0;
    for transition in memory.iter() {
        let y = compute_target(online, target, transition, hyper.gamma)?;
        let (q, cache) = online.forward_cached(
            transition.state.market.as_flat(),
            &transition.state.position,
        )?;
        let residual = q.get(transition.action) - y;
        total_loss += residual * residual;

        let mut output_grad = [0.0; 3];
        output_grad[transition.action.index()] = 2.0 * residual;
        let grads = online.backward(&cache, &output_grad);
        adam_step(online, &grads, adam, hyper.lr)?;
    }
    let stats = ReplayStats {
        transitions: memory.len(),
        mean_loss: if memory.is_empty() {
            0.0
        } else {
            total_loss / memory.len() as f64
        },
    };
    memory.clear();
    Ok(stats)
}

/// Online and target networks with their optimizer, exploration and memory.
#[derive(Debug, Clone)]
pub struct Agent {
    pub online: NetworkParams,
    pub target: NetworkParams,
    pub adam: AdamState,
    pub epsilon: EpsilonGreedy,
    pub memory: ReplayMemory,
    pub normalizer: PositionNormalizer,
    pub hyper: HyperParams,
    rng: ChaCha8Rng,
    replay_cycles: usize,
}

impl Agent {
    /// Target starts as an exact copy of the online network.
    pub fn new(
        dims: NetDims,
        head: HeadActivation,
        hyper: HyperParams,
        max_contracts: u32,
        seed: u64,
    ) -> Result<Self, AgentError> {
        hyper.validate()?;
        let online = init_params(dims, head, seed);
        Ok(Self::with_params(online, hyper, max_contracts, seed))
    }

    pub fn with_params(
        online: NetworkParams,
        hyper: HyperParams,
        max_contracts: u32,
        seed: u64,
    ) -> Self {
        Self {
            target: online.clone(),
            adam: AdamState::new(&online),
            online,
            epsilon: EpsilonGreedy::new(hyper.epsilon, hyper.epsilon_decay, hyper.epsilon_min),
            memory: ReplayMemory::new(hyper.memory_capacity),
            normalizer: PositionNormalizer::new(max_contracts),
            hyper,
            // distinct stream from the parameter initialization
            rng: ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5851_F42D_4C95_7F2D)),
            replay_cycles: 0,
        }
    }

    /// Replaces the exploration stream, e.g. to replay a known sequence.
    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    pub fn replay_cycles(&self) -> usize {
        self.replay_cycles
    }

    pub fn act(&mut self, obs: &Observation) -> Result<(Action, bool), QNetError> {
        select_action(&self.online, obs, &mut self.epsilon, &mut self.rng)
    }

    /// Stores a transition; replays the memory when that fills it.
    pub fn remember(&mut self, transition: Transition) -> Result<Option<ReplayStats>, QNetError> {
        if self.memory.push(transition) {
            self.replay().map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn replay(&mut self) -> Result<ReplayStats, QNetError> {
        let stats = replay_fit(
            &mut self.online,
            &self.target,
            &mut self.memory,
            &mut self.adam,
            &self.hyper,
        )?;
        self.replay_cycles += 1;
        Ok(stats)
    }

    pub fn update_target(&mut self) -> Result<(), QNetError> {
        soft_update(&mut self.target, &self.online, self.hyper.tau)
    }
}

/// Step log, trades and per-step prices of one pass over the data.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub steps: Vec<StepLogEntry>,
    pub trades: Vec<TradeRecord>,
    /// Position still open when the run ended, valued at the last price.
    pub open_trade: Option<TradeRecord>,
    /// `(t + span, close at t + span)` for every step, i.e. the bar at which
    /// the step's reward is realized.
    pub marks: Vec<(usize, f64)>,
}

impl RunLog {
    fn record(&mut self, env: &Environment, step_t: usize, result: &StepResult) {
        let entry = env.log_entry(step_t, result);
        if let Some(trade) = &result.closed_trade {
            self.trades.push(trade.clone());
        }
        let t_end = result.next_state.t;
        self.marks.push((t_end, env.price(t_end)));
        self.steps.push(entry);
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.immediate_reward).collect()
    }

    pub fn total_pnl(&self) -> f64 {
        self.rewards().iter().sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct OnlineRun {
    pub log: RunLog,
    /// Actions as chosen by the agent, before the position cap.
    pub chosen: Vec<Action>,
    pub explorations: u32,
    pub replay_cycles: usize,
    pub replay_losses: Vec<f64>,
    pub checkpoints: Vec<(usize, NetworkParams)>,
}

/// Runs the online learning loop from the environment's current state until
/// the data ends or `max_steps` decisions have been made.
pub fn online_learn(
    env: &mut Environment,
    agent: &mut Agent,
    max_steps: Option<usize>,
) -> Result<OnlineRun, AgentError> {
    let mut run = OnlineRun::default();
    let limit = max_steps.unwrap_or(usize::MAX);
    if limit == 0 || env.is_done() {
        run.log.open_trade = env.open_trade();
        return Ok(run);
    }

    let mut obs = agent.normalizer.observe(env.state());
    let mut taken = 0;
    while taken < limit && !env.is_done() {
        let step_t = env.state().t;
        let (action, _) = agent.act(&obs)?;
        let result = env.step(action);
        run.log.record(env, step_t, &result);
        run.chosen.push(action);
        taken += 1;

        let next_obs = agent.normalizer.observe(&result.next_state);
        let transition = Transition {
            state: obs,
            action,
            reward: assemble_reward(&result, agent.hyper.reward_mode),
            next_state: next_obs.clone(),
            terminal: result.done,
        };
        if let Some(stats) = agent.remember(transition)? {
            run.replay_losses.push(stats.mean_loss);
            let every = agent.hyper.checkpoint_every;
            if every > 0 && agent.replay_cycles().is_multiple_of(every) {
                run.checkpoints
                    .push((agent.replay_cycles(), agent.online.clone()));
            }
        }
        agent.update_target()?;
        obs = next_obs;
    }

    if !agent.memory.is_empty() {
        let stats = agent.replay()?;
        run.replay_losses.push(stats.mean_loss);
    }
    run.log.open_trade = env.open_trade();
    run.explorations = agent.epsilon.explorations();
    run.replay_cycles = agent.replay_cycles();
    Ok(run)
}

/// Drives the environment with an arbitrary policy, without learning.
pub fn run_policy<F>(env: &mut Environment, max_steps: Option<usize>, mut policy: F) -> RunLog
where
    F: FnMut(&EnvState) -> Action,
{
    let mut log = RunLog::default();
    let limit = max_steps.unwrap_or(usize::MAX);
    let mut taken = 0;
    while taken < limit && !env.is_done() {
        let step_t = env.state().t;
        let action = policy(env.state());
        let result = env.step(action);
        log.record(env, step_t, &result);
        taken += 1;
    }
    log.open_trade = env.open_trade();
    log
}
