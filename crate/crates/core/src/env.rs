//! The trading MDP: a long/short position state machine over a bar series.
//!
//! Actions only change the position; market features are fixed by the data
//! (zero market impact). The action taken at `t` is rewarded with the price
//! move over `[t, t + T]`, net of commission on the contracts it traded.
//! Rewards are also accumulated per position episode and reported as the
//! episode's long-term PnL when the position direction changes.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market::{FeatureWindow, MarketData, MarketDataError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid action code {0}, expected 0 (hold), 1 (buy) or 2 (sell)")]
    InvalidAction(u8),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("insufficient data: {bars} bars, first decision needs index {first} and one more bar after it")]
    InsufficientData { bars: usize, first: usize },
    #[error(transparent)]
    Market(#[from] MarketDataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum Action {
    Hold = 0,
    Buy = 1,
    Sell = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Hold, Action::Buy, Action::Sell];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl TryFrom<u8> for Action {
    type Error = EnvError;

    fn try_from(code: u8) -> Result<Self, EnvError> {
        match code {
            0 => Ok(Action::Hold),
            1 => Ok(Action::Buy),
            2 => Ok(Action::Sell),
            other => Err(EnvError::InvalidAction(other)),
        }
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a.code()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Long,
    Short,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Long => 1.0,
            Direction::Short => -1.0,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Long => "long",
            Direction::Short => "short",
        })
    }
}

/// `[L, S, PnL]`: long contracts, short contracts, and the immediate reward
/// of the last step. At most one of `long` and `short` is non-zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PositionState {
    pub long: u32,
    pub short: u32,
    pub pnl: f64,
}

impl PositionState {
    pub fn direction(&self) -> Option<Direction> {
        match (self.long, self.short) {
            (0, 0) => None,
            (_, 0) => Some(Direction::Long),
            _ => Some(Direction::Short),
        }
    }

    pub fn contracts(&self) -> u32 {
        self.long + self.short
    }

    pub fn as_array(&self) -> [f64; 3] {
        [f64::from(self.long), f64::from(self.short), self.pnl]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommissionMode {
    /// Commission times every contract bought or sold, counting both legs of
    /// a reversal.
    #[default]
    PerContract,
    /// A flat commission for each executed buy or sell.
    PerAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exposure {
    /// The price move is multiplied by the number of contracts held.
    #[default]
    ContractsHeld,
    /// Any open position earns exactly one price move.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub max_contracts: u32,
    pub commission: f64,
    pub commission_mode: CommissionMode,
    pub exposure: Exposure,
    /// Bars between consecutive decisions.
    pub step_span: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            max_contracts: 5,
            commission: 2.0,
            commission_mode: CommissionMode::PerContract,
            exposure: Exposure::ContractsHeld,
            step_span: 1,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_contracts < 1 {
            return Err(EnvError::Config("max_contracts must be at least 1".into()));
        }
        if !self.commission.is_finite() || self.commission < 0.0 {
            return Err(EnvError::Config("commission must be non-negative".into()));
        }
        if self.step_span < 1 {
            return Err(EnvError::Config("step_span must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub position: PositionState,
    pub market: FeatureWindow,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub direction: Direction,
    pub open_t: usize,
    pub close_t: usize,
    pub contracts: u32,
    pub long_term_pnl: f64,
    /// Same episode accumulated from log-return rewards.
    #[serde(skip)]
    pub long_term_log_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: EnvState,
    /// Action after the position cap was applied.
    pub executed: Action,
    /// Reward in price points.
    pub immediate_reward: f64,
    /// Reward as a log return, with commission expressed relative to price.
    pub log_reward: f64,
    pub closed_trade: Option<TradeRecord>,
    pub done: bool,
}

/// One line of the JSON-lines step log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogEntry {
    pub t: usize,
    pub action: Action,
    #[serde(rename = "L")]
    pub long: u32,
    #[serde(rename = "S")]
    pub short: u32,
    pub immediate_reward: f64,
    pub accumulated_episode_pnl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed_trade: Option<TradeRecord>,
}

/// Downgrades a buy at the long cap (or a sell at the short cap) to a hold.
pub fn clamp_action(position: &PositionState, action: Action, config: &EnvConfig) -> Action {
    match action {
        Action::Buy if position.long >= config.max_contracts => Action::Hold,
        Action::Sell if position.short >= config.max_contracts => Action::Hold,
        a => a,
    }
}

/// Position after executing an (already clamped) action, and the number of
/// contracts traded to get there. Opposite-side actions close the whole
/// position and open exactly one contract the other way.
pub fn apply_action(position: &PositionState, action: Action) -> (u32, u32, u32) {
    let (l, s) = (position.long, position.short);
    match action {
        Action::Hold => (l, s, 0),
        Action::Buy if s > 0 => (1, 0, s + 1),
        Action::Buy => (l + 1, 0, 1),
        Action::Sell if l > 0 => (0, 1, l + 1),
        Action::Sell => (0, s + 1, 1),
    }
}

pub fn episode_pnl(trades: &[TradeRecord]) -> f64 {
    trades.iter().map(|t| t.long_term_pnl).sum()
}

#[derive(Debug, Clone, PartialEq)]
struct Episode {
    direction: Direction,
    open_t: usize,
    pnl: f64,
    log_return: f64,
}

/// A single-instrument environment over shared, immutable market data.
#[derive(Debug, Clone)]
pub struct Environment {
    market: Arc<MarketData>,
    config: EnvConfig,
    state: EnvState,
    episode: Option<Episode>,
    done: bool,
}

impl Environment {
    /// Creates the environment already reset to its first decision point.
    pub fn new(market: Arc<MarketData>, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        let state = Self::initial_state(&market, &config)?;
        Ok(Self {
            market,
            config,
            state,
            episode: None,
            done: false,
        })
    }

    fn initial_state(market: &MarketData, config: &EnvConfig) -> Result<EnvState, EnvError> {
        let first = market.first_decision_index();
        if first + config.step_span >= market.len() {
            return Err(EnvError::InsufficientData {
                bars: market.len(),
                first,
            });
        }
        Ok(EnvState {
            position: PositionState::default(),
            market: market.window(first)?,
            t: first,
        })
    }

    /// Flat position at the first bar with a complete feature window.
    pub fn reset(&mut self) -> EnvState {
        self.state = Self::initial_state(&self.market, &self.config)
            .expect("validated when the environment was created");
        self.episode = None;
        self.done = false;
        self.state.clone()
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn market(&self) -> &Arc<MarketData> {
        &self.market
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn price(&self, t: usize) -> f64 {
        self.market.closes()[t]
    }

    /// PnL accumulated so far by the open position episode.
    pub fn accumulated_episode_pnl(&self) -> f64 {
        self.episode.as_ref().map_or(0.0, |e| e.pnl)
    }

    /// Number of decisions left before the data runs out.
    pub fn remaining_steps(&self) -> usize {
        if self.done {
            return 0;
        }
        (self.market.len() - 1 - self.state.t) / self.config.step_span
    }

    pub fn step(&mut self, action: Action) -> StepResult {
        let span = self.config.step_span;
        let t = self.state.t;
        if self.done || t + span >= self.market.len() {
            self.done = true;
            return StepResult {
                next_state: self.state.clone(),
                executed: Action::Hold,
                immediate_reward: 0.0,
                log_reward: 0.0,
                closed_trade: None,
                done: true,
            };
        }

        let before = self.state.position;
        let executed = clamp_action(&before, action, &self.config);
        let (long, short, traded) = apply_action(&before, executed);
        let after = PositionState {
            long,
            short,
            pnl: 0.0,
        };

        let cost = match self.config.commission_mode {
            CommissionMode::PerContract => self.config.commission * f64::from(traded),
            CommissionMode::PerAction if traded > 0 => self.config.commission,
            CommissionMode::PerAction => 0.0,
        };
        let exposure = match (after.direction(), self.config.exposure) {
            (None, _) => 0.0,
            (Some(d), Exposure::ContractsHeld) => d.sign() * f64::from(after.contracts()),
            (Some(d), Exposure::Unit) => d.sign(),
        };
        let (p0, p1) = (self.price(t), self.price(t + span));
        let immediate_reward = exposure * (p1 - p0) - cost;
        let log_reward = exposure * (p1.ln() - p0.ln()) - cost / p0;

        let mut closed_trade = None;
        if before.direction() != after.direction() {
            if let Some(ep) = self.episode.take() {
                closed_trade = Some(TradeRecord {
                    direction: ep.direction,
                    open_t: ep.open_t,
                    close_t: t,
                    contracts: before.contracts(),
                    long_term_pnl: ep.pnl,
                    long_term_log_return: ep.log_return,
                });
            }
            if let Some(direction) = after.direction() {
                self.episode = Some(Episode {
                    direction,
                    open_t: t,
                    pnl: 0.0,
                    log_return: 0.0,
                });
            }
        }
        if let Some(ep) = self.episode.as_mut() {
            ep.pnl += immediate_reward;
            ep.log_return += log_reward;
        }

        let next_t = t + span;
        self.done = next_t + span >= self.market.len();
        self.state = EnvState {
            position: PositionState {
                pnl: immediate_reward,
                ..after
            },
            market: self
                .market
                .window(next_t)
                .expect("windows exist for every index after the first decision"),
            t: next_t,
        };

        StepResult {
            next_state: self.state.clone(),
            executed,
            immediate_reward,
            log_reward,
            closed_trade,
            done: self.done,
        }
    }

    /// The open position as a trade closed at the current bar, without
    /// commission. Used to report positions still open when data runs out.
    pub fn open_trade(&self) -> Option<TradeRecord> {
        self.episode.as_ref().map(|ep| TradeRecord {
            direction: ep.direction,
            open_t: ep.open_t,
            close_t: self.state.t,
            contracts: self.state.position.contracts(),
            long_term_pnl: ep.pnl,
            long_term_log_return: ep.log_return,
        })
    }

    /// Step-log line for a step that has just been taken.
    pub fn log_entry(&self, step_t: usize, result: &StepResult) -> StepLogEntry {
        StepLogEntry {
            t: step_t,
            action: result.executed,
            long: result.next_state.position.long,
            short: result.next_state.position.short,
            immediate_reward: result.immediate_reward,
            accumulated_episode_pnl: self.accumulated_episode_pnl(),
            closed_trade: result.closed_trade.clone(),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::market::{Bar, IndicatorConfig};
    use chrono::{Duration, TimeZone, Utc};

    /// Market whose first decision lands at index 26 (window 1), followed by
    /// the given prices from that index on.
    pub(crate) fn scripted_market(tail: &[f64]) -> Arc<MarketData> {
        let t0 = Utc.with_ymd_and_hms(2018, 11, 1, 0, 0, 0).unwrap();
        let mut closes: Vec<f64> = (0..26).map(|i| 100.0 + (i % 3) as f64).collect();
        closes.extend_from_slice(tail);
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &c)| Bar::from_price(t0 + Duration::days(i as i64), Duration::days(1), c))
            .collect();
        Arc::new(MarketData::from_bars(bars, &IndicatorConfig::default(), 1).unwrap())
    }

    fn worked_example_env() -> Environment {
        let cfg = EnvConfig {
            commission: 5.0,
            commission_mode: CommissionMode::PerAction,
            ..EnvConfig::default()
        };
        Environment::new(
            scripted_market(&[1000.0, 1055.0, 1085.0, 1075.0, 1075.0]),
            cfg,
        )
        .unwrap()
    }

    #[test]
    fn reset_is_flat_at_first_window() {
        let mut env = worked_example_env();
        let s = env.reset();
        assert_eq!(s.position.as_array(), [0.0, 0.0, 0.0]);
        assert_eq!(s.t, 26);
        assert_eq!(s.market.end_index(), 26);
    }

    #[test]
    fn worked_example() {
        let mut env = worked_example_env();

        let r = env.step(Action::Buy);
        assert_eq!(r.next_state.position.as_array(), [1.0, 0.0, 50.0]);
        assert_eq!(r.immediate_reward, 50.0);
        assert!(r.closed_trade.is_none());

        let r = env.step(Action::Hold);
        assert_eq!(r.next_state.position.as_array(), [1.0, 0.0, 30.0]);
        assert!(r.closed_trade.is_none());

        let r = env.step(Action::Sell);
        assert_eq!(r.next_state.position.as_array(), [0.0, 1.0, 5.0]);
        let trade = r.closed_trade.unwrap();
        assert_eq!(trade.long_term_pnl, 80.0);
        assert_eq!(trade.direction, Direction::Long);
        assert_eq!((trade.open_t, trade.close_t, trade.contracts), (26, 28, 1));
        assert_eq!(env.accumulated_episode_pnl(), 5.0);
        assert!(!r.done);

        let r = env.step(Action::Hold);
        assert!(r.done);
        let residual = env.open_trade().unwrap();
        assert_eq!(residual.direction, Direction::Short);
        assert_eq!(residual.long_term_pnl, 5.0);
    }

    #[test]
    fn stepping_past_the_end_is_done_without_reward() {
        let mut env = worked_example_env();
        for _ in 0..4 {
            env.step(Action::Buy);
        }
        assert!(env.is_done());
        let pos = env.state().position;
        let r = env.step(Action::Sell);
        assert!(r.done);
        assert_eq!(r.immediate_reward, 0.0);
        assert_eq!(r.next_state.position, pos);
    }

    #[test]
    fn clamp_cases() {
        let cfg = EnvConfig::default();
        let pos = |long, short| PositionState {
            long,
            short,
            pnl: 0.0,
        };
        assert_eq!(clamp_action(&pos(5, 0), Action::Buy, &cfg), Action::Hold);
        assert_eq!(clamp_action(&pos(0, 0), Action::Buy, &cfg), Action::Buy);
        assert_eq!(clamp_action(&pos(0, 4), Action::Sell, &cfg), Action::Sell);
        assert_eq!(clamp_action(&pos(0, 5), Action::Sell, &cfg), Action::Hold);
        assert_eq!(clamp_action(&pos(0, 5), Action::Buy, &cfg), Action::Buy);
    }

    #[test]
    fn critical_sell_from_two_longs_opens_one_short() {
        let pos = PositionState {
            long: 2,
            short: 0,
            pnl: 0.41,
        };
        assert_eq!(apply_action(&pos, Action::Sell), (0, 1, 3));
    }

    #[test]
    fn per_contract_commission_counts_both_legs() {
        let cfg = EnvConfig {
            commission: 2.0,
            ..EnvConfig::default()
        };
        let mut env =
            Environment::new(scripted_market(&[10.0, 10.0, 10.0, 10.0, 10.0]), cfg).unwrap();
        assert_eq!(env.step(Action::Buy).immediate_reward, -2.0);
        assert_eq!(env.step(Action::Buy).immediate_reward, -2.0);
        // close two longs, open one short
        assert_eq!(env.step(Action::Sell).immediate_reward, -6.0);
    }

    #[test]
    fn exposure_modes() {
        let prices = [10.0, 11.0, 13.0, 13.0];
        let held = EnvConfig {
            commission: 0.0,
            ..EnvConfig::default()
        };
        let mut env = Environment::new(scripted_market(&prices), held).unwrap();
        env.step(Action::Buy);
        assert_eq!(env.step(Action::Buy).immediate_reward, 4.0);

        let unit = EnvConfig {
            exposure: Exposure::Unit,
            ..held
        };
        let mut env = Environment::new(scripted_market(&prices), unit).unwrap();
        env.step(Action::Buy);
        assert_eq!(env.step(Action::Buy).immediate_reward, 2.0);
    }

    #[test]
    fn log_reward_matches_definition() {
        let cfg = EnvConfig {
            commission: 1.0,
            ..EnvConfig::default()
        };
        let mut env = Environment::new(scripted_market(&[10.0, 12.0, 12.0]), cfg).unwrap();
        let r = env.step(Action::Sell);
        let expected = -(12f64.ln() - 10f64.ln()) - 0.1;
        assert!((r.log_reward - expected).abs() < 1e-15);
    }

    #[test]
    fn step_span_skips_bars() {
        let cfg = EnvConfig {
            commission: 0.0,
            step_span: 2,
            ..EnvConfig::default()
        };
        let mut env =
            Environment::new(scripted_market(&[10.0, 99.0, 12.0, 0.5, 15.0]), cfg).unwrap();
        assert_eq!(env.remaining_steps(), 2);
        let r = env.step(Action::Buy);
        assert_eq!(r.immediate_reward, 2.0);
        assert_eq!(r.next_state.t, 28);
        let r = env.step(Action::Hold);
        assert_eq!(r.immediate_reward, 3.0);
        assert!(r.done);
    }

    #[test]
    fn too_short_series_is_rejected() {
        assert!(matches!(
            Environment::new(scripted_market(&[10.0]), EnvConfig::default()),
            Err(EnvError::InsufficientData { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let bad = EnvConfig {
            max_contracts: 0,
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EnvConfig {
            commission: -1.0,
            ..EnvConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn episode_pnl_sums() {
        let trade = |pnl| TradeRecord {
            direction: Direction::Long,
            open_t: 0,
            close_t: 1,
            contracts: 1,
            long_term_pnl: pnl,
            long_term_log_return: 0.0,
        };
        assert_eq!(episode_pnl(&[]), 0.0);
        assert_eq!(episode_pnl(&[trade(80.0)]), 80.0);
        assert_eq!(episode_pnl(&[trade(80.0), trade(-20.0), trade(5.0)]), 65.0);
    }

    #[test]
    fn step_log_json_shape() {
        let mut env = worked_example_env();
        env.step(Action::Buy);
        env.step(Action::Hold);
        let r = env.step(Action::Sell);
        let line = serde_json::to_string(&env.log_entry(28, &r)).unwrap();
        assert_eq!(
            line,
            r#"{"t":28,"action":2,"L":0,"S":1,"immediate_reward":5.0,"accumulated_episode_pnl":5.0,"closed_trade":{"direction":"long","open_t":26,"close_t":28,"contracts":1,"long_term_pnl":80.0}}"#
        );
        let back: StepLogEntry = serde_json::from_str(&line).unwrap();
        assert_eq!(back.closed_trade.unwrap().long_term_pnl, 80.0);
    }

    #[test]
    fn action_codes() {
        for a in Action::ALL {
            assert_eq!(Action::try_from(a.code()).unwrap(), a);
        }
        assert!(Action::try_from(3).is_err());
    }
}
