//! Online deep Q-learning trader over a financial Markov decision process.
//!
//! * [`market`]: price ingestion, indicators and causal feature scaling.
//! * [`env`]: position state machine, rewards and per-trade PnL accounting.
//! * [`qnet`]: recurrent Q-network with hand-written backpropagation and Adam.
//! * [`agent`]: epsilon-greedy control, replay memory and the online loop.
//! * [`backtest`]: equity curve, Sharpe, win ratio, drawdown and reports.

pub mod agent;
pub mod backtest;
pub mod env;
pub mod market;
pub mod qnet;
