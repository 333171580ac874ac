//! Tax-aware stock trading simulation.
//!
//! - [`ledger`]: average-basis capital gains ledger
//! - [`market`]: price series, CSV ingestion, episode windows
//! - [`env`]: the trading MDP
//! - [`nn`]: MLP policy/value networks with manual backprop and Adam
//! - [`ppo`]: clipped-surrogate PPO with GAE
//! - [`eval`]: evaluation and cross-evaluation harness

pub mod ledger;
pub mod market;
pub mod env;
pub mod nn;
pub mod ppo;
pub mod eval;
