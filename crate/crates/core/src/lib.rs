//! Throughput-optimal link selection for a buffered two-hop relay.
//!
//! The relay decides each slot whether to receive from the source or
//! forward to the destination. With greedy rates the optimal rule is a
//! queue threshold. This crate finds it four ways that check each other:
//!
//! * [`mdp`]: relative value iteration and policy iteration on the
//!   average-reward Bellman equation,
//! * [`chain`]: a sweep over thresholds on the queue Markov chain with
//!   rank-one inverse updates,
//! * [`symmetric`]: closed forms when both hops look alike,
//! * [`sim`]: seeded Monte Carlo.

pub mod bench;
pub mod chain;
pub mod csv;
pub mod error;
pub mod linalg;
pub mod mdp;
pub mod model;
pub mod sim;
pub mod symmetric;

pub use error::{Error, Result};
pub use model::{
    optimal_rates, select_action, step_queue, ChannelState, ControlAction, PolicySpec, RawConfig,
    SystemConfig,
};
