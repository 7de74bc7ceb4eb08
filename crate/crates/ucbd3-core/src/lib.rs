// Markets are small dense matrices indexed by (agent, arm); plain index
// loops over them read better than iterator chains here.
#![allow(clippy::needless_range_loop)]

//! Simulator and analysis toolkit for decentralized competing bandits in
//! serial-dictatorship matching markets.
//!
//! `N` agents repeatedly propose to `K >= N` arms. Every arm prefers agents
//! in the same fixed rank order, so each round an arm matches its
//! highest-ranked proposer and blocks the rest; blocked agents are notified
//! and earn nothing. Agents do not know their own reward means (nor their
//! rank) and must learn both while competing.
//!
//! The crate provides:
//!
//! * [`market`] — instances, the unique stable matching, reward gaps,
//!   optimal-stability classification, and seeded instance generators;
//! * [`env`] — the simultaneous-round matching environment with per
//!   (agent, arm) reward streams;
//! * [`phase`] — the shared phase/block schedule all agents derive from the
//!   global clock;
//! * [`ucbd3`] — the UCB-D3 agent: rank estimation, phased UCB play over an
//!   active arm set, collision-encoded broadcast of each agent's estimated
//!   best arm, and non-monotone dominated-arm deletion;
//! * [`baselines`] — centralized UCB, staggered explore-then-commit, naive
//!   independent UCB, and a greedy defector;
//! * [`sim`] — lockstep single-run execution and the paired-run deviation
//!   harness;
//! * [`analysis`] — regret accounting, confidence intervals, Bernoulli KL
//!   numerics, and closed-form regret bound calculators.

pub mod analysis;
pub mod baselines;
pub mod env;
pub mod market;
pub mod phase;
pub mod sim;
pub mod ucbd3;

/// Agent index, `0..N`. The agent at index `j` has rank `j + 1`; lower index
/// means higher rank, and index 0 is never blocked.
pub type AgentId = usize;

/// Arm index, `0..K`.
pub type ArmId = usize;

pub use analysis::{BoundReport, MetricSeries};
pub use env::{AgentOutcome, RewardSampler, RoundFeedback};
pub use market::{GapTable, Instance, InstanceError, StableMatch};
pub use sim::{AlgorithmKind, RunRecord, RunSpec};
