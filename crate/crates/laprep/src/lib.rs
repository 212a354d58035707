//! Laplacian eigenfunction state representations for finite MDPs.
//!
//! The crate has three layers:
//!
//! - an exact layer ([`grid`], [`chain`]) that builds maze Markov chains and
//!   their dense spectral decomposition, used as ground truth;
//! - a stochastic layer ([`replay`], [`nn`], [`training`], [`eval`]) that
//!   learns the same eigenfunctions from sampled transitions by minimizing a
//!   penalized graph-drawing objective, and measures how close it got;
//! - an application layer ([`shaping`]) that uses a frozen learned embedding
//!   to shape rewards for a goal-reaching DQN agent.
//!
//! The `laprep` binary (see [`cli`]) orchestrates all of it behind
//! subcommands with seeded, reproducible outputs.

pub mod chain;
pub mod cli;
pub mod eval;
pub mod grid;
pub mod linalg;
pub mod nn;
pub mod replay;
pub mod rng;
pub mod shaping;
pub mod training;
